#pragma once

// Run configuration. One flat dotted-key namespace is shared by key=value
// config files, JSON config files, CLI flag overrides, emitted echoes, and
// summary output. A single table below defines every key's parser, emitter,
// and JSON type, so all of those agree by construction and the
// parse(emit(defaults)) round-trip is stable.
//
// Precedence: defaults < config file < CLI flags < HFL_OUT_DIR (output
// directory only).

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "hfl/datagen.hpp"
#include "hfl/errors.hpp"
#include "hfl/flcore.hpp"

namespace hfl {

struct DataConfig {
    std::string source = "synthetic"; // synthetic | idx | dir
    double gamma = 0.0;
    double xi = 0.0;
    bool iid = false;
    std::size_t d = 60;
    std::size_t classes = 10;
    std::size_t total_samples = 0; // 0 = auto
    std::size_t min_samples = 32;
    double power_exponent = 1.5;
    double cov_exponent = 1.2;
    std::size_t labels_per_device = 2;
    std::string images, labels, test_images, test_labels; // idx source
    std::string dir;                                      // pre-generated shard dir
};

struct RunConfig {
    std::string algo = "hfl";          // hfl | fedavg | fedprox | ssgd
    std::string workload = "logistic"; // logistic | mlp
    int num_devices = 100;
    double straggler_fraction = 0.5;
    int k = 10; // devices sampled per baseline aggregation
    double mu_prox = 0.01;
    double fedprox_straggler_fraction = 0.9;
    bool fedavg_charge_wait = true;
    std::uint64_t seed = 1;
    std::string out = "out";
    int eval_every = 1;
    std::size_t mlp_hidden = 32;
    double reg_epsilon = 1e-4;
    bool diagnostics = false;
    HyperParams hyper;
    DataConfig data;
    TheoryConstants theory;

    void validate() const {
        hyper.validate();
        theory.validate();
        auto one_of = [](const std::string& v, std::initializer_list<const char*> allowed,
                         const char* key) {
            for (const char* a : allowed) {
                if (v == a) return;
            }
            std::string msg = std::string(key) + " must be one of {";
            bool first = true;
            for (const char* a : allowed) {
                if (!first) msg += ", ";
                msg += a;
                first = false;
            }
            throw ConfigError(msg + "}, got '" + v + "'");
        };
        one_of(algo, {"hfl", "fedavg", "fedprox", "ssgd"}, "algo");
        one_of(workload, {"logistic", "mlp"}, "workload");
        one_of(data.source, {"synthetic", "idx", "dir"}, "data.source");
        if (num_devices < 1) throw ConfigError("num_devices must be >= 1");
        if (straggler_fraction < 0.0 || straggler_fraction > 1.0) {
            throw ConfigError("straggler_fraction must be in [0, 1]");
        }
        if (k < 1) throw ConfigError("k must be >= 1");
        if (mu_prox < 0.0) throw ConfigError("mu_prox must be >= 0");
        if (fedprox_straggler_fraction < 0.0 || fedprox_straggler_fraction > 1.0) {
            throw ConfigError("fedprox_straggler_fraction must be in [0, 1]");
        }
        if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
        if (mlp_hidden < 1) throw ConfigError("mlp_hidden must be >= 1");
        if (reg_epsilon < 0.0) throw ConfigError("reg_epsilon must be >= 0");
        if (data.gamma < 0.0 || data.xi < 0.0) {
            throw ConfigError("data.gamma and data.xi must be >= 0");
        }
        if (data.d < 1) throw ConfigError("data.d must be >= 1");
        if (data.classes < 2) throw ConfigError("data.classes must be >= 2");
        if (data.min_samples < 1) throw ConfigError("data.min_samples must be >= 1");
        if (data.labels_per_device < 1) throw ConfigError("data.labels_per_device must be >= 1");
        if (data.power_exponent <= 0.0) throw ConfigError("data.power_exponent must be > 0");
        if (data.source == "idx" &&
            (data.images.empty() || data.labels.empty() || data.test_images.empty() ||
             data.test_labels.empty())) {
            throw ConfigError("data.source=idx requires data.images, data.labels, "
                              "data.test_images, data.test_labels");
        }
        if (data.source == "dir" && data.dir.empty()) {
            throw ConfigError("data.source=dir requires data.dir");
        }
    }
};

// ---------------------------------------------------------------------------
// Parsing primitives. Each rejects trailing garbage and names the offending
// key.

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_real(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a real number, got '" + v + "'");
    }
}

inline long long parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected an integer, got '" + v + "'");
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        unsigned long long x = std::stoull(v, &used);
        if (used != v.size() || v.find('-') != std::string::npos) {
            throw std::invalid_argument(v);
        }
        return x;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a nonnegative integer, got '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true/false, got '" + v + "'");
}

inline std::string format_real(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

} // namespace detail

// ---------------------------------------------------------------------------
// The key table.

struct ConfigKey {
    const char* key;
    char kind; // i=int, u=unsigned, r=real, b=bool, s=string
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

inline const std::vector<ConfigKey>& config_keys() {
    using detail::format_real;
    using detail::parse_bool;
    using detail::parse_int;
    using detail::parse_real;
    using detail::parse_u64;

    auto real_key = [](const char* key, double RunConfig::* member) {
        return ConfigKey{key, 'r',
                         [key, member](RunConfig& c, const std::string& v) {
                             c.*member = parse_real(key, v);
                         },
                         [member](const RunConfig& c) { return format_real(c.*member); }};
    };
    auto data_real = [](const char* key, double DataConfig::* member) {
        return ConfigKey{key, 'r',
                         [key, member](RunConfig& c, const std::string& v) {
                             c.data.*member = parse_real(key, v);
                         },
                         [member](const RunConfig& c) { return format_real(c.data.*member); }};
    };
    auto data_size = [](const char* key, std::size_t DataConfig::* member) {
        return ConfigKey{key, 'u',
                         [key, member](RunConfig& c, const std::string& v) {
                             c.data.*member = std::size_t(parse_u64(key, v));
                         },
                         [member](const RunConfig& c) {
                             return std::to_string(c.data.*member);
                         }};
    };
    auto data_str = [](const char* key, std::string DataConfig::* member) {
        return ConfigKey{key, 's',
                         [member](RunConfig& c, const std::string& v) { c.data.*member = v; },
                         [member](const RunConfig& c) { return c.data.*member; }};
    };
    auto theory_key = [](const char* key, std::optional<double> TheoryConstants::* member) {
        return ConfigKey{key, 'r',
                         [key, member](RunConfig& c, const std::string& v) {
                             if (v.empty()) c.theory.*member = std::nullopt;
                             else c.theory.*member = parse_real(key, v);
                         },
                         [member](const RunConfig& c) {
                             return c.theory.*member ? format_real(*(c.theory.*member))
                                                     : std::string();
                         }};
    };

    static const std::vector<ConfigKey> keys = {
        {"algo", 's', [](RunConfig& c, const std::string& v) { c.algo = v; },
         [](const RunConfig& c) { return c.algo; }},
        {"workload", 's', [](RunConfig& c, const std::string& v) { c.workload = v; },
         [](const RunConfig& c) { return c.workload; }},
        {"num_devices", 'i',
         [](RunConfig& c, const std::string& v) { c.num_devices = int(parse_int("num_devices", v)); },
         [](const RunConfig& c) { return std::to_string(c.num_devices); }},
        {"rounds", 'i',
         [](RunConfig& c, const std::string& v) { c.hyper.rounds = int(parse_int("rounds", v)); },
         [](const RunConfig& c) { return std::to_string(c.hyper.rounds); }},
        {"epochs", 'i',
         [](RunConfig& c, const std::string& v) { c.hyper.epochs = int(parse_int("epochs", v)); },
         [](const RunConfig& c) { return std::to_string(c.hyper.epochs); }},
        {"batch_size", 'i',
         [](RunConfig& c, const std::string& v) {
             c.hyper.batch_size = int(parse_int("batch_size", v));
         },
         [](const RunConfig& c) { return std::to_string(c.hyper.batch_size); }},
        {"eta0", 'r',
         [](RunConfig& c, const std::string& v) { c.hyper.eta0 = parse_real("eta0", v); },
         [](const RunConfig& c) { return format_real(c.hyper.eta0); }},
        {"lr_decay", 's',
         [](RunConfig& c, const std::string& v) {
             if (v == "inv_linear") c.hyper.decay = LrDecay::inv_linear;
             else if (v == "constant") c.hyper.decay = LrDecay::constant;
             else throw ConfigError("lr_decay must be inv_linear or constant, got '" + v + "'");
         },
         [](const RunConfig& c) {
             return c.hyper.decay == LrDecay::inv_linear ? "inv_linear" : "constant";
         }},
        {"lambda0", 'r',
         [](RunConfig& c, const std::string& v) { c.hyper.lambda0 = parse_real("lambda0", v); },
         [](const RunConfig& c) { return format_real(c.hyper.lambda0); }},
        {"lambda_rate", 'r',
         [](RunConfig& c, const std::string& v) {
             c.hyper.lambda_rate = parse_real("lambda_rate", v);
         },
         [](const RunConfig& c) { return format_real(c.hyper.lambda_rate); }},
        {"tau_max", 'i',
         [](RunConfig& c, const std::string& v) { c.hyper.tau_max = int(parse_int("tau_max", v)); },
         [](const RunConfig& c) { return std::to_string(c.hyper.tau_max); }},
        {"merge_mode", 's',
         [](RunConfig& c, const std::string& v) {
             if (v == "drop_pi") c.hyper.merge_mode = MergeMode::drop_pi;
             else if (v == "renorm_pi") c.hyper.merge_mode = MergeMode::renorm_pi;
             else throw ConfigError("merge_mode must be drop_pi or renorm_pi, got '" + v + "'");
         },
         [](const RunConfig& c) {
             return c.hyper.merge_mode == MergeMode::drop_pi ? "drop_pi" : "renorm_pi";
         }},
        {"comp_factor", 's',
         [](RunConfig& c, const std::string& v) {
             if (v == "accum") c.hyper.comp_factor = CompFactor::accum;
             else if (v == "last_step") c.hyper.comp_factor = CompFactor::last_step;
             else throw ConfigError("comp_factor must be accum or last_step, got '" + v + "'");
         },
         [](const RunConfig& c) {
             return c.hyper.comp_factor == CompFactor::accum ? "accum" : "last_step";
         }},
        real_key("straggler_fraction", &RunConfig::straggler_fraction),
        {"k", 'i', [](RunConfig& c, const std::string& v) { c.k = int(parse_int("k", v)); },
         [](const RunConfig& c) { return std::to_string(c.k); }},
        real_key("mu_prox", &RunConfig::mu_prox),
        real_key("fedprox_straggler_fraction", &RunConfig::fedprox_straggler_fraction),
        {"fedavg_charge_wait", 'b',
         [](RunConfig& c, const std::string& v) {
             c.fedavg_charge_wait = parse_bool("fedavg_charge_wait", v);
         },
         [](const RunConfig& c) { return c.fedavg_charge_wait ? "true" : "false"; }},
        {"seed", 'u',
         [](RunConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
         [](const RunConfig& c) { return std::to_string(c.seed); }},
        {"out", 's', [](RunConfig& c, const std::string& v) { c.out = v; },
         [](const RunConfig& c) { return c.out; }},
        {"eval_every", 'i',
         [](RunConfig& c, const std::string& v) {
             c.eval_every = int(parse_int("eval_every", v));
         },
         [](const RunConfig& c) { return std::to_string(c.eval_every); }},
        {"mlp_hidden", 'u',
         [](RunConfig& c, const std::string& v) {
             c.mlp_hidden = std::size_t(parse_u64("mlp_hidden", v));
         },
         [](const RunConfig& c) { return std::to_string(c.mlp_hidden); }},
        real_key("reg_epsilon", &RunConfig::reg_epsilon),
        {"diagnostics", 'b',
         [](RunConfig& c, const std::string& v) { c.diagnostics = parse_bool("diagnostics", v); },
         [](const RunConfig& c) { return c.diagnostics ? "true" : "false"; }},
        data_str("data.source", &DataConfig::source),
        data_real("data.gamma", &DataConfig::gamma),
        data_real("data.xi", &DataConfig::xi),
        {"data.iid", 'b',
         [](RunConfig& c, const std::string& v) { c.data.iid = parse_bool("data.iid", v); },
         [](const RunConfig& c) { return c.data.iid ? "true" : "false"; }},
        data_size("data.d", &DataConfig::d),
        data_size("data.classes", &DataConfig::classes),
        data_size("data.total_samples", &DataConfig::total_samples),
        data_size("data.min_samples", &DataConfig::min_samples),
        data_real("data.power_exponent", &DataConfig::power_exponent),
        data_real("data.cov_exponent", &DataConfig::cov_exponent),
        data_size("data.labels_per_device", &DataConfig::labels_per_device),
        data_str("data.images", &DataConfig::images),
        data_str("data.labels", &DataConfig::labels),
        data_str("data.test_images", &DataConfig::test_images),
        data_str("data.test_labels", &DataConfig::test_labels),
        data_str("data.dir", &DataConfig::dir),
        theory_key("theory.L", &TheoryConstants::L),
        theory_key("theory.mu", &TheoryConstants::mu),
        theory_key("theory.B", &TheoryConstants::B),
        theory_key("theory.G", &TheoryConstants::G),
        theory_key("theory.sigma", &TheoryConstants::sigma),
        theory_key("theory.L2", &TheoryConstants::L2),
    };
    return keys;
}

inline void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
    static const auto index = [] {
        std::unordered_map<std::string, const ConfigKey*> m;
        for (const ConfigKey& k : config_keys()) m[k.key] = &k;
        return m;
    }();
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("unknown config key: " + key);
    it->second->set(cfg, value);
}

// ---------------------------------------------------------------------------
// File input. key=value lines (# comments) or a JSON object, flat or nested;
// nested objects join with '.' into the same key namespace.

namespace detail {

inline void apply_json_object(RunConfig& cfg, const nlohmann::json& obj,
                              const std::string& prefix) {
    if (!obj.is_object()) {
        throw ConfigError("config JSON must be an object" +
                          (prefix.empty() ? "" : " at key " + prefix));
    }
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
        const nlohmann::json& v = it.value();
        if (v.is_object()) {
            apply_json_object(cfg, v, key);
        } else if (v.is_string()) {
            apply_config_kv(cfg, key, v.get<std::string>());
        } else if (v.is_boolean()) {
            apply_config_kv(cfg, key, v.get<bool>() ? "true" : "false");
        } else if (v.is_number() || v.is_null()) {
            apply_config_kv(cfg, key, v.is_null() ? "" : v.dump());
        } else {
            throw ConfigError(key + ": unsupported JSON value type");
        }
    }
}

} // namespace detail

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config file not found: " + path);
    if (path.size() >= 5 && path.substr(path.size() - 5) == ".json") {
        nlohmann::json obj;
        try {
            in >> obj;
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(path + ": JSON parse error: " + e.what());
        }
        detail::apply_json_object(cfg, obj, "");
        return;
    }
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string s = detail::trim(line);
        if (s.empty() || s[0] == '#') continue;
        std::size_t eq = s.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key=value");
        }
        apply_config_kv(cfg, detail::trim(s.substr(0, eq)), detail::trim(s.substr(eq + 1)));
    }
}

// Assembles a config from an optional file plus flag overrides, then applies
// the output-directory env override and validates.
inline RunConfig parse_config(const std::string& file_path,
                              const std::vector<std::pair<std::string, std::string>>& overrides) {
    RunConfig cfg;
    if (!file_path.empty()) apply_config_file(cfg, file_path);
    for (const auto& [key, value] : overrides) apply_config_kv(cfg, key, value);
    if (const char* env_out = std::getenv("HFL_OUT_DIR"); env_out && *env_out) {
        cfg.out = env_out;
    }
    cfg.validate();
    return cfg;
}

inline std::string emit_config(const RunConfig& cfg) {
    std::ostringstream out;
    for (const ConfigKey& k : config_keys()) out << k.key << "=" << k.get(cfg) << "\n";
    return out.str();
}

// Typed JSON echo of the full configuration (unset optionals become null).
inline nlohmann::json config_to_json(const RunConfig& cfg) {
    nlohmann::json out = nlohmann::json::object();
    for (const ConfigKey& k : config_keys()) {
        std::string v = k.get(cfg);
        if (v.empty() && k.kind != 's') {
            out[k.key] = nullptr;
        } else {
            switch (k.kind) {
            case 'i': out[k.key] = std::stoll(v); break;
            case 'u': out[k.key] = std::stoull(v); break;
            case 'r': out[k.key] = std::stod(v); break;
            case 'b': out[k.key] = (v == "true"); break;
            default: out[k.key] = v; break;
            }
        }
    }
    return out;
}

} // namespace hfl
