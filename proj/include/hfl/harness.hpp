#pragma once

// Experiment orchestration: build datasets and devices from a RunConfig,
// dispatch runs by algorithm and workload, and drive the gen / run /
// compare / sweep commands, emitting CSV metrics and JSON summaries.
//
// Everything an algorithm consumes (partition, delays, model init, batch
// order) comes from named substreams of the root seed, so algorithms run
// against byte-identical inputs inside one compare invocation; the summary
// records a partition checksum per run as evidence.

#include <algorithm>
#include <cinttypes>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "hfl/config.hpp"
#include "hfl/csv.hpp"
#include "hfl/datagen.hpp"
#include "hfl/dataset.hpp"
#include "hfl/errors.hpp"
#include "hfl/flcore.hpp"
#include "hfl/sim.hpp"
#include "hfl/workloads.hpp"

namespace hfl {

struct ExperimentData {
    std::vector<Dataset> shards;
    Dataset test;
    Dataset pooled;
};

namespace detail {

inline std::string device_file_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "device_%04zu.bin", i);
    return buf;
}

} // namespace detail

inline SyntheticSpec synthetic_spec_from(const RunConfig& cfg) {
    SyntheticSpec spec;
    spec.gamma = cfg.data.gamma;
    spec.xi = cfg.data.xi;
    spec.num_devices = std::size_t(cfg.num_devices);
    spec.d = cfg.data.d;
    spec.num_classes = cfg.data.classes;
    spec.power_exponent = cfg.data.power_exponent;
    spec.min_samples = cfg.data.min_samples;
    spec.total_samples = cfg.data.total_samples;
    spec.cov_exponent = cfg.data.cov_exponent;
    spec.iid_mode = cfg.data.iid;
    spec.seed = cfg.seed;
    return spec;
}

inline ExperimentData build_experiment_data(const RunConfig& cfg) {
    ExperimentData data;
    if (cfg.data.source == "synthetic") {
        SyntheticOutput out = gen_synthetic(synthetic_spec_from(cfg));
        data.shards = std::move(out.devices);
        data.test = std::move(out.test);
    } else if (cfg.data.source == "idx") {
        Dataset train = load_idx(cfg.data.images, cfg.data.labels);
        data.test = load_idx(cfg.data.test_images, cfg.data.test_labels);
        std::size_t c = std::max(train.num_classes, data.test.num_classes);
        train.num_classes = c;
        data.test.num_classes = c;
        PartitionPlan plan = partition_powerlaw_labels(
            train, std::size_t(cfg.num_devices), cfg.data.labels_per_device, cfg.seed,
            cfg.data.power_exponent, cfg.data.min_samples);
        data.shards = materialize(train, plan);
    } else { // dir: shards previously written by the gen command
        namespace fs = std::filesystem;
        fs::path dir(cfg.data.dir);
        std::ifstream meta_in(dir / "meta.json");
        if (!meta_in) throw DataError((dir / "meta.json").string() + ": cannot open");
        nlohmann::json meta;
        try {
            meta_in >> meta;
        } catch (const nlohmann::json::exception& e) {
            throw DataError((dir / "meta.json").string() + ": " + e.what());
        }
        auto n = meta.at("num_devices").get<std::size_t>();
        for (std::size_t i = 0; i < n; ++i) {
            data.shards.push_back(load_dataset((dir / detail::device_file_name(i)).string()));
        }
        data.test = load_dataset((dir / "test.bin").string());
    }
    data.pooled = pool_shards(data.shards);
    if (data.test.feature_dim != data.pooled.feature_dim) {
        throw DataError("test set feature dimension does not match training shards");
    }
    return data;
}

// Devices with weights proportional to shard size and delays drawn from the
// "delays" stream; identical for every algorithm under one (config, seed).
inline std::vector<DeviceState> build_devices(const RunConfig& cfg, const ExperimentData& data) {
    std::vector<DeviceState> devices = make_devices(data.shards);
    auto delay_gen = substream(cfg.seed, "delays");
    assign_delays(devices, cfg.hyper.tau_max, cfg.straggler_fraction, delay_gen);
    return devices;
}

// Witness that two runs saw the same partition and delay assignment: hashes
// shard sizes, delays, and every sample label, per device in id order.
inline std::string partition_checksum(const std::vector<DeviceState>& devices) {
    Fnv1a h;
    h.add_u64(devices.size());
    for (const DeviceState& d : devices) {
        h.add_u64(std::uint64_t(d.shard->size()));
        h.add_u64(std::uint64_t(d.tau));
        h.add_u64(d.shard->feature_dim);
        for (int y : d.shard->labels) h.add_u64(std::uint64_t(y));
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, h.state);
    return buf;
}

// ---------------------------------------------------------------------------
// Run dispatch.

template <class Fn>
auto with_workload(const RunConfig& cfg, const ExperimentData& data, Fn&& fn) {
    const std::size_t d = data.pooled.feature_dim;
    const std::size_t c = data.pooled.num_classes;
    if (cfg.workload == "logistic") {
        return fn(LogisticWorkload{d, c, cfg.reg_epsilon});
    }
    return fn(MlpWorkload{d, cfg.mlp_hidden, c, cfg.reg_epsilon});
}

template <class Workload>
RunResult run_algo(const Workload& wl, const RunConfig& cfg, const ExperimentData& data,
                   const std::vector<DeviceState>& devices, const UpdateObserver& observer) {
    Simulator<Workload> sim;
    sim.workload = wl;
    sim.devices = devices;
    sim.pooled_train = &data.pooled;
    sim.test = &data.test;
    sim.hyper = cfg.hyper;
    sim.seed = cfg.seed;
    sim.eval_every = cfg.eval_every;
    sim.observer = observer;
    if (cfg.algo == "hfl") return sim.run_hfl();
    if (cfg.algo == "fedavg") return sim.run_fedavg(cfg.k, cfg.fedavg_charge_wait);
    if (cfg.algo == "fedprox") {
        return sim.run_fedprox(cfg.k, cfg.mu_prox, cfg.fedprox_straggler_fraction);
    }
    if (cfg.algo == "ssgd") return sim.run_ssgd();
    throw ConfigError("unknown algo: " + cfg.algo);
}

inline RunResult execute_run(const RunConfig& cfg, const ExperimentData& data,
                             const std::vector<DeviceState>& devices,
                             const UpdateObserver& observer = {}) {
    return with_workload(cfg, data, [&](const auto& wl) {
        return run_algo(wl, cfg, data, devices, observer);
    });
}

inline double median(std::vector<double> v) {
    if (v.empty()) throw ConfigError("median of empty set");
    std::sort(v.begin(), v.end());
    std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

// ---------------------------------------------------------------------------
// Commands. Each returns the paths it wrote (for logging by the CLI).

inline std::vector<std::string> cmd_gen(const RunConfig& cfg) {
    if (cfg.data.source != "synthetic") {
        throw ConfigError("gen requires data.source=synthetic");
    }
    namespace fs = std::filesystem;
    SyntheticOutput out = gen_synthetic(synthetic_spec_from(cfg));
    fs::path dir(cfg.out);
    fs::create_directories(dir);
    std::vector<std::string> written;
    std::size_t total_train = 0;
    for (std::size_t i = 0; i < out.devices.size(); ++i) {
        std::string path = (dir / detail::device_file_name(i)).string();
        save_dataset(out.devices[i], path);
        written.push_back(path);
        total_train += out.devices[i].size();
    }
    std::string test_path = (dir / "test.bin").string();
    save_dataset(out.test, test_path);
    written.push_back(test_path);

    nlohmann::json meta;
    meta["spec_version"] = "1";
    meta["num_devices"] = out.devices.size();
    meta["d"] = cfg.data.d;
    meta["classes"] = cfg.data.classes;
    meta["gamma"] = cfg.data.gamma;
    meta["xi"] = cfg.data.xi;
    meta["iid"] = cfg.data.iid;
    meta["seed"] = cfg.seed;
    meta["device_sizes"] = out.device_sizes;
    meta["total_train"] = total_train;
    meta["total_test"] = out.test.size();
    std::string meta_path = (dir / "meta.json").string();
    write_text_atomic(meta_path, meta.dump(2) + "\n");
    written.push_back(meta_path);
    return written;
}

inline std::vector<std::string> cmd_run(const RunConfig& cfg, std::string* report = nullptr) {
    ExperimentData data = build_experiment_data(cfg);
    std::vector<DeviceState> devices = build_devices(cfg, data);
    RunResult res = execute_run(cfg, data, devices);
    std::string path = (std::filesystem::path(cfg.out) / (cfg.algo + ".csv")).string();
    emit_csv(res.logs, path);

    if (report) {
        const RoundLog& last = res.logs.back();
        std::ostringstream msg;
        msg << "algo=" << cfg.algo << " rounds=" << cfg.hyper.rounds
            << " final_round=" << last.round << " final_loss=" << fmt_g9(last.train_loss)
            << " final_acc=" << fmt_g9(last.test_acc) << " dropped=" << res.dropped_arrivals;
        if (cfg.diagnostics) {
            msg << "\npsi1=" << fmt_g9(res.psi1) << " psi2=" << fmt_g9(res.psi2)
                << " partition_checksum=" << partition_checksum(devices);
            with_workload(cfg, data, [&](const auto& wl) {
                auto gen = substream(cfg.seed, "init");
                ParamVector w0 = wl.init_params(gen);
                try {
                    msg << "\ndissimilarity_at_init="
                        << fmt_g9(estimate_dissimilarity(wl, devices, w0));
                } catch (const ProtocolError& e) {
                    msg << "\ndissimilarity_at_init=unavailable (" << e.what() << ")";
                }
            });
            if (auto rep = lr_bound_check(cfg.theory, res.psi1, res.psi2, cfg.hyper)) {
                msg << "\nconvex_bound_ok=" << (rep->convex_ok ? "true" : "false")
                    << " tightest_t=" << rep->convex_tightest_t
                    << " bound_at_tightest=" << fmt_g9(rep->convex_bound_at_tightest)
                    << " eta_at_tightest=" << fmt_g9(rep->eta_at_tightest)
                    << "\nnonconvex_bound_ok=" << (rep->nonconvex_ok ? "true" : "false")
                    << " nonconvex_bound=" << fmt_g9(rep->nonconvex_bound)
                    << " eta_max=" << fmt_g9(rep->eta_max);
            } else {
                msg << "\nlr_bound_check=unavailable (set theory.L, theory.mu, theory.B)";
            }
        }
        *report = msg.str();
    }
    return {path};
}

inline std::vector<std::string> cmd_compare(const RunConfig& base,
                                            const std::vector<std::string>& algos,
                                            const std::vector<std::uint64_t>& seeds) {
    if (algos.empty()) throw ConfigError("compare: no algorithms given");
    if (seeds.empty()) throw ConfigError("compare: no seeds given");
    namespace fs = std::filesystem;
    std::vector<std::string> written;

    nlohmann::json summary;
    summary["spec_version"] = "1";
    summary["command"] = "compare";
    summary["seeds"] = seeds;
    summary["algos"] = algos;
    // The output directory is where this file already lives; embedding it
    // would make otherwise-identical runs differ byte for byte.
    nlohmann::json cfg_json = config_to_json(base);
    cfg_json.erase("out");
    summary["config"] = cfg_json;
    nlohmann::json per_algo = nlohmann::json::object();
    for (const std::string& algo : algos) {
        per_algo[algo] = {{"runs", nlohmann::json::array()}};
    }

    for (std::uint64_t seed : seeds) {
        RunConfig cfg = base;
        cfg.seed = seed;
        cfg.validate();
        ExperimentData data = build_experiment_data(cfg);
        std::vector<DeviceState> devices = build_devices(cfg, data);
        std::string checksum = partition_checksum(devices);
        for (const std::string& algo : algos) {
            RunConfig run_cfg = cfg;
            run_cfg.algo = algo;
            run_cfg.validate();
            RunResult res;
            try {
                res = execute_run(run_cfg, data, devices);
            } catch (const ConfigError& e) {
                throw ConfigError(algo + ": " + e.what());
            } catch (const std::runtime_error& e) {
                throw ProtocolError(algo + ": " + e.what());
            }
            std::string name =
                seeds.size() == 1 ? algo + ".csv" : algo + "_seed" + std::to_string(seed) + ".csv";
            std::string path = (fs::path(cfg.out) / name).string();
            emit_csv(res.logs, path);
            written.push_back(path);

            const RoundLog& last = res.logs.back();
            double best_acc = 0.0;
            for (const RoundLog& log : res.logs) best_acc = std::max(best_acc, log.test_acc);
            per_algo[algo]["runs"].push_back({{"seed", seed},
                                              {"final_round", last.round},
                                              {"final_acc", last.test_acc},
                                              {"best_acc", best_acc},
                                              {"final_loss", last.train_loss},
                                              {"dropped_arrivals", res.dropped_arrivals},
                                              {"psi1", res.psi1},
                                              {"psi2", res.psi2},
                                              {"partition_checksum", checksum}});
        }
    }

    for (const std::string& algo : algos) {
        std::vector<double> finals, bests, losses;
        for (const auto& run : per_algo[algo]["runs"]) {
            finals.push_back(run.at("final_acc").get<double>());
            bests.push_back(run.at("best_acc").get<double>());
            losses.push_back(run.at("final_loss").get<double>());
        }
        per_algo[algo]["median_final_acc"] = median(finals);
        per_algo[algo]["median_best_acc"] = median(bests);
        per_algo[algo]["median_final_loss"] = median(losses);
    }
    summary["results"] = per_algo;

    std::string summary_path = (fs::path(base.out) / "summary.json").string();
    write_text_atomic(summary_path, summary.dump(2) + "\n");
    written.push_back(summary_path);
    return written;
}

// One run per (value, seed); raw metrics per run plus mean/min/max aggregate
// rows per value. plot_rounds additionally emits every logged round in long
// format for plotting.
inline std::vector<std::string> cmd_sweep(const RunConfig& base, const std::string& param,
                                          const std::vector<std::string>& values,
                                          const std::vector<std::uint64_t>& seeds,
                                          bool plot_rounds) {
    if (param != "lambda0" && param != "tau_max") {
        throw ConfigError("sweep: param must be lambda0 or tau_max, got '" + param + "'");
    }
    if (values.empty()) throw ConfigError("sweep: no values given");
    if (seeds.empty()) throw ConfigError("sweep: no seeds given");

    std::string raw = "param,value,seed,final_acc,best_acc,final_loss\n";
    std::string agg = "param,value,mean_final_acc,min_final_acc,max_final_acc,mean_final_loss\n";
    std::string rounds = "param,value,seed,round,train_loss,test_acc\n";

    for (const std::string& value : values) {
        std::vector<double> finals, losses;
        for (std::uint64_t seed : seeds) {
            RunConfig cfg = base;
            cfg.seed = seed;
            apply_config_kv(cfg, param, value);
            cfg.validate();
            ExperimentData data = build_experiment_data(cfg);
            std::vector<DeviceState> devices = build_devices(cfg, data);
            RunResult res = execute_run(cfg, data, devices);
            const RoundLog& last = res.logs.back();
            double best_acc = 0.0;
            for (const RoundLog& log : res.logs) {
                best_acc = std::max(best_acc, log.test_acc);
                if (plot_rounds) {
                    rounds += param + ',' + value + ',' + std::to_string(seed) + ',' +
                              std::to_string(log.round) + ',' + fmt_g9(log.train_loss) + ',' +
                              fmt_g9(log.test_acc) + '\n';
                }
            }
            raw += param + ',' + value + ',' + std::to_string(seed) + ',' +
                   fmt_g9(last.test_acc) + ',' + fmt_g9(best_acc) + ',' +
                   fmt_g9(last.train_loss) + '\n';
            finals.push_back(last.test_acc);
            losses.push_back(last.train_loss);
        }
        double mean_acc = 0.0, mean_loss = 0.0;
        double min_acc = finals.front(), max_acc = finals.front();
        for (double a : finals) {
            mean_acc += a;
            min_acc = std::min(min_acc, a);
            max_acc = std::max(max_acc, a);
        }
        for (double l : losses) mean_loss += l;
        mean_acc /= double(finals.size());
        mean_loss /= double(losses.size());
        agg += param + ',' + value + ',' + fmt_g9(mean_acc) + ',' + fmt_g9(min_acc) + ',' +
               fmt_g9(max_acc) + ',' + fmt_g9(mean_loss) + '\n';
    }

    namespace fs = std::filesystem;
    std::vector<std::string> written;
    std::string raw_path = (fs::path(base.out) / "sweep_raw.csv").string();
    write_text_atomic(raw_path, raw);
    written.push_back(raw_path);
    std::string agg_path = (fs::path(base.out) / "sweep_summary.csv").string();
    write_text_atomic(agg_path, agg);
    written.push_back(agg_path);
    if (plot_rounds) {
        std::string rounds_path = (fs::path(base.out) / "sweep_rounds.csv").string();
        write_text_atomic(rounds_path, rounds);
        written.push_back(rounds_path);
    }
    return written;
}

} // namespace hfl
