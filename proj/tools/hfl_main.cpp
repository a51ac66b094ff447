// Command-line front end.
//
//   hfl gen     [flags]                         write synthetic device shards
//   hfl run     [flags]                         single run, one metrics CSV
//   hfl compare [flags] --algos=a,b --seeds=... multi-algorithm comparison
//   hfl sweep   [flags] --param=... --values=.. parameter sweep
//
// Flags are --key=value with keys from the config table (see `hfl help`),
// plus --config=FILE to load a key=value or JSON file first. Exit codes:
// 0 success, 1 configuration or input error, 2 runtime protocol violation.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "hfl/config.hpp"
#include "hfl/errors.hpp"
#include "hfl/harness.hpp"

namespace {

const char* kUsage = R"(usage: hfl <command> [--config=FILE] [--key=value ...]

commands:
  gen       generate synthetic per-device datasets into --out
  run       execute one algorithm, write <out>/<algo>.csv
  compare   run several algorithms on identical data/delays
            flags: --algos=hfl,fedavg,fedprox,ssgd  --seeds=1,2,3
  sweep     sweep lambda0 or tau_max over a value grid
            flags: --param=lambda0 --values=0.1,0.5 --seeds=1,2 [--plot-data]
  keys      list every config key with its current default
  help      show this text

Any config key doubles as a flag, e.g. --rounds=100 --data.gamma=1.
--config accepts flat key=value files or JSON (flat or nested).
HFL_OUT_DIR, when set, overrides the output directory.
Exit codes: 0 success, 1 config/input error, 2 protocol violation.)";

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        if (ch == ',') {
            if (!cur.empty()) out.push_back(cur);
            cur.clear();
        } else {
            cur += ch;
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

struct CliArgs {
    std::string command;
    std::string config_file;
    std::vector<std::pair<std::string, std::string>> overrides;
    std::vector<std::string> algos;
    std::vector<std::uint64_t> seeds;
    std::string param;
    std::vector<std::string> values;
    bool plot_data = false;
};

CliArgs parse_cli(int argc, char** argv) {
    CliArgs args;
    if (argc < 2) throw hfl::ConfigError("missing command (try `hfl help`)");
    args.command = argv[1];
    for (int i = 2; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg.rfind("--", 0) != 0) {
            throw hfl::ConfigError("expected --flag, got '" + arg + "'");
        }
        std::string key, value;
        std::size_t eq = arg.find('=');
        if (eq != std::string::npos) {
            key = arg.substr(2, eq - 2);
            value = arg.substr(eq + 1);
        } else {
            key = arg.substr(2);
            if (key == "plot-data") {
                args.plot_data = true;
                continue;
            }
            if (i + 1 >= argc) throw hfl::ConfigError("--" + key + " needs a value");
            value = argv[++i];
        }
        if (key == "config") {
            args.config_file = value;
        } else if (key == "algos") {
            args.algos = split_list(value);
        } else if (key == "seeds") {
            args.seeds.clear();
            for (const std::string& s : split_list(value)) {
                args.seeds.push_back(hfl::detail::parse_u64("seeds", s));
            }
        } else if (key == "param") {
            args.param = value;
        } else if (key == "values") {
            args.values = split_list(value);
        } else if (key == "plot-data") {
            args.plot_data = hfl::detail::parse_bool("plot-data", value);
        } else {
            args.overrides.emplace_back(key, value);
        }
    }
    return args;
}

int dispatch(const CliArgs& args) {
    if (args.command == "help" || args.command == "--help" || args.command == "-h") {
        std::puts(kUsage);
        return 0;
    }
    if (args.command == "keys") {
        hfl::RunConfig defaults;
        std::fputs(hfl::emit_config(defaults).c_str(), stdout);
        return 0;
    }

    hfl::RunConfig cfg = hfl::parse_config(args.config_file, args.overrides);
    std::vector<std::string> written;
    std::string report;

    if (args.command == "gen") {
        written = hfl::cmd_gen(cfg);
    } else if (args.command == "run") {
        written = hfl::cmd_run(cfg, &report);
    } else if (args.command == "compare") {
        std::vector<std::string> algos =
            args.algos.empty() ? std::vector<std::string>{"hfl", "fedavg", "fedprox", "ssgd"}
                               : args.algos;
        std::vector<std::uint64_t> seeds =
            args.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : args.seeds;
        written = hfl::cmd_compare(cfg, algos, seeds);
    } else if (args.command == "sweep") {
        std::vector<std::uint64_t> seeds =
            args.seeds.empty() ? std::vector<std::uint64_t>{cfg.seed} : args.seeds;
        written = hfl::cmd_sweep(cfg, args.param, args.values, seeds, args.plot_data);
    } else {
        throw hfl::ConfigError("unknown command '" + args.command + "' (try `hfl help`)");
    }

    if (!report.empty()) std::puts(report.c_str());
    for (const std::string& path : written) std::printf("wrote %s\n", path.c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(parse_cli(argc, argv));
    } catch (const hfl::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const hfl::DataError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}
