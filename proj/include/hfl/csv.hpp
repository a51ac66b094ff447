#pragma once

// Metric emission. The CSV schema is frozen:
//
//     round,algo,train_loss,test_acc,eta,sync_updates,async_merges,lambda_mean
//
// one row per logged round, reals printed with 9 significant digits, LF line
// endings. lambda_mean is the mean merge weight applied that round and is
// EMPTY (not 0) on rounds without merges. All files are written to a temp
// path and renamed into place.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "hfl/errors.hpp"
#include "hfl/sim.hpp"

namespace hfl {

inline std::string fmt_g9(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", x);
    return buf;
}

inline void write_text_atomic(const std::string& path, const std::string& content) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw DataError(tmp + ": cannot open for write");
        out << content;
        if (!out) throw DataError(tmp + ": write failed");
    }
    std::filesystem::rename(tmp, path);
}

inline std::string render_csv(const std::vector<RoundLog>& logs) {
    if (logs.empty()) throw ProtocolError("render_csv: no logs");
    std::string out = "round,algo,train_loss,test_acc,eta,sync_updates,async_merges,lambda_mean\n";
    for (const RoundLog& log : logs) {
        out += std::to_string(log.round);
        out += ',';
        out += log.algo;
        out += ',';
        out += fmt_g9(log.train_loss);
        out += ',';
        out += fmt_g9(log.test_acc);
        out += ',';
        out += fmt_g9(log.eta);
        out += ',';
        out += std::to_string(log.sync_updates);
        out += ',';
        out += std::to_string(log.async_merges);
        out += ',';
        if (!log.lambdas.empty()) {
            double sum = 0.0;
            for (double l : log.lambdas) sum += l;
            out += fmt_g9(sum / double(log.lambdas.size()));
        }
        out += '\n';
    }
    return out;
}

inline void emit_csv(const std::vector<RoundLog>& logs, const std::string& path) {
    write_text_atomic(path, render_csv(logs));
}

} // namespace hfl
