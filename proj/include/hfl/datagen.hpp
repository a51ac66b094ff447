#pragma once

// Synthetic heterogeneous data generation and non-iid partitioning.
//
// gen_synthetic draws, per device i:
//     u_i ~ N(0, gamma);  W_i, b_i ~ N(u_i, 1)        (model heterogeneity)
//     B_i ~ N(0, xi);     v_i ~ N(B_i, 1)             (feature heterogeneity)
//     x ~ N(v_i, Sigma),  Sigma_jj = j^(-1.2) diagonal
//     y = argmax softmax(W_i^T x + b_i)
// so gamma spreads the per-device labelling models and xi spreads the
// per-device feature means. iid_mode shares one (W, b, v) across devices.
//
// Device sample counts follow a rank-based power law: ranks are a random
// permutation of 0..N-1 and device size is proportional to (rank+1)^(-a),
// clamped below by min_samples and rescaled to the requested total.
//
// Draw order within each stream is frozen (u, W row-major, b, B, v, then one
// d-vector per sample), so outputs are bit-stable across runs.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hfl/dataset.hpp"
#include "hfl/errors.hpp"
#include "hfl/linalg.hpp"
#include "hfl/rng.hpp"

namespace hfl {

struct SyntheticSpec {
    double gamma = 0.0;
    double xi = 0.0;
    std::size_t num_devices = 1;
    std::size_t d = 60;
    std::size_t num_classes = 10;
    double power_exponent = 1.5;
    std::size_t min_samples = 32;
    std::size_t total_samples = 0; // 0 = auto (425 per device)
    double cov_exponent = 1.2;     // Sigma_jj = j^(-cov_exponent)
    bool iid_mode = false;
    std::uint64_t seed = 1;

    void validate() const {
        if (num_devices < 1) throw ConfigError("synthetic spec: num_devices must be >= 1");
        if (gamma < 0 || xi < 0) throw ConfigError("synthetic spec: gamma and xi must be >= 0");
        if (d < 1) throw ConfigError("synthetic spec: d must be >= 1");
        if (num_classes < 2) throw ConfigError("synthetic spec: num_classes must be >= 2");
        if (min_samples < 1) throw ConfigError("synthetic spec: min_samples must be >= 1");
        if (power_exponent <= 0) throw ConfigError("synthetic spec: power_exponent must be > 0");
    }
};

// Generating parameters retained per device so labels can be re-audited
// after the fact.
struct DeviceGenParams {
    double u = 0.0;
    double big_b = 0.0;
    std::vector<double> w; // d x C, row-major
    std::vector<double> b; // C
    std::vector<double> v; // d
};

struct SyntheticOutput {
    std::vector<Dataset> devices;
    Dataset test;
    std::vector<DeviceGenParams> gen_params;
    std::vector<std::size_t> device_sizes;
};

namespace detail {

// Power-law sizes over a shuffled rank assignment. Total is a target, not an
// exact constraint: the minimum clamp can push the realised sum above it.
inline std::vector<std::size_t> powerlaw_sizes(std::size_t n, double exponent,
                                               std::size_t min_samples, std::size_t total,
                                               std::mt19937_64& gen) {
    std::vector<std::size_t> ranks(n);
    for (std::size_t i = 0; i < n; ++i) ranks[i] = i;
    shuffle(ranks, gen);
    double z = 0.0;
    for (std::size_t r = 0; r < n; ++r) z += std::pow(double(r + 1), -exponent);
    std::vector<std::size_t> sizes(n);
    for (std::size_t i = 0; i < n; ++i) {
        double w = std::pow(double(ranks[i] + 1), -exponent) / z;
        sizes[i] = std::max(min_samples, std::size_t(std::llround(double(total) * w)));
    }
    return sizes;
}

inline int synth_label(const std::vector<double>& w, const std::vector<double>& b,
                       const std::vector<double>& x) {
    const std::size_t d = x.size(), c = b.size();
    std::vector<double> z(b);
    for (std::size_t j = 0; j < d; ++j) {
        const double xj = x[j];
        for (std::size_t k = 0; k < c; ++k) z[k] += w[j * c + k] * xj;
    }
    return int(argmax(softmax(z)));
}

} // namespace detail

inline SyntheticOutput gen_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    const std::size_t n = spec.num_devices, d = spec.d, c = spec.num_classes;
    const std::size_t total = spec.total_samples ? spec.total_samples : 425 * n;

    std::vector<double> cov_std(d);
    for (std::size_t j = 0; j < d; ++j) {
        cov_std[j] = std::sqrt(std::pow(double(j + 1), -spec.cov_exponent));
    }

    auto size_gen = substream(spec.seed, "synth.sizes");
    SyntheticOutput out;
    out.device_sizes = detail::powerlaw_sizes(n, spec.power_exponent, spec.min_samples,
                                              total, size_gen);

    auto draw_params = [&](std::mt19937_64& gen) {
        DeviceGenParams p;
        p.u = gaussian(gen, 0.0, std::sqrt(spec.gamma));
        p.w.resize(d * c);
        for (double& x : p.w) x = gaussian(gen, p.u, 1.0);
        p.b.resize(c);
        for (double& x : p.b) x = gaussian(gen, p.u, 1.0);
        p.big_b = gaussian(gen, 0.0, std::sqrt(spec.xi));
        p.v.resize(d);
        for (double& x : p.v) x = gaussian(gen, p.big_b, 1.0);
        return p;
    };

    DeviceGenParams shared;
    if (spec.iid_mode) {
        auto shared_gen = substream(spec.seed, "synth.shared");
        shared = draw_params(shared_gen);
    }

    out.test.feature_dim = d;
    out.test.num_classes = c;
    std::vector<double> x(d);
    for (std::size_t i = 0; i < n; ++i) {
        auto gen = substream(spec.seed, "synth.device", i);
        DeviceGenParams p = spec.iid_mode ? shared : draw_params(gen);

        Dataset shard;
        shard.feature_dim = d;
        shard.num_classes = c;
        const std::size_t n_train = out.device_sizes[i];
        const std::size_t n_test = std::size_t(std::llround(0.2 * double(n_train)));
        for (std::size_t s = 0; s < n_train + n_test; ++s) {
            for (std::size_t j = 0; j < d; ++j) x[j] = gaussian(gen, p.v[j], cov_std[j]);
            int y = detail::synth_label(p.w, p.b, x);
            if (s < n_train) shard.push_row(x, y);
            else out.test.push_row(x, y);
        }
        shard.validate("gen_synthetic");
        out.devices.push_back(std::move(shard));
        out.gen_params.push_back(std::move(p));
    }
    out.test.validate("gen_synthetic test split");
    return out;
}

// ---------------------------------------------------------------------------
// Label-restricted power-law partitioning of an existing dataset.

struct PartitionPlan {
    std::vector<std::vector<std::size_t>> device_indices;
    std::vector<std::vector<int>> device_labels;
};

inline PartitionPlan partition_powerlaw_labels(const Dataset& source, std::size_t num_devices,
                                               std::size_t labels_per_device,
                                               std::uint64_t seed, double exponent = 1.5,
                                               std::size_t min_samples = 32) {
    source.validate("partition_powerlaw_labels");
    if (num_devices < 1) throw ConfigError("partition: num_devices must be >= 1");
    if (labels_per_device < 1 || labels_per_device > source.num_classes) {
        throw ConfigError("partition: labels_per_device must be in [1, num_classes]");
    }
    if (source.size() < num_devices * min_samples) {
        throw DataError("partition: source has " + std::to_string(source.size()) +
                        " samples, need at least " + std::to_string(num_devices * min_samples));
    }

    auto gen = substream(seed, "partition");

    // One shuffled pool of source indices per label; devices consume from the
    // front of their assigned labels' pools.
    std::vector<std::vector<std::size_t>> pools(source.num_classes);
    for (std::size_t i = 0; i < source.size(); ++i) {
        pools[std::size_t(source.labels[i])].push_back(i);
    }
    for (auto& pool : pools) shuffle(pool, gen);
    std::vector<std::size_t> cursor(source.num_classes, 0);

    // 95% of the source is the size budget; the rest absorbs rounding and
    // min-size clamping. The drawn sizes are targets: a device never takes
    // more than its label pools still hold, so a heavy head shard shrinks
    // instead of starving the tail.
    const auto total = std::size_t(double(source.size()) * 0.95);
    std::vector<std::size_t> sizes =
        detail::powerlaw_sizes(num_devices, exponent, min_samples, total, gen);

    PartitionPlan plan;
    plan.device_indices.resize(num_devices);
    plan.device_labels.resize(num_devices);
    for (std::size_t dev = 0; dev < num_devices; ++dev) {
        // Label choice favors classes with samples left; drained pools get
        // probability zero. Top up with unchosen classes if fewer than
        // labels_per_device pools still have mass.
        std::vector<double> remaining(source.num_classes);
        for (std::size_t c = 0; c < source.num_classes; ++c) {
            remaining[c] = double(pools[c].size() - cursor[c]);
        }
        std::vector<std::size_t> drawn =
            weighted_sample_without_replacement(remaining, labels_per_device, gen);
        std::vector<std::size_t> chosen;
        for (std::size_t lab : drawn) {
            if (std::find(chosen.begin(), chosen.end(), lab) == chosen.end()) {
                chosen.push_back(lab);
            }
        }
        for (std::size_t c = 0; c < source.num_classes && chosen.size() < labels_per_device;
             ++c) {
            if (std::find(chosen.begin(), chosen.end(), c) == chosen.end()) {
                chosen.push_back(c);
            }
        }
        for (std::size_t lab : chosen) plan.device_labels[dev].push_back(int(lab));

        std::size_t avail = 0;
        for (std::size_t lab : chosen) avail += pools[lab].size() - cursor[lab];
        if (avail < min_samples) {
            throw DataError("partition: label pool exhausted while filling device " +
                            std::to_string(dev));
        }
        const std::size_t take = std::min(sizes[dev], avail);

        auto& idx = plan.device_indices[dev];
        const auto& labs = plan.device_labels[dev];
        for (std::size_t s = 0; s < take; ++s) {
            // Round-robin over the device's labels, falling back to any of its
            // labels that still has samples.
            bool taken = false;
            for (std::size_t off = 0; off < labs.size() && !taken; ++off) {
                auto lab = std::size_t(labs[(s + off) % labs.size()]);
                if (cursor[lab] < pools[lab].size()) {
                    idx.push_back(pools[lab][cursor[lab]++]);
                    taken = true;
                }
            }
            if (!taken) {
                throw DataError("partition: label pool exhausted while filling device " +
                                std::to_string(dev));
            }
        }
    }
    return plan;
}

inline std::vector<Dataset> materialize(const Dataset& source, const PartitionPlan& plan) {
    std::vector<Dataset> out;
    out.reserve(plan.device_indices.size());
    std::vector<double> x(source.feature_dim);
    for (const auto& indices : plan.device_indices) {
        Dataset shard;
        shard.feature_dim = source.feature_dim;
        shard.num_classes = source.num_classes;
        for (std::size_t i : indices) {
            const double* row = source.row(i);
            x.assign(row, row + source.feature_dim);
            shard.push_row(x, source.labels[i]);
        }
        shard.validate("materialize");
        out.push_back(std::move(shard));
    }
    return out;
}

} // namespace hfl
