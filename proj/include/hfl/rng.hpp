#pragma once

// Deterministic random number streams.
//
// Every run derives all of its randomness from one 64-bit root seed. Each
// consumer (partitioning, delay assignment, per-device batch shuffles, device
// sampling, data generation) owns a *named* substream, so toggling one feature
// never perturbs the draws seen by another.
//
// The primitives are frozen so that a reimplementation can reproduce them:
//   * generator      : std::mt19937_64 (fully specified by the C++ standard)
//   * stream seeding : splitmix64(root ^ fnv1a64(label) ^ index * GOLDEN)
//   * uniform double : (x >> 11) * 2^-53, giving [0, 1)
//   * bounded int    : rejection sampling on the top multiple of the span
//   * gaussian       : Marsaglia polar method; the second variate of each
//                      accepted pair is discarded
//   * shuffle        : Fisher-Yates, descending index
// std::shuffle and std::normal_distribution are implementation-defined and are
// deliberately not used anywhere.

#include <cmath>
#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace hfl {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// Named substream of a root seed. `index` distinguishes per-entity streams
// that share a label (for example one shuffle stream per device).
inline std::mt19937_64 substream(std::uint64_t root_seed, std::string_view label,
                                 std::uint64_t index = 0) {
    std::uint64_t s = root_seed ^ fnv1a64(label) ^ (index * 0x9e3779b97f4a7c15ULL);
    return std::mt19937_64(splitmix64(s));
}

// Uniform double in [0, 1) with 53 random bits.
inline double uniform_double(std::mt19937_64& gen) {
    return static_cast<double>(gen() >> 11) * 0x1.0p-53;
}

// Uniform integer in [lo, hi], inclusive. Unbiased via rejection.
inline std::uint64_t uniform_int(std::mt19937_64& gen, std::uint64_t lo, std::uint64_t hi) {
    std::uint64_t span = hi - lo + 1;
    if (span == 0) return gen(); // full 64-bit range
    std::uint64_t rem = (std::uint64_t(-1) % span + 1) % span; // 2^64 mod span
    std::uint64_t limit = std::uint64_t(0) - rem;              // largest multiple of span
    std::uint64_t x;
    do {
        x = gen();
    } while (limit != 0 && x >= limit);
    return lo + x % span;
}

// Standard normal via the Marsaglia polar method. One variate per accepted
// pair; the companion variate is discarded to keep the stream stateless.
inline double gaussian(std::mt19937_64& gen) {
    while (true) {
        double u = 2.0 * uniform_double(gen) - 1.0;
        double v = 2.0 * uniform_double(gen) - 1.0;
        double s = u * u + v * v;
        if (s >= 1.0 || s == 0.0) continue;
        return u * std::sqrt(-2.0 * std::log(s) / s);
    }
}

inline double gaussian(std::mt19937_64& gen, double mean, double stddev) {
    return mean + stddev * gaussian(gen);
}

// In-place Fisher-Yates shuffle, descending.
template <class T>
void shuffle(std::vector<T>& v, std::mt19937_64& gen) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::size_t j = static_cast<std::size_t>(uniform_int(gen, 0, i - 1));
        std::swap(v[i - 1], v[j]);
    }
}

// k distinct indices drawn uniformly from {0, ..., n-1} (partial Fisher-Yates).
// Result order is the draw order.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k,
                                                           std::mt19937_64& gen) {
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k && i < n; ++i) {
        std::size_t j = i + static_cast<std::size_t>(uniform_int(gen, 0, n - i - 1));
        std::swap(pool[i], pool[j]);
        out.push_back(pool[i]);
    }
    return out;
}

// k distinct indices drawn without replacement with probability proportional
// to `weights`. Sequential draws; after each draw the chosen weight is removed.
inline std::vector<std::size_t> weighted_sample_without_replacement(
    const std::vector<double>& weights, std::size_t k, std::mt19937_64& gen) {
    std::vector<double> w = weights;
    std::vector<std::size_t> out;
    out.reserve(k);
    for (std::size_t draw = 0; draw < k && draw < w.size(); ++draw) {
        double total = 0.0;
        for (double x : w) total += x;
        double r = uniform_double(gen) * total;
        std::size_t chosen = 0;
        double acc = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            if (w[i] <= 0.0) continue;
            acc += w[i];
            chosen = i;
            if (r < acc) break;
        }
        out.push_back(chosen);
        w[chosen] = 0.0;
    }
    return out;
}

} // namespace hfl
