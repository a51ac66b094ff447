#pragma once

// Dense numerical kernels shared by every module: flat parameter vectors,
// BLAS-1 style updates, softmax, and rank-1 matrix-vector products.
//
// All accumulation is double precision in fixed sequential index order, so
// identical inputs give bit-identical outputs.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "hfl/errors.hpp"

namespace hfl {

// Flat model parameter vector. Length is fixed for the lifetime of a run and
// every entry stays finite.
using ParamVector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
    require_same_size(a.size(), b.size(), "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, ParamVector& y) {
    require_same_size(x.size(), y.size(), "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline ParamVector scaled(double alpha, std::span<const double> v) {
    ParamVector out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = alpha * v[i];
    return out;
}

inline void scale_in_place(double alpha, ParamVector& v) {
    for (double& x : v) x *= alpha;
}

inline double l2_norm_sq(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return acc;
}

inline bool all_finite(std::span<const double> v) {
    for (double x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

inline void require_finite(std::span<const double> v, const char* where) {
    if (!all_finite(v)) {
        throw ProtocolError(std::string(where) + ": non-finite parameter entry");
    }
}

// Probability simplex projection of logits. The max is subtracted before
// exponentiation, so the output is invariant under uniform shifts and never
// overflows for finite inputs.
inline std::vector<double> softmax(std::span<const double> z) {
    if (z.empty()) throw DimensionError("softmax: empty input");
    double zmax = z[0];
    for (double x : z) zmax = std::max(zmax, x);
    std::vector<double> out(z.size());
    double denom = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - zmax);
        denom += out[i];
    }
    for (double& x : out) x /= denom;
    return out;
}

// log(sum_i exp(z_i)), shift-stabilised.
inline double log_sum_exp(std::span<const double> z) {
    if (z.empty()) throw DimensionError("log_sum_exp: empty input");
    double zmax = z[0];
    for (double x : z) zmax = std::max(zmax, x);
    double acc = 0.0;
    for (double x : z) acc += std::exp(x - zmax);
    return zmax + std::log(acc);
}

// Index of the largest entry; ties break toward the smallest index.
inline std::size_t argmax(std::span<const double> z) {
    if (z.empty()) throw DimensionError("argmax: empty input");
    std::size_t best = 0;
    for (std::size_t i = 1; i < z.size(); ++i) {
        if (z[i] > z[best]) best = i;
    }
    return best;
}

// The outer product g g^T, stored by its factor only. Never materialised
// densely: applying it to v costs two passes, factor * (factor . v).
struct RankOneMatrix {
    ParamVector factor;

    ParamVector apply(std::span<const double> v) const {
        require_same_size(factor.size(), v.size(), "RankOneMatrix::apply");
        double c = dot(factor, v);
        return scaled(c, factor);
    }
};

} // namespace hfl
