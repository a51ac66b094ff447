#pragma once

// Learning tasks: multinomial logistic regression with L2 regularization
// (convex) and a one-hidden-layer tanh MLP (non-convex). Both expose the same
// surface over flat parameter vectors:
//
//     dim(), init_params(gen), loss(w, data), gradient(w, data, batch),
//     accuracy(w, data)
//
// so training code can be templated over the workload.
//
// Flat layouts (documented here, frozen):
//   logistic: W (d x C, row-major) then b (C);              n = d*C + C
//   mlp:      W1 (d x h), b1 (h), W2 (h x C), b2 (C);       n = d*h + h + h*C + C
//
// loss = mean cross-entropy + reg_epsilon * ||w||^2 over ALL parameters,
// bias included. gradient = batch-mean data term + 2 * reg_epsilon * w.
// Prediction ties break toward the smallest class index.

#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "hfl/dataset.hpp"
#include "hfl/errors.hpp"
#include "hfl/linalg.hpp"
#include "hfl/rng.hpp"

namespace hfl {

// ---------------------------------------------------------------------------
// Structured parameter views (the flat vector is authoritative; these exist
// for construction, serialization, and tests).

struct LogisticModel {
    std::size_t d = 0, c = 0;
    std::vector<double> weights; // d x c, row-major
    std::vector<double> bias;    // c
};

struct MlpModel {
    std::size_t d = 0, h = 0, c = 0;
    std::vector<double> w1; // d x h, row-major
    std::vector<double> b1; // h
    std::vector<double> w2; // h x c, row-major
    std::vector<double> b2; // c
};

inline ParamVector flatten(const LogisticModel& m) {
    ParamVector out;
    out.reserve(m.d * m.c + m.c);
    out.insert(out.end(), m.weights.begin(), m.weights.end());
    out.insert(out.end(), m.bias.begin(), m.bias.end());
    return out;
}

inline LogisticModel unflatten_logistic(std::span<const double> w, std::size_t d, std::size_t c) {
    require_same_size(w.size(), d * c + c, "unflatten_logistic");
    LogisticModel m;
    m.d = d;
    m.c = c;
    m.weights.assign(w.begin(), w.begin() + std::ptrdiff_t(d * c));
    m.bias.assign(w.begin() + std::ptrdiff_t(d * c), w.end());
    return m;
}

inline ParamVector flatten(const MlpModel& m) {
    ParamVector out;
    out.reserve(m.d * m.h + m.h + m.h * m.c + m.c);
    out.insert(out.end(), m.w1.begin(), m.w1.end());
    out.insert(out.end(), m.b1.begin(), m.b1.end());
    out.insert(out.end(), m.w2.begin(), m.w2.end());
    out.insert(out.end(), m.b2.begin(), m.b2.end());
    return out;
}

inline MlpModel unflatten_mlp(std::span<const double> w, std::size_t d, std::size_t h, std::size_t c) {
    require_same_size(w.size(), d * h + h + h * c + c, "unflatten_mlp");
    MlpModel m;
    m.d = d;
    m.h = h;
    m.c = c;
    auto it = w.begin();
    m.w1.assign(it, it + std::ptrdiff_t(d * h));
    it += std::ptrdiff_t(d * h);
    m.b1.assign(it, it + std::ptrdiff_t(h));
    it += std::ptrdiff_t(h);
    m.w2.assign(it, it + std::ptrdiff_t(h * c));
    it += std::ptrdiff_t(h * c);
    m.b2.assign(it, it + std::ptrdiff_t(c));
    return m;
}

// ---------------------------------------------------------------------------

struct LogisticWorkload {
    std::size_t input_dim = 0;
    std::size_t num_classes = 0;
    double reg_epsilon = 1e-4;

    std::size_t dim() const { return input_dim * num_classes + num_classes; }

    void check_data(const Dataset& data) const {
        if (data.feature_dim != input_dim || data.num_classes > num_classes) {
            throw DimensionError("logistic workload: dataset shape mismatch");
        }
    }

    // Convex workload starts from the origin; gen is unused but kept so the
    // call site is workload-agnostic.
    ParamVector init_params(std::mt19937_64&) const { return ParamVector(dim(), 0.0); }

    // z_c = sum_j W[j,c] x_j + b_c
    void logits(std::span<const double> w, const double* x, std::vector<double>& z) const {
        z.assign(num_classes, 0.0);
        for (std::size_t j = 0; j < input_dim; ++j) {
            const double xj = x[j];
            const double* wrow = w.data() + j * num_classes;
            for (std::size_t c = 0; c < num_classes; ++c) z[c] += wrow[c] * xj;
        }
        const double* b = w.data() + input_dim * num_classes;
        for (std::size_t c = 0; c < num_classes; ++c) z[c] += b[c];
    }

    double loss(std::span<const double> w, const Dataset& data) const {
        require_same_size(w.size(), dim(), "logistic loss");
        check_data(data);
        std::vector<double> z;
        double acc = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            logits(w, data.row(i), z);
            acc += log_sum_exp(z) - z[std::size_t(data.labels[i])];
        }
        return acc / double(data.size()) + reg_epsilon * l2_norm_sq(w);
    }

    ParamVector gradient(std::span<const double> w, const Dataset& data,
                         std::span<const std::size_t> batch) const {
        require_same_size(w.size(), dim(), "logistic gradient");
        check_data(data);
        if (batch.empty()) throw DimensionError("logistic gradient: empty batch");
        ParamVector g(dim(), 0.0);
        std::vector<double> z;
        for (std::size_t idx : batch) {
            const double* x = data.row(idx);
            logits(w, x, z);
            std::vector<double> p = softmax(z);
            p[std::size_t(data.labels[idx])] -= 1.0;
            for (std::size_t j = 0; j < input_dim; ++j) {
                double* grow = g.data() + j * num_classes;
                const double xj = x[j];
                for (std::size_t c = 0; c < num_classes; ++c) grow[c] += xj * p[c];
            }
            double* gb = g.data() + input_dim * num_classes;
            for (std::size_t c = 0; c < num_classes; ++c) gb[c] += p[c];
        }
        scale_in_place(1.0 / double(batch.size()), g);
        axpy(2.0 * reg_epsilon, w, g);
        return g;
    }

    double accuracy(std::span<const double> w, const Dataset& data) const {
        require_same_size(w.size(), dim(), "logistic accuracy");
        check_data(data);
        std::vector<double> z;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            logits(w, data.row(i), z);
            if (argmax(z) == std::size_t(data.labels[i])) ++hits;
        }
        return double(hits) / double(data.size());
    }
};

// ---------------------------------------------------------------------------

struct MlpWorkload {
    std::size_t input_dim = 0;
    std::size_t hidden = 32;
    std::size_t num_classes = 0;
    double reg_epsilon = 1e-4;

    std::size_t dim() const {
        return input_dim * hidden + hidden + hidden * num_classes + num_classes;
    }

    void check_data(const Dataset& data) const {
        if (data.feature_dim != input_dim || data.num_classes > num_classes) {
            throw DimensionError("mlp workload: dataset shape mismatch");
        }
    }

    // tanh nets do not train from the origin (zero hidden symmetry), so layer
    // weights start at N(0, 1/fan_in) and biases at zero.
    ParamVector init_params(std::mt19937_64& gen) const {
        ParamVector w(dim(), 0.0);
        const double s1 = 1.0 / std::sqrt(double(input_dim));
        const double s2 = 1.0 / std::sqrt(double(hidden));
        std::size_t k = 0;
        for (std::size_t i = 0; i < input_dim * hidden; ++i) w[k++] = gaussian(gen) * s1;
        k += hidden; // b1 stays zero
        for (std::size_t i = 0; i < hidden * num_classes; ++i) w[k++] = gaussian(gen) * s2;
        return w;
    }

    // a = tanh(W1^T x + b1); z = W2^T a + b2
    void forward(std::span<const double> w, const double* x, std::vector<double>& a,
                 std::vector<double>& z) const {
        const double* w1 = w.data();
        const double* b1 = w.data() + input_dim * hidden;
        const double* w2 = b1 + hidden;
        const double* b2 = w2 + hidden * num_classes;
        a.assign(hidden, 0.0);
        for (std::size_t j = 0; j < input_dim; ++j) {
            const double xj = x[j];
            const double* row = w1 + j * hidden;
            for (std::size_t k = 0; k < hidden; ++k) a[k] += row[k] * xj;
        }
        for (std::size_t k = 0; k < hidden; ++k) a[k] = std::tanh(a[k] + b1[k]);
        z.assign(num_classes, 0.0);
        for (std::size_t k = 0; k < hidden; ++k) {
            const double ak = a[k];
            const double* row = w2 + k * num_classes;
            for (std::size_t c = 0; c < num_classes; ++c) z[c] += row[c] * ak;
        }
        for (std::size_t c = 0; c < num_classes; ++c) z[c] += b2[c];
    }

    double loss(std::span<const double> w, const Dataset& data) const {
        require_same_size(w.size(), dim(), "mlp loss");
        check_data(data);
        std::vector<double> a, z;
        double acc = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            forward(w, data.row(i), a, z);
            acc += log_sum_exp(z) - z[std::size_t(data.labels[i])];
        }
        return acc / double(data.size()) + reg_epsilon * l2_norm_sq(w);
    }

    ParamVector gradient(std::span<const double> w, const Dataset& data,
                         std::span<const std::size_t> batch) const {
        require_same_size(w.size(), dim(), "mlp gradient");
        check_data(data);
        if (batch.empty()) throw DimensionError("mlp gradient: empty batch");
        ParamVector g(dim(), 0.0);
        double* g1 = g.data();
        double* gb1 = g.data() + input_dim * hidden;
        double* g2 = gb1 + hidden;
        double* gb2 = g2 + hidden * num_classes;
        const double* w2 = w.data() + input_dim * hidden + hidden;
        std::vector<double> a, z, da(hidden);
        for (std::size_t idx : batch) {
            const double* x = data.row(idx);
            forward(w, x, a, z);
            std::vector<double> p = softmax(z);
            p[std::size_t(data.labels[idx])] -= 1.0;
            for (std::size_t c = 0; c < num_classes; ++c) gb2[c] += p[c];
            for (std::size_t k = 0; k < hidden; ++k) {
                const double ak = a[k];
                double* grow = g2 + k * num_classes;
                const double* wrow = w2 + k * num_classes;
                double acc = 0.0;
                for (std::size_t c = 0; c < num_classes; ++c) {
                    grow[c] += ak * p[c];
                    acc += wrow[c] * p[c];
                }
                da[k] = acc * (1.0 - ak * ak);
            }
            for (std::size_t k = 0; k < hidden; ++k) gb1[k] += da[k];
            for (std::size_t j = 0; j < input_dim; ++j) {
                const double xj = x[j];
                double* grow = g1 + j * hidden;
                for (std::size_t k = 0; k < hidden; ++k) grow[k] += xj * da[k];
            }
        }
        scale_in_place(1.0 / double(batch.size()), g);
        axpy(2.0 * reg_epsilon, w, g);
        return g;
    }

    double accuracy(std::span<const double> w, const Dataset& data) const {
        require_same_size(w.size(), dim(), "mlp accuracy");
        check_data(data);
        std::vector<double> a, z;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            forward(w, data.row(i), a, z);
            if (argmax(z) == std::size_t(data.labels[i])) ++hits;
        }
        return double(hits) / double(data.size());
    }
};

} // namespace hfl
