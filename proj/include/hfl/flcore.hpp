#pragma once

// Protocol core: device-side local SGD, the synchronous aggregation kernel,
// staleness-compensated gradient correction for delayed updates, the
// asynchronous merge rule, and learning-rate bound diagnostics.
//
// The compensation path approximates the current-model gradient from a stale
// one via a rank-1 curvature surrogate:
//
//     g_hat = g + (f . (w_now - w_then)) * f
//
// where g is the gradient the straggler actually computed, w_then is the
// joint model it trained on, and the factor f is the device's last minibatch
// gradient (optionally the whole accumulated step g itself; with multi-epoch
// local training |g| grows with the step count and the quadratic f term can
// overpower the merge, so the single-step factor is the default). Merges
// blend the straggler term into the joint model with weight
// lambda = lambda0 * exp(-rate * (t - tau)), tau being the round the update
// was issued: the weight decays with the update's staleness, so slower
// stragglers contribute less.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hfl/dataset.hpp"
#include "hfl/errors.hpp"
#include "hfl/linalg.hpp"
#include "hfl/rng.hpp"

namespace hfl {

// One participant. tau is the fixed report delay in rounds; tau == 0 means
// the device reports synchronously.
struct DeviceState {
    int id = 0;
    const Dataset* shard = nullptr;
    double p = 0.0; // aggregation weight, sums to 1 across devices
    int tau = 0;
};

// Result of one local training task. accum_gradient is defined as
// (issued - new_params) / eta, i.e. the total scaled step, so
// new_params == issued - eta * accum_gradient holds by construction
// (and is re-verified wherever updates cross a module boundary).
struct LocalUpdate {
    int device_id = 0;
    int issued_round = 0;
    int arrival_round = 0;
    ParamVector new_params;
    ParamVector accum_gradient;
    ParamVector last_step_gradient; // final minibatch gradient, alternative factor
};

enum class LrDecay { inv_linear, constant };
enum class MergeMode { drop_pi, renorm_pi };
enum class CompFactor { accum, last_step };

struct HyperParams {
    int epochs = 5;     // local epochs per task
    int rounds = 200;   // global rounds T
    double eta0 = 0.1;
    LrDecay decay = LrDecay::inv_linear;
    int batch_size = 64;
    double lambda0 = 0.5;
    double lambda_rate = 1.0;
    int tau_max = 10;
    MergeMode merge_mode = MergeMode::drop_pi;
    CompFactor comp_factor = CompFactor::last_step;

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (rounds < 1) throw ConfigError("rounds must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(lambda0 > 0.0 && lambda0 < 1.0)) throw ConfigError("lambda0 must be in (0, 1)");
        if (lambda_rate < 0.0) throw ConfigError("lambda_rate must be >= 0");
        if (eta0 < 0.0) throw ConfigError("eta0 must be >= 0");
        if (tau_max < 0) throw ConfigError("tau_max must be >= 0");
    }
};

inline double lr_at(const HyperParams& h, int t) {
    if (t < 0) throw ProtocolError("lr_at: negative round");
    return h.decay == LrDecay::inv_linear ? h.eta0 / (1.0 + double(t)) : h.eta0;
}

// ---------------------------------------------------------------------------
// Local training.

inline void validate_update_relation(const LocalUpdate& u, std::span<const double> issued,
                                     double eta) {
    require_same_size(issued.size(), u.new_params.size(), "update relation");
    double scale = 1.0;
    for (double x : issued) scale = std::max(scale, std::abs(x));
    const double tol = 1e-10 * scale;
    for (std::size_t i = 0; i < issued.size(); ++i) {
        double reconstructed = issued[i] - eta * u.accum_gradient[i];
        if (std::abs(reconstructed - u.new_params[i]) > tol) {
            throw ProtocolError("device " + std::to_string(u.device_id) +
                                ": update violates issued - eta * gradient relation");
        }
    }
}

// E epochs of minibatch SGD from issued_params over the device shard, shuffled
// per epoch by the device's own stream. mu_prox > 0 adds the proximal pull
// mu * (w - issued) to every step gradient.
template <class Workload>
LocalUpdate local_train(const Workload& wl, const DeviceState& dev,
                        const ParamVector& issued_params, double eta, int epochs,
                        int batch_size, int issued_round, int arrival_round,
                        std::mt19937_64& gen, double mu_prox = 0.0) {
    if (!dev.shard || dev.shard->size() == 0) {
        throw DataError("device " + std::to_string(dev.id) + ": empty shard");
    }
    require_same_size(issued_params.size(), wl.dim(), "local_train");

    const Dataset& shard = *dev.shard;
    const std::size_t m = shard.size();
    ParamVector w = issued_params;
    ParamVector last_g;
    std::vector<std::size_t> order(m);
    for (std::size_t i = 0; i < m; ++i) order[i] = i;

    for (int e = 0; e < epochs; ++e) {
        shuffle(order, gen);
        for (std::size_t start = 0; start < m; start += std::size_t(batch_size)) {
            const std::size_t stop = std::min(m, start + std::size_t(batch_size));
            std::span<const std::size_t> batch(order.data() + start, stop - start);
            ParamVector g = wl.gradient(w, shard, batch);
            if (mu_prox > 0.0) {
                // Displacement first: the pull is exactly zero at the anchor.
                for (std::size_t i = 0; i < g.size(); ++i) {
                    g[i] += mu_prox * (w[i] - issued_params[i]);
                }
            }
            axpy(-eta, g, w);
            last_g = std::move(g);
        }
    }
    require_finite(w, "local_train");

    LocalUpdate u;
    u.device_id = dev.id;
    u.issued_round = issued_round;
    u.arrival_round = arrival_round;
    u.accum_gradient.resize(w.size());
    if (eta > 0.0) {
        for (std::size_t i = 0; i < w.size(); ++i) {
            u.accum_gradient[i] = (issued_params[i] - w[i]) / eta;
        }
    } // eta == 0: zero accumulated gradient, new_params == issued
    u.new_params = std::move(w);
    u.last_step_gradient = std::move(last_g);
    validate_update_relation(u, issued_params, eta);
    return u;
}

template <class Workload>
LocalUpdate fedprox_local_train(const Workload& wl, const DeviceState& dev,
                                const ParamVector& issued_params, double eta, int epochs,
                                int batch_size, double mu_prox, int issued_round,
                                int arrival_round, std::mt19937_64& gen) {
    if (mu_prox < 0.0) throw ConfigError("mu_prox must be >= 0");
    return local_train(wl, dev, issued_params, eta, epochs, batch_size, issued_round,
                       arrival_round, gen, mu_prox);
}

// ---------------------------------------------------------------------------
// Server-side kernels.

// Weighted mean of reporting devices' models, weights renormalized over the
// reporters present. Summation runs in ascending device id order.
inline ParamVector sync_aggregate(const std::vector<LocalUpdate>& updates,
                                  const std::vector<double>& weight_of_device) {
    if (updates.empty()) throw ProtocolError("sync_aggregate: no updates");
    std::vector<std::size_t> order(updates.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return updates[a].device_id < updates[b].device_id;
    });
    double wsum = 0.0;
    for (std::size_t i : order) wsum += weight_of_device.at(std::size_t(updates[i].device_id));
    if (!(wsum > 0.0)) throw ProtocolError("sync_aggregate: reporter weights sum to zero");
    ParamVector result(updates.front().new_params.size(), 0.0);
    for (std::size_t i : order) {
        const LocalUpdate& u = updates[i];
        require_same_size(u.new_params.size(), result.size(), "sync_aggregate");
        axpy(weight_of_device.at(std::size_t(u.device_id)) / wsum, u.new_params, result);
    }
    return result;
}

// Merge weight for an update issued at round tau and merged at round t.
// Decays exponentially in the staleness t - tau, clamped to [0, 1].
inline double lambda_at(double lambda0, int t, int tau, double rate = 1.0) {
    if (tau < 0 || t < tau) throw ProtocolError("lambda_at: requires t >= tau >= 0");
    double lam = lambda0 * std::exp(-rate * double(t - tau));
    return std::clamp(lam, 0.0, 1.0);
}

// Stale-gradient correction. The rank-1 surrogate is applied to the joint
// model displacement since the update was issued; the result stays in
// span{accum_gradient, factor}.
inline ParamVector compensate_gradient(const LocalUpdate& u, const ParamVector& current_joint,
                                       const ParamVector& backup_joint,
                                       CompFactor mode = CompFactor::last_step) {
    require_same_size(current_joint.size(), backup_joint.size(), "compensate_gradient");
    require_same_size(current_joint.size(), u.accum_gradient.size(), "compensate_gradient");
    const ParamVector& factor =
        mode == CompFactor::accum ? u.accum_gradient : u.last_step_gradient;
    require_same_size(factor.size(), current_joint.size(), "compensate_gradient factor");
    double c = 0.0;
    for (std::size_t i = 0; i < factor.size(); ++i) {
        c += factor[i] * (current_joint[i] - backup_joint[i]);
    }
    ParamVector ghat = u.accum_gradient;
    axpy(c, factor, ghat);
    return ghat;
}

// Blend one straggler term into the joint model:
//     joint <- (1 - lambda) * joint + lambda * scale * (new_params - eta * g_hat)
// where scale is 1 (default) or p_i / psi2 when the merge mode retains the
// device-weight normalization.
inline void async_merge(ParamVector& joint, const LocalUpdate& u, const ParamVector& ghat,
                        double eta, double lambda, MergeMode mode = MergeMode::drop_pi,
                        double p_over_psi2 = 1.0) {
    require_same_size(joint.size(), u.new_params.size(), "async_merge");
    require_same_size(joint.size(), ghat.size(), "async_merge");
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw ProtocolError("async_merge: lambda out of [0,1]");
    const double s = mode == MergeMode::renorm_pi ? p_over_psi2 : 1.0;
    for (std::size_t i = 0; i < joint.size(); ++i) {
        joint[i] = (1.0 - lambda) * joint[i] + lambda * s * (u.new_params[i] - eta * ghat[i]);
    }
    require_finite(joint, "async_merge");
}

// ---------------------------------------------------------------------------
// Heterogeneity and schedule diagnostics.

// Empirical local dissimilarity: max_i ||grad F_i(w)||^2 / ||grad F(w)||^2
// with grad F = sum_i p_i grad F_i over full shards.
template <class Workload>
double estimate_dissimilarity(const Workload& wl, const std::vector<DeviceState>& devices,
                              const ParamVector& w) {
    if (devices.empty()) throw ConfigError("estimate_dissimilarity: no devices");
    ParamVector joint(wl.dim(), 0.0);
    double max_local = 0.0;
    for (const DeviceState& dev : devices) {
        if (!dev.shard || dev.shard->size() == 0) {
            throw DataError("device " + std::to_string(dev.id) + ": empty shard");
        }
        std::vector<std::size_t> all(dev.shard->size());
        for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
        ParamVector g = wl.gradient(w, *dev.shard, all);
        max_local = std::max(max_local, l2_norm_sq(g));
        axpy(dev.p, g, joint);
    }
    double denom = l2_norm_sq(joint);
    if (!(denom > 0.0)) {
        throw ProtocolError("estimate_dissimilarity: joint gradient vanishes at this point");
    }
    return max_local / denom;
}

// Optional problem constants supplied by the user for bound diagnostics; the
// library never estimates these itself.
struct TheoryConstants {
    std::optional<double> L;     // smoothness
    std::optional<double> mu;    // quasi-convexity
    std::optional<double> B;     // local dissimilarity bound
    std::optional<double> G;     // gradient bound
    std::optional<double> sigma; // gradient noise
    std::optional<double> L2;    // second-order smoothness

    void validate() const {
        auto pos = [](const std::optional<double>& v, const char* name) {
            if (v && !(*v > 0.0)) throw ConfigError(std::string(name) + " must be > 0");
        };
        pos(L, "L");
        pos(mu, "mu");
        pos(B, "B");
        pos(G, "G");
        pos(sigma, "sigma");
        pos(L2, "L2");
    }
};

inline double convex_lr_bound(double L, double mu, double B, double psi1, double psi2, int t) {
    double denom = mu * mu * double(t) * B * B * B * B * psi1 * psi2;
    if (denom <= 0.0) return std::numeric_limits<double>::infinity();
    return L / denom;
}

inline double nonconvex_lr_bound(double L, double B, double psi1, double psi2) {
    double b1 = B * B * B * B * psi1 * psi2;
    if (psi2 <= 0.0) return std::numeric_limits<double>::infinity();
    return (2.0 / L) * std::sqrt(psi1 * b1 / psi2);
}

struct LrBoundReport {
    bool convex_ok = false;
    int convex_tightest_t = 0;          // round where eta_t / bound_t peaks
    double convex_bound_at_tightest = 0;
    double eta_at_tightest = 0;
    bool nonconvex_ok = false;
    double nonconvex_bound = 0;
    double eta_max = 0;
};

// Scans every round t <= T against both schedule bounds. Returns nothing when
// the needed constants are absent (diagnostic unavailable, not a failure).
inline std::optional<LrBoundReport> lr_bound_check(const TheoryConstants& c, double psi1,
                                                   double psi2, const HyperParams& hyper) {
    c.validate();
    if (!(c.L && c.mu && c.B)) return std::nullopt;
    if (psi1 < 0 || psi2 < 0 || std::abs(psi1 + psi2 - 1.0) > 1e-9) {
        throw ConfigError("lr_bound_check: psi1 and psi2 must be nonnegative and sum to 1");
    }
    LrBoundReport rep;
    double worst_ratio = -1.0;
    for (int t = 1; t <= hyper.rounds; ++t) {
        double bound = convex_lr_bound(*c.L, *c.mu, *c.B, psi1, psi2, t);
        double eta = lr_at(hyper, t);
        double ratio = std::isinf(bound) ? 0.0 : eta / bound;
        if (ratio > worst_ratio) {
            worst_ratio = ratio;
            rep.convex_tightest_t = t;
            rep.convex_bound_at_tightest = bound;
            rep.eta_at_tightest = eta;
        }
    }
    rep.convex_ok = worst_ratio <= 1.0 + 1e-12;
    rep.nonconvex_bound = nonconvex_lr_bound(*c.L, *c.B, psi1, psi2);
    rep.eta_max = hyper.eta0;
    for (int t = 0; t <= hyper.rounds; ++t) rep.eta_max = std::max(rep.eta_max, lr_at(hyper, t));
    rep.nonconvex_ok = rep.eta_max <= rep.nonconvex_bound * (1.0 + 1e-12);
    return rep;
}

} // namespace hfl
