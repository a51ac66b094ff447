#pragma once

// Deterministic discrete-round drivers for the hybrid protocol and the
// baselines. Time is a logical tick counter; a device with delay tau,
// dispatched at round t, matures at round t + tau and can take its next task
// at t + tau + 1 (one outstanding task per device).
//
// Round order inside the hybrid loop:
//   1. snapshot the joint model as this round's dispatch backup, evict
//      backups older than tau_max rounds
//   2. dispatch to every free device; synchronous devices train and report
//      within the round, delayed devices enqueue a pending arrival
//   3. synchronous aggregation over this round's reporters
//   4. matured arrivals merge one at a time in ascending device id, each via
//      stale-gradient compensation against the backup of its issued round
//   5. evaluate and log
//
// Every run rebuilds its named RNG streams from the root seed, so distinct
// algorithms never perturb each other's draws and identical configurations
// replay bit-identically.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "hfl/dataset.hpp"
#include "hfl/errors.hpp"
#include "hfl/flcore.hpp"
#include "hfl/linalg.hpp"
#include "hfl/rng.hpp"

namespace hfl {

// A straggler task in flight.
struct PendingArrival {
    int arrival_round = 0;
    LocalUpdate update;
};

struct RoundLog {
    int round = 0;
    std::string algo;
    double train_loss = 0.0;
    double test_acc = 0.0;
    double eta = 0.0;
    int sync_updates = 0;
    int async_merges = 0;
    std::vector<double> lambdas; // merge weights applied this round
};

struct RunResult {
    std::vector<RoundLog> logs;
    ParamVector final_params;
    int dropped_arrivals = 0; // straggler tasks that matured past the horizon
    double psi1 = 0.0;        // weight mass of synchronous devices
    double psi2 = 0.0;        // weight mass of delayed devices
};

// Called once per produced local update with the params it started from and
// the step size used; lets callers audit the update relation externally.
using UpdateObserver =
    std::function<void(const LocalUpdate&, const ParamVector& issued, double eta)>;

// ---------------------------------------------------------------------------

inline std::vector<DeviceState> make_devices(const std::vector<Dataset>& shards) {
    if (shards.empty()) throw ConfigError("make_devices: no shards");
    std::size_t total = 0;
    for (const Dataset& s : shards) total += s.size();
    std::vector<DeviceState> devices(shards.size());
    for (std::size_t i = 0; i < shards.size(); ++i) {
        devices[i].id = int(i);
        devices[i].shard = &shards[i];
        devices[i].p = double(shards[i].size()) / double(total);
        devices[i].tau = 0;
    }
    return devices;
}

// Marks floor(fraction * N) uniformly-chosen devices as delayed with
// tau ~ Uniform{1..tau_max}; everyone else reports synchronously.
inline void assign_delays(std::vector<DeviceState>& devices, int tau_max, double fraction,
                          std::mt19937_64& gen) {
    if (fraction < 0.0 || fraction > 1.0) {
        throw ConfigError("straggler_fraction must be in [0, 1]");
    }
    const auto k = std::size_t(fraction * double(devices.size()));
    if (k > 0 && tau_max < 1) {
        throw ConfigError("tau_max must be >= 1 when stragglers are present");
    }
    for (DeviceState& d : devices) d.tau = 0;
    std::vector<std::size_t> chosen = sample_without_replacement(devices.size(), k, gen);
    for (std::size_t idx : chosen) {
        devices[idx].tau = int(uniform_int(gen, 1, std::uint64_t(tau_max)));
    }
}

inline std::pair<double, double> psi_split(const std::vector<DeviceState>& devices) {
    double psi1 = 0.0, psi2 = 0.0;
    for (const DeviceState& d : devices) (d.tau == 0 ? psi1 : psi2) += d.p;
    return {psi1, psi2};
}

inline Dataset pool_shards(const std::vector<Dataset>& shards) {
    if (shards.empty()) throw ConfigError("pool_shards: no shards");
    Dataset pooled;
    pooled.feature_dim = shards.front().feature_dim;
    pooled.num_classes = shards.front().num_classes;
    for (const Dataset& s : shards) {
        if (s.feature_dim != pooled.feature_dim || s.num_classes != pooled.num_classes) {
            throw DataError("pool_shards: shard shape mismatch");
        }
        pooled.features.insert(pooled.features.end(), s.features.begin(), s.features.end());
        pooled.labels.insert(pooled.labels.end(), s.labels.begin(), s.labels.end());
    }
    return pooled;
}

// ---------------------------------------------------------------------------

template <class Workload>
class Simulator {
  public:
    Workload workload;
    std::vector<DeviceState> devices;
    const Dataset* pooled_train = nullptr; // union of shards; loss metric + ssgd input
    const Dataset* test = nullptr;
    HyperParams hyper;
    std::uint64_t seed = 1;
    int eval_every = 1;
    UpdateObserver observer;

    void validate() const {
        hyper.validate();
        if (devices.empty()) throw ConfigError("simulator: no devices");
        if (!pooled_train || !test) throw ConfigError("simulator: missing evaluation datasets");
        if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
        double psum = 0.0;
        for (std::size_t i = 0; i < devices.size(); ++i) {
            const DeviceState& d = devices[i];
            if (d.id != int(i)) throw ConfigError("simulator: device ids must be 0..N-1");
            if (!d.shard || d.shard->size() == 0) {
                throw DataError("device " + std::to_string(d.id) + ": empty shard");
            }
            if (d.tau < 0 || d.tau > hyper.tau_max) {
                throw ConfigError("device " + std::to_string(d.id) + ": tau outside [0, tau_max]");
            }
            psum += d.p;
        }
        if (std::abs(psum - 1.0) > 1e-9) {
            throw ConfigError("simulator: device weights must sum to 1");
        }
    }

    RunResult run_hfl() const {
        validate();
        RunResult res;
        std::tie(res.psi1, res.psi2) = psi_split(devices);

        std::vector<std::mt19937_64> dev_gen = device_streams();
        auto init_gen = substream(seed, "init");
        ParamVector w = workload.init_params(init_gen);

        std::map<int, ParamVector> backup;
        std::vector<PendingArrival> pending;
        std::vector<int> next_free(devices.size(), 0);
        std::vector<double> weights = weight_table();

        for (int t = 0; t < hyper.rounds; ++t) {
            backup[t] = w;
            backup.erase(backup.begin(), backup.lower_bound(t - hyper.tau_max));
            const double eta = lr_at(hyper, t);

            // Dispatch. Synchronous devices report within the round; delayed
            // devices enqueue, one outstanding task each.
            std::vector<LocalUpdate> sync_updates;
            for (const DeviceState& dev : devices) {
                if (dev.tau == 0) {
                    LocalUpdate u =
                        local_train(workload, dev, w, eta, hyper.epochs, hyper.batch_size, t, t,
                                    dev_gen[std::size_t(dev.id)]);
                    if (observer) observer(u, w, eta);
                    sync_updates.push_back(std::move(u));
                } else if (next_free[std::size_t(dev.id)] <= t) {
                    LocalUpdate u =
                        local_train(workload, dev, w, eta, hyper.epochs, hyper.batch_size, t,
                                    t + dev.tau, dev_gen[std::size_t(dev.id)]);
                    if (observer) observer(u, w, eta);
                    pending.push_back({t + dev.tau, std::move(u)});
                    next_free[std::size_t(dev.id)] = t + dev.tau + 1;
                }
            }

            if (!sync_updates.empty()) w = sync_aggregate(sync_updates, weights);

            // Matured arrivals merge in ascending device id.
            std::vector<std::size_t> due;
            for (std::size_t i = 0; i < pending.size(); ++i) {
                if (pending[i].arrival_round == t) due.push_back(i);
            }
            std::sort(due.begin(), due.end(), [&](std::size_t a, std::size_t b) {
                return pending[a].update.device_id < pending[b].update.device_id;
            });
            std::vector<double> lambdas;
            for (std::size_t i : due) {
                const LocalUpdate& u = pending[i].update;
                auto it = backup.find(u.issued_round);
                if (it == backup.end()) {
                    throw ProtocolError("backup store miss for round " +
                                        std::to_string(u.issued_round));
                }
                validate_update_relation(u, it->second, lr_at(hyper, u.issued_round));
                ParamVector ghat = compensate_gradient(u, w, it->second, hyper.comp_factor);
                // Merge weight decays in the update's staleness (t minus its
                // issued round): slower stragglers contribute less.
                const double lam = lambda_at(hyper.lambda0, t, u.issued_round, hyper.lambda_rate);
                const DeviceState& dev = devices[std::size_t(u.device_id)];
                if (dev.tau == 0) {
                    throw ProtocolError("async merge from synchronous device " +
                                        std::to_string(dev.id));
                }
                const double p_over_psi2 = res.psi2 > 0.0 ? dev.p / res.psi2 : 1.0;
                async_merge(w, u, ghat, eta, lam, hyper.merge_mode, p_over_psi2);
                lambdas.push_back(lam);
            }
            for (auto i = due.rbegin(); i != due.rend(); ++i) {
                pending.erase(pending.begin() + std::ptrdiff_t(*i));
            }

            maybe_log(res, t, "hfl", w, eta, int(sync_updates.size()), int(due.size()),
                      std::move(lambdas), t == hyper.rounds - 1);
        }
        res.dropped_arrivals = int(pending.size());
        res.final_params = std::move(w);
        return res;
    }

    // Synchronous sampled-aggregation baseline. Each aggregation samples k
    // devices (probability proportional to 1 + tau), trains them from the
    // current model, and averages with renormalized weights. When
    // charge_wait is set the tick counter then jumps by 1 + max sampled tau:
    // the server idles until its slowest participant reports.
    RunResult run_fedavg(int k, bool charge_wait) const {
        return run_sampled("fedavg", k, charge_wait, 0.0, 0.0);
    }

    // Proximal variant: local steps add mu_prox * (w - issued), and a
    // straggler_fraction share of each sample runs a reduced epoch count in
    // [1, epochs). Stragglers hand in partial work on time, so no wait is
    // charged.
    RunResult run_fedprox(int k, double mu_prox, double straggler_fraction) const {
        if (mu_prox < 0.0) throw ConfigError("mu_prox must be >= 0");
        if (straggler_fraction < 0.0 || straggler_fraction > 1.0) {
            throw ConfigError("fedprox straggler fraction must be in [0, 1]");
        }
        return run_sampled("fedprox", k, false, mu_prox, straggler_fraction);
    }

    // Centralized baseline: one round = the same local-epoch budget of plain
    // minibatch SGD over the pooled training set.
    RunResult run_ssgd() const {
        validate();
        RunResult res;
        res.psi1 = 1.0;

        auto init_gen = substream(seed, "init");
        ParamVector w = workload.init_params(init_gen);
        auto gen = substream(seed, "device", 0);
        DeviceState pseudo{0, pooled_train, 1.0, 0};

        for (int t = 0; t < hyper.rounds; ++t) {
            const double eta = lr_at(hyper, t);
            LocalUpdate u = local_train(workload, pseudo, w, eta, hyper.epochs,
                                        hyper.batch_size, t, t, gen);
            if (observer) observer(u, w, eta);
            w = std::move(u.new_params);
            maybe_log(res, t, "ssgd", w, eta, 1, 0, {}, t == hyper.rounds - 1);
        }
        res.final_params = std::move(w);
        return res;
    }

  private:
    std::vector<std::mt19937_64> device_streams() const {
        std::vector<std::mt19937_64> gens;
        gens.reserve(devices.size());
        for (std::size_t i = 0; i < devices.size(); ++i) {
            gens.push_back(substream(seed, "device", i));
        }
        return gens;
    }

    std::vector<double> weight_table() const {
        std::vector<double> weights(devices.size());
        for (const DeviceState& d : devices) weights[std::size_t(d.id)] = d.p;
        return weights;
    }

    // Logs on the eval cadence; force covers each run's final aggregation,
    // which must always be recorded.
    void maybe_log(RunResult& res, int t, const char* algo, const ParamVector& w, double eta,
                   int sync_count, int merge_count, std::vector<double> lambdas,
                   bool force) const {
        if (!force && t % eval_every != 0) return;
        RoundLog log;
        log.round = t;
        log.algo = algo;
        log.train_loss = workload.loss(w, *pooled_train);
        log.test_acc = workload.accuracy(w, *test);
        log.eta = eta;
        log.sync_updates = sync_count;
        log.async_merges = merge_count;
        log.lambdas = std::move(lambdas);
        res.logs.push_back(std::move(log));
    }

    RunResult run_sampled(const char* name, int k, bool charge_wait, double mu_prox,
                          double straggler_fraction) const {
        validate();
        if (k < 1 || std::size_t(k) > devices.size()) {
            throw ConfigError(std::string(name) + ": sample size k must be in [1, N]");
        }
        RunResult res;
        std::tie(res.psi1, res.psi2) = psi_split(devices);

        std::vector<std::mt19937_64> dev_gen = device_streams();
        auto init_gen = substream(seed, "init");
        ParamVector w = workload.init_params(init_gen);
        auto sample_gen = substream(seed, "sampling");

        std::vector<double> weights = weight_table();
        std::vector<double> sample_weights(devices.size());
        for (const DeviceState& d : devices) {
            sample_weights[std::size_t(d.id)] = 1.0 + double(d.tau);
        }

        int t = 0;
        while (t < hyper.rounds) {
            const double eta = lr_at(hyper, t);
            std::vector<std::size_t> sampled =
                weighted_sample_without_replacement(sample_weights, std::size_t(k), sample_gen);
            std::sort(sampled.begin(), sampled.end());

            // Reduced-epoch assignment for the proximal straggler mode, drawn
            // before any training so the device streams stay untouched.
            std::vector<int> epochs_for(sampled.size(), hyper.epochs);
            const auto n_reduced = std::size_t(straggler_fraction * double(sampled.size()));
            if (n_reduced > 0 && hyper.epochs > 1) {
                std::vector<std::size_t> reduced =
                    sample_without_replacement(sampled.size(), n_reduced, sample_gen);
                std::sort(reduced.begin(), reduced.end());
                for (std::size_t pos : reduced) {
                    epochs_for[pos] =
                        int(uniform_int(sample_gen, 1, std::uint64_t(hyper.epochs - 1)));
                }
            }

            std::vector<LocalUpdate> updates;
            int max_tau = 0;
            for (std::size_t i = 0; i < sampled.size(); ++i) {
                const DeviceState& dev = devices[sampled[i]];
                max_tau = std::max(max_tau, dev.tau);
                LocalUpdate u = local_train(workload, dev, w, eta, epochs_for[i],
                                            hyper.batch_size, t, t + dev.tau,
                                            dev_gen[std::size_t(dev.id)], mu_prox);
                if (observer) observer(u, w, eta);
                updates.push_back(std::move(u));
            }
            w = sync_aggregate(updates, weights);
            const int advance = charge_wait ? 1 + max_tau : 1;
            maybe_log(res, t, name, w, eta, int(updates.size()), 0, {}, t + advance >= hyper.rounds);
            t += advance;
        }
        res.final_params = std::move(w);
        return res;
    }
};

} // namespace hfl
