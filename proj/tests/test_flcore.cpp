#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "hfl/datagen.hpp"
#include "hfl/flcore.hpp"
#include "hfl/linalg.hpp"
#include "hfl/rng.hpp"
#include "hfl/workloads.hpp"

using namespace hfl;

namespace {

Dataset random_dataset(std::uint64_t seed, std::size_t m, std::size_t d, std::size_t c) {
    auto gen = substream(seed, "fl.data");
    Dataset out;
    out.feature_dim = d;
    out.num_classes = c;
    std::vector<double> x(d);
    for (std::size_t i = 0; i < m; ++i) {
        for (double& v : x) v = gaussian(gen);
        out.push_row(x, int(uniform_int(gen, 0, c - 1)));
    }
    return out;
}

std::vector<std::size_t> all_rows(const Dataset& d) {
    std::vector<std::size_t> idx(d.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

LocalUpdate make_update(int id, ParamVector params) {
    LocalUpdate u;
    u.device_id = id;
    u.new_params = std::move(params);
    u.accum_gradient.assign(u.new_params.size(), 0.0);
    u.last_step_gradient.assign(u.new_params.size(), 0.0);
    return u;
}

// Minimal workload whose gradient is the columnwise feature mean, independent
// of the parameters. Lets heterogeneity tests set gradients directly.
struct MeanGradientWorkload {
    std::size_t input_dim = 0;
    std::size_t dim() const { return input_dim; }
    ParamVector gradient(std::span<const double>, const Dataset& data,
                         std::span<const std::size_t> batch) const {
        ParamVector g(input_dim, 0.0);
        for (std::size_t i : batch) {
            const double* x = data.row(i);
            for (std::size_t j = 0; j < input_dim; ++j) g[j] += x[j];
        }
        for (double& v : g) v /= double(batch.size());
        return g;
    }
};

} // namespace

TEST_CASE("learning-rate schedule") {
    HyperParams h;
    h.eta0 = 0.1;
    CHECK(lr_at(h, 0) == 0.1);
    CHECK(lr_at(h, 1) == 0.05);
    CHECK(lr_at(h, 9) == Catch::Approx(0.01).epsilon(1e-15));
    h.decay = LrDecay::constant;
    CHECK(lr_at(h, 123) == 0.1);
    CHECK_THROWS_AS(lr_at(h, -1), ProtocolError);
}

TEST_CASE("merge weight decays in the issued-round age") {
    CHECK(lambda_at(0.5, 7, 7) == 0.5);
    CHECK(lambda_at(0.5, 8, 7) == Catch::Approx(0.18393972058572117).epsilon(1e-15));
    double tiny = lambda_at(0.5, 60, 10);
    CHECK(tiny == Catch::Approx(9.643749239819589e-23).epsilon(1e-12));
    CHECK(tiny >= 0.0);
    CHECK(lambda_at(0.5, 100, 3, 0.0) == 0.5); // rate 0 disables decay
    CHECK(lambda_at(2.0, 5, 5) == 1.0);        // clamped into [0, 1]
    CHECK_THROWS_AS(lambda_at(0.5, 3, 5), ProtocolError);
    CHECK_THROWS_AS(lambda_at(0.5, 3, -1), ProtocolError);
}

TEST_CASE("hyperparameter validation") {
    HyperParams h;
    CHECK_NOTHROW(h.validate());
    SECTION("lambda0 range") {
        h.lambda0 = 1.0;
        CHECK_THROWS_AS(h.validate(), ConfigError);
    }
    SECTION("epochs") {
        h.epochs = 0;
        CHECK_THROWS_AS(h.validate(), ConfigError);
    }
    SECTION("negative rate") {
        h.lambda_rate = -0.5;
        CHECK_THROWS_AS(h.validate(), ConfigError);
    }
}

TEST_CASE("local training with zero learning rate is a no-op") {
    Dataset shard = random_dataset(40, 30, 4, 3);
    LogisticWorkload wl{4, 3, 1e-4};
    DeviceState dev{0, &shard, 1.0, 0};
    ParamVector issued(wl.dim(), 0.25);
    auto gen = substream(1, "device", 0);
    LocalUpdate u = local_train(wl, dev, issued, 0.0, 2, 8, 3, 3, gen);
    CHECK(u.new_params == issued);
    for (double g : u.accum_gradient) CHECK(g == 0.0);
    CHECK(u.issued_round == 3);
}

TEST_CASE("one full-batch epoch is one gradient step") {
    Dataset shard = random_dataset(41, 20, 4, 3);
    LogisticWorkload wl{4, 3, 1e-4};
    DeviceState dev{0, &shard, 1.0, 0};
    auto pgen = substream(2, "params");
    ParamVector issued(wl.dim());
    for (double& v : issued) v = gaussian(pgen) * 0.2;

    auto gen = substream(2, "device", 0);
    double eta = 0.05;
    LocalUpdate u = local_train(wl, dev, issued, eta, 1, int(shard.size()), 0, 0, gen);

    ParamVector g = wl.gradient(issued, shard, all_rows(shard));
    for (std::size_t i = 0; i < issued.size(); ++i) {
        CHECK(u.new_params[i] == Catch::Approx(issued[i] - eta * g[i]).margin(1e-12));
        CHECK(u.last_step_gradient[i] == Catch::Approx(g[i]).margin(1e-12));
    }
    CHECK_NOTHROW(validate_update_relation(u, issued, eta));
}

TEST_CASE("local training descends on the convex workload") {
    int descended = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        Dataset shard = random_dataset(1000 + trial, 24, 3, 3);
        LogisticWorkload wl{3, 3, 1e-4};
        DeviceState dev{0, &shard, 1.0, 0};
        auto pgen = substream(trial, "params");
        ParamVector issued(wl.dim());
        for (double& v : issued) v = gaussian(pgen) * 0.5;
        auto gen = substream(trial, "device", 0);
        LocalUpdate u = local_train(wl, dev, issued, 0.01, 1, 8, 0, 0, gen);
        descended += (wl.loss(u.new_params, shard) <= wl.loss(issued, shard));
    }
    CHECK(descended >= 95);
}

TEST_CASE("local training rejects bad inputs") {
    LogisticWorkload wl{4, 3, 1e-4};
    ParamVector issued(wl.dim(), 0.0);
    auto gen = substream(3, "device", 0);
    SECTION("empty shard") {
        Dataset empty;
        empty.feature_dim = 4;
        empty.num_classes = 3;
        DeviceState dev{7, &empty, 1.0, 0};
        CHECK_THROWS_AS(local_train(wl, dev, issued, 0.1, 1, 8, 0, 0, gen), DataError);
        DeviceState null_dev{8, nullptr, 1.0, 0};
        CHECK_THROWS_AS(local_train(wl, null_dev, issued, 0.1, 1, 8, 0, 0, gen), DataError);
    }
    SECTION("wrong parameter size") {
        Dataset shard = random_dataset(42, 10, 4, 3);
        DeviceState dev{0, &shard, 1.0, 0};
        ParamVector bad(wl.dim() + 2, 0.0);
        CHECK_THROWS_AS(local_train(wl, dev, bad, 0.1, 1, 8, 0, 0, gen), DimensionError);
    }
}

TEST_CASE("update relation validation catches tampering") {
    Dataset shard = random_dataset(43, 16, 3, 3);
    LogisticWorkload wl{3, 3, 1e-4};
    DeviceState dev{0, &shard, 1.0, 0};
    ParamVector issued(wl.dim(), 0.1);
    auto gen = substream(4, "device", 0);
    LocalUpdate u = local_train(wl, dev, issued, 0.05, 2, 4, 0, 0, gen);
    CHECK_NOTHROW(validate_update_relation(u, issued, 0.05));
    u.accum_gradient[0] += 1e-3;
    CHECK_THROWS_AS(validate_update_relation(u, issued, 0.05), ProtocolError);
}

TEST_CASE("proximal training reduces to plain training at mu = 0") {
    Dataset shard = random_dataset(44, 25, 4, 3);
    LogisticWorkload wl{4, 3, 1e-4};
    DeviceState dev{0, &shard, 1.0, 0};
    ParamVector issued(wl.dim(), 0.3);
    auto g1 = substream(5, "device", 0);
    auto g2 = substream(5, "device", 0);
    LocalUpdate plain = local_train(wl, dev, issued, 0.05, 3, 8, 0, 0, g1);
    LocalUpdate prox = fedprox_local_train(wl, dev, issued, 0.05, 3, 8, 0.0, 0, 0, g2);
    CHECK(plain.new_params == prox.new_params);
    CHECK(plain.accum_gradient == prox.accum_gradient);
}

TEST_CASE("a huge proximal coefficient pins the model to its anchor") {
    Dataset shard = random_dataset(45, 40, 4, 3);
    LogisticWorkload wl{4, 3, 1e-4};
    DeviceState dev{0, &shard, 1.0, 0};
    ParamVector issued(wl.dim(), 0.2);
    // Explicit SGD needs eta * mu < 2 to stay stable, so the dominance check
    // runs at eta = 1e-7 rather than the full-speed schedule.
    auto gen = substream(6, "device", 0);
    LocalUpdate u = fedprox_local_train(wl, dev, issued, 1e-7, 1, 8, 1e6, 0, 0, gen);
    ParamVector delta = u.new_params;
    axpy(-1.0, issued, delta);
    CHECK(std::sqrt(l2_norm_sq(delta)) < 1e-3);
}

TEST_CASE("displacement shrinks as the proximal coefficient grows") {
    Dataset shard = random_dataset(46, 30, 4, 3);
    LogisticWorkload wl{4, 3, 1e-4};
    DeviceState dev{0, &shard, 1.0, 0};
    ParamVector issued(wl.dim(), 0.2);
    double prev = -1.0;
    for (double mu : {0.0, 1.0, 10.0, 100.0}) {
        auto gen = substream(7, "device", 0);
        LocalUpdate u = fedprox_local_train(wl, dev, issued, 1e-3, 1, 8, mu, 0, 0, gen);
        ParamVector delta = u.new_params;
        axpy(-1.0, issued, delta);
        double norm = std::sqrt(l2_norm_sq(delta));
        if (prev >= 0.0) CHECK(norm < prev);
        prev = norm;
    }
}

TEST_CASE("proximal term vanishes at the anchor point") {
    // First step starts at the anchor, so one full-batch step must match the
    // unregularized step exactly, whatever mu is.
    Dataset shard = random_dataset(47, 15, 3, 3);
    LogisticWorkload wl{3, 3, 1e-4};
    DeviceState dev{0, &shard, 1.0, 0};
    ParamVector issued(wl.dim(), 0.1);
    auto g1 = substream(8, "device", 0);
    auto g2 = substream(8, "device", 0);
    LocalUpdate plain = local_train(wl, dev, issued, 0.05, 1, int(shard.size()), 0, 0, g1);
    LocalUpdate prox =
        fedprox_local_train(wl, dev, issued, 0.05, 1, int(shard.size()), 50.0, 0, 0, g2);
    CHECK(plain.new_params == prox.new_params);
}

TEST_CASE("fedprox rejects a negative proximal coefficient") {
    Dataset shard = random_dataset(48, 10, 3, 3);
    LogisticWorkload wl{3, 3, 1e-4};
    DeviceState dev{0, &shard, 1.0, 0};
    ParamVector issued(wl.dim(), 0.0);
    auto gen = substream(9, "device", 0);
    CHECK_THROWS_AS(fedprox_local_train(wl, dev, issued, 0.1, 1, 8, -1.0, 0, 0, gen),
                    ConfigError);
}

TEST_CASE("synchronous aggregation") {
    std::vector<double> weights = {0.2, 0.3, 0.5};

    SECTION("identical inputs are a fixed point") {
        std::vector<LocalUpdate> ups;
        ups.push_back(make_update(0, {1.5, -2.0}));
        ups.push_back(make_update(1, {1.5, -2.0}));
        ups.push_back(make_update(2, {1.5, -2.0}));
        CHECK(sync_aggregate(ups, weights) == ParamVector{1.5, -2.0});
    }
    SECTION("midpoint of two equal-weight devices") {
        std::vector<LocalUpdate> ups;
        ups.push_back(make_update(0, {0.0, 0.0}));
        ups.push_back(make_update(1, {2.0, 2.0}));
        ParamVector out = sync_aggregate(ups, {0.5, 0.5});
        CHECK(out[0] == Catch::Approx(1.0).epsilon(1e-15));
        CHECK(out[1] == Catch::Approx(1.0).epsilon(1e-15));
    }
    SECTION("absent devices renormalize the rest") {
        std::vector<LocalUpdate> ups;
        ups.push_back(make_update(2, {1.0, 0.0}));
        ups.push_back(make_update(0, {0.0, 1.0}));
        ParamVector out = sync_aggregate(ups, weights);
        CHECK(out[0] == Catch::Approx(0.5 / 0.7).epsilon(1e-12));
        CHECK(out[1] == Catch::Approx(0.2 / 0.7).epsilon(1e-12));
    }
    SECTION("input order does not change the result") {
        std::vector<LocalUpdate> fwd, rev;
        fwd.push_back(make_update(0, {0.1, 0.9}));
        fwd.push_back(make_update(1, {0.4, 0.2}));
        fwd.push_back(make_update(2, {0.7, 0.3}));
        rev.push_back(fwd[2]);
        rev.push_back(fwd[0]);
        rev.push_back(fwd[1]);
        CHECK(sync_aggregate(fwd, weights) == sync_aggregate(rev, weights));
    }
    SECTION("no reporters is a protocol error") {
        CHECK_THROWS_AS(sync_aggregate({}, weights), ProtocolError);
    }
    SECTION("zero total weight is a protocol error") {
        std::vector<LocalUpdate> ups;
        ups.push_back(make_update(0, {1.0}));
        CHECK_THROWS_AS(sync_aggregate(ups, {0.0, 1.0}), ProtocolError);
    }
}

TEST_CASE("stale-gradient compensation") {
    LocalUpdate u = make_update(0, {0.0, 0.0});
    u.accum_gradient = {1.0, 0.0};
    u.last_step_gradient = {0.0, 2.0};

    SECTION("zero displacement returns the raw gradient") {
        ParamVector joint = {0.4, 0.6};
        CHECK(compensate_gradient(u, joint, joint) == u.accum_gradient);
    }
    SECTION("rank-1 correction along the factor") {
        ParamVector backup = {0.0, 0.0};
        ParamVector current = {0.1, 0.2};
        ParamVector ghat = compensate_gradient(u, current, backup);
        // Default factor is the last minibatch gradient (0,2):
        // c = (0,2)·(0.1,0.2) = 0.4, ghat = (1,0) + 0.4 * (0,2) = (1, 0.8).
        CHECK(ghat[0] == Catch::Approx(1.0).epsilon(1e-15));
        CHECK(ghat[1] == Catch::Approx(0.8).epsilon(1e-15));
    }
    SECTION("correction is always parallel to the factor") {
        auto gen = substream(10, "comp");
        for (int trial = 0; trial < 25; ++trial) {
            LocalUpdate r = make_update(0, {0.0, 0.0, 0.0});
            r.accum_gradient = {gaussian(gen), gaussian(gen), gaussian(gen)};
            r.last_step_gradient = r.accum_gradient;
            ParamVector backup = {gaussian(gen), gaussian(gen), gaussian(gen)};
            ParamVector current = {gaussian(gen), gaussian(gen), gaussian(gen)};
            ParamVector ghat = compensate_gradient(r, current, backup);
            double c = 0.0;
            for (std::size_t i = 0; i < 3; ++i) {
                c += r.accum_gradient[i] * (current[i] - backup[i]);
            }
            for (std::size_t i = 0; i < 3; ++i) {
                CHECK(ghat[i] - r.accum_gradient[i] ==
                      Catch::Approx(c * r.accum_gradient[i]).margin(1e-12));
            }
        }
    }
    SECTION("alternative factor uses the whole accumulated step") {
        ParamVector backup = {0.0, 0.0};
        ParamVector current = {0.3, 0.5};
        ParamVector ghat = compensate_gradient(u, current, backup, CompFactor::accum);
        // c = (1,0)·(0.3,0.5) = 0.3, so ghat = (1,0) + 0.3 * (1,0) = (1.3, 0).
        CHECK(ghat[0] == Catch::Approx(1.3).epsilon(1e-15));
        CHECK(ghat[1] == 0.0);
    }
    SECTION("size mismatches are rejected") {
        ParamVector joint = {0.0, 0.0, 0.0};
        CHECK_THROWS_AS(compensate_gradient(u, joint, joint), DimensionError);
    }
}

TEST_CASE("asynchronous merge") {
    SECTION("extreme weights") {
        LocalUpdate u = make_update(0, {3.0, 5.0});
        ParamVector ghat = {1.0, 1.0};
        ParamVector joint = {2.0, 2.0};
        ParamVector untouched = joint;
        async_merge(joint, u, ghat, 0.1, 0.0);
        CHECK(joint == untouched);
        async_merge(joint, u, ghat, 0.1, 1.0);
        CHECK(joint[0] == Catch::Approx(3.0 - 0.1).epsilon(1e-15));
        CHECK(joint[1] == Catch::Approx(5.0 - 0.1).epsilon(1e-15));
    }
    SECTION("midpoint merge") {
        LocalUpdate u = make_update(0, {0.0, 0.0});
        ParamVector ghat = {0.0, 0.0};
        ParamVector joint = {2.0, 2.0};
        async_merge(joint, u, ghat, 0.1, 0.5);
        CHECK(joint[0] == Catch::Approx(1.0).epsilon(1e-15));
        CHECK(joint[1] == Catch::Approx(1.0).epsilon(1e-15));
    }
    SECTION("result stays between joint and straggler term") {
        auto gen = substream(11, "merge");
        for (int trial = 0; trial < 25; ++trial) {
            LocalUpdate u = make_update(0, {gaussian(gen), gaussian(gen)});
            ParamVector ghat = {gaussian(gen), gaussian(gen)};
            ParamVector joint = {gaussian(gen), gaussian(gen)};
            double eta = 0.05;
            double lam = uniform_double(gen);
            ParamVector before = joint;
            async_merge(joint, u, ghat, eta, lam);
            for (std::size_t i = 0; i < joint.size(); ++i) {
                double term = u.new_params[i] - eta * ghat[i];
                double lo = std::min(before[i], term) - 1e-12;
                double hi = std::max(before[i], term) + 1e-12;
                CHECK(joint[i] >= lo);
                CHECK(joint[i] <= hi);
            }
        }
    }
    SECTION("weight-preserving mode scales the straggler term") {
        LocalUpdate u = make_update(0, {4.0, 4.0});
        ParamVector ghat = {0.0, 0.0};
        ParamVector joint = {0.0, 0.0};
        async_merge(joint, u, ghat, 0.1, 0.5, MergeMode::renorm_pi, 0.25);
        CHECK(joint[0] == Catch::Approx(0.5 * 0.25 * 4.0).epsilon(1e-15));
    }
    SECTION("lambda outside [0,1] is rejected") {
        LocalUpdate u = make_update(0, {1.0});
        ParamVector ghat = {0.0};
        ParamVector joint = {0.0};
        CHECK_THROWS_AS(async_merge(joint, u, ghat, 0.1, 1.5), ProtocolError);
        CHECK_THROWS_AS(async_merge(joint, u, ghat, 0.1, -0.1), ProtocolError);
    }
}

TEST_CASE("dissimilarity estimate") {
    SECTION("identical shards give exactly one") {
        Dataset shard = random_dataset(49, 30, 4, 3);
        LogisticWorkload wl{4, 3, 1e-4};
        std::vector<DeviceState> devices = {{0, &shard, 0.5, 0}, {1, &shard, 0.5, 0}};
        ParamVector w(wl.dim(), 0.0);
        CHECK(estimate_dissimilarity(wl, devices, w) == Catch::Approx(1.0).epsilon(1e-9));
    }
    SECTION("cancelling gradients are flagged, not divided by") {
        Dataset pos, neg;
        pos.feature_dim = neg.feature_dim = 2;
        pos.num_classes = neg.num_classes = 2;
        pos.push_row(std::vector<double>{1.0, 1.0}, 0);
        neg.push_row(std::vector<double>{-1.0, -1.0}, 0);
        MeanGradientWorkload wl{2};
        std::vector<DeviceState> devices = {{0, &pos, 0.5, 0}, {1, &neg, 0.5, 0}};
        ParamVector w(2, 0.0);
        CHECK_THROWS_AS(estimate_dissimilarity(wl, devices, w), ProtocolError);
    }
    SECTION("heterogeneous generation scores higher than iid") {
        int hetero_wins = 0;
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            SyntheticSpec hetero;
            hetero.gamma = hetero.xi = 1.0;
            hetero.num_devices = 6;
            hetero.d = 8;
            hetero.num_classes = 4;
            hetero.min_samples = 40;
            hetero.total_samples = 240;
            hetero.seed = seed;
            SyntheticSpec iid = hetero;
            iid.gamma = iid.xi = 0.0;
            iid.iid_mode = true;

            auto score = [](const SyntheticSpec& spec) {
                SyntheticOutput out = gen_synthetic(spec);
                std::size_t total = 0;
                for (const auto& d : out.devices) total += d.size();
                std::vector<DeviceState> devices;
                for (std::size_t i = 0; i < out.devices.size(); ++i) {
                    devices.push_back({int(i), &out.devices[i],
                                       double(out.devices[i].size()) / double(total), 0});
                }
                LogisticWorkload wl{spec.d, spec.num_classes, 1e-4};
                ParamVector w(wl.dim(), 0.0);
                return estimate_dissimilarity(wl, devices, w);
            };
            hetero_wins += (score(hetero) > score(iid));
        }
        CHECK(hetero_wins >= 3);
    }
    SECTION("no devices is a config error") {
        LogisticWorkload wl{2, 2, 1e-4};
        CHECK_THROWS_AS(estimate_dissimilarity(wl, {}, ParamVector(wl.dim(), 0.0)),
                        ConfigError);
    }
}

TEST_CASE("theory constants validate positivity") {
    TheoryConstants c;
    CHECK_NOTHROW(c.validate()); // all absent is fine
    c.L = 1.0;
    c.mu = 0.5;
    CHECK_NOTHROW(c.validate());
    c.B = -1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("schedule bounds match hand evaluation") {
    CHECK(convex_lr_bound(1.0, 1.0, 1.0, 0.5, 0.5, 4) == 1.0);
    CHECK(nonconvex_lr_bound(2.0, 1.0, 0.5, 0.5) == Catch::Approx(0.5).epsilon(1e-15));
    CHECK(std::isinf(convex_lr_bound(1.0, 1.0, 1.0, 0.0, 0.5, 4)));
}

TEST_CASE("schedule check scans every round") {
    TheoryConstants c;
    c.L = 1.0;
    c.mu = 1.0;
    c.B = 1.0;
    HyperParams h;
    h.eta0 = 0.1;
    h.rounds = 200;

    SECTION("paper-style schedule passes, tightest at the horizon") {
        auto rep = lr_bound_check(c, 0.5, 0.5, h);
        REQUIRE(rep.has_value());
        CHECK(rep->convex_ok);
        CHECK(rep->convex_tightest_t == 200);
        CHECK(rep->convex_bound_at_tightest == Catch::Approx(0.02).epsilon(1e-12));
        CHECK(rep->eta_at_tightest == Catch::Approx(0.1 / 201.0).epsilon(1e-12));
        CHECK(rep->nonconvex_ok);
        CHECK(rep->nonconvex_bound == Catch::Approx(1.0).epsilon(1e-12));
    }
    SECTION("oversized constant schedule fails the convex bound") {
        HyperParams big = h;
        big.eta0 = 10.0;
        big.decay = LrDecay::constant;
        auto rep = lr_bound_check(c, 0.5, 0.5, big);
        REQUIRE(rep.has_value());
        CHECK_FALSE(rep->convex_ok);
    }
    SECTION("missing constants disable the diagnostic") {
        TheoryConstants partial;
        partial.L = 1.0;
        CHECK_FALSE(lr_bound_check(partial, 0.5, 0.5, h).has_value());
    }
    SECTION("weights must sum to one") {
        CHECK_THROWS_AS(lr_bound_check(c, 0.7, 0.7, h), ConfigError);
    }
}
