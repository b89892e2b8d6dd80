#include <doctest.h>

#include <algorithm>
#include <map>
#include <mutex>
#include <numeric>
#include <set>
#include <sstream>

#include "fedsmooth/errors.hpp"
#include "fedsmooth/federation.hpp"
#include "fedsmooth/rng.hpp"

using namespace fedsmooth;

namespace {

FederationConfig tiny_federation() {
    FederationConfig f;
    f.num_devices = 6;
    f.participation = 0.5;
    f.samples_per_device = 20;
    f.local_batches = 3;
    f.batch_size = 5;
    f.central_batch_size = 10;
    f.rounds = 3;
    f.outer_lr = 0.05;
    f.seed = 11;
    return f;
}

TrainingRecipe tiny_recipe(Ablation a = Ablation::adv_smooth) {
    TrainingRecipe r;
    r.ablation = a;
    r.attack.epsilon = 0.3;
    r.smoothing.sigma = 0.25;
    return r;
}

std::vector<Partition> make_partitions(const Dataset& data, const FederationConfig& f) {
    Rng rng = substream(f.seed, StreamKind::partition);
    return partition_heterogeneous(data.labels, data.num_classes, f, rng);
}

}  // namespace

TEST_CASE("heterogeneous partition sizes") {
    const Dataset data = synth_blobs(4, 300, 3, 0.1, 1);
    FederationConfig f = tiny_federation();
    f.samples_per_device = 500 / 4;
    for (double gamma : {0.1, 0.5, 0.9}) {
        f.gamma_device = gamma;
        const auto parts = make_partitions(data, f);
        REQUIRE(parts.size() == f.num_devices);
        for (const auto& p : parts) {
            CHECK(p.indices.size() == f.samples_per_device);
            const auto major = std::count_if(p.indices.begin(), p.indices.end(),
                                             [&](std::size_t i) { return data.labels[i] == p.major_class; });
            CHECK(static_cast<std::size_t>(major) ==
                  static_cast<std::size_t>(std::floor(gamma * static_cast<double>(f.samples_per_device))));
            CHECK(std::set<std::size_t>(p.indices.begin(), p.indices.end()).size() == p.indices.size());
        }
    }
}

TEST_CASE("gamma one half with 500 samples gives 250 from the major class") {
    const Dataset data = synth_blobs(10, 600, 2, 0.1, 2);
    FederationConfig f = tiny_federation();
    f.samples_per_device = 500;
    f.gamma_device = 0.5;
    for (const auto& p : make_partitions(data, f)) {
        const auto major = std::count_if(p.indices.begin(), p.indices.end(),
                                         [&](std::size_t i) { return data.labels[i] == p.major_class; });
        CHECK(major == 250);
    }
}

TEST_CASE("minor classes share the remainder evenly on average") {
    const Dataset data = synth_blobs(5, 400, 2, 0.1, 3);
    FederationConfig f = tiny_federation();
    f.num_devices = 200;
    f.samples_per_device = 100;
    f.gamma_device = 0.2;
    const auto parts = make_partitions(data, f);
    double share = 0.0;
    std::size_t count = 0;
    for (const auto& p : parts) {
        for (std::size_t c = 0; c < 5; ++c) {
            if (c == p.major_class) continue;
            share += static_cast<double>(std::count_if(p.indices.begin(), p.indices.end(),
                                                       [&](std::size_t i) { return data.labels[i] == c; }));
            ++count;
        }
    }
    CHECK(share / static_cast<double>(count) == doctest::Approx(80.0 / 4.0).epsilon(0.05));
}

TEST_CASE("partition errors name the class") {
    Dataset data = synth_blobs(3, 5, 2, 0.1, 1);
    FederationConfig f = tiny_federation();
    f.samples_per_device = 8;
    f.gamma_device = 0.9;
    Rng rng(1);
    try {
        partition_heterogeneous(data.labels, 3, f, rng);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("class") != std::string::npos);
    }
    std::vector<std::size_t> labels = {0, 0, 2, 2};
    try {
        partition_heterogeneous(labels, 3, f, rng);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(std::string(e.what()).find("class 1") != std::string::npos);
    }
}

TEST_CASE("client sampling") {
    CHECK(sample_clients(5, 1.0, 0, 1) == std::vector<std::size_t>{0, 1, 2, 3, 4});
    const auto ids = sample_clients(1000, 0.1, 3, 7);
    CHECK(ids.size() == 100);
    CHECK(std::is_sorted(ids.begin(), ids.end()));
    CHECK(std::set<std::size_t>(ids.begin(), ids.end()).size() == 100);
    CHECK(ids.back() < 1000);
    CHECK(sample_clients(1000, 0.1, 3, 7) == ids);
    CHECK_FALSE(sample_clients(1000, 0.1, 4, 7) == ids);
    CHECK(sample_clients(10, 0.15, 0, 1).size() == 2);
}

TEST_CASE("local training edge cases") {
    const Dataset data = synth_blobs(3, 40, 4, 0.1, 1);
    const ParamVector theta = init_params(NetworkSpec::mlp(4, {6}, 3), 1);
    FederationConfig f = tiny_federation();
    const auto parts = make_partitions(data, f);

    SUBCASE("no local batches returns theta") {
        f.local_batches = 0;
        Rng rng(1);
        CHECK(local_train(theta, parts[0], data, tiny_recipe(), f, rng).params == theta);
    }
    SUBCASE("zero learning rate returns theta") {
        f.outer_lr = 0.0;
        Rng rng(1);
        CHECK(local_train(theta, parts[0], data, tiny_recipe(), f, rng).params == theta);
    }
    SUBCASE("training list holds m copies per example") {
        for (std::size_t m : {1u, 2u, 4u}) {
            TrainingRecipe r = tiny_recipe();
            r.smoothing.m = m;
            r.attack.m = m;
            Rng rng(1);
            CHECK(local_train(theta, parts[0], data, r, f, rng).list_size == m * f.batch_size);
        }
        Rng rng(1);
        CHECK(local_train(theta, parts[0], data, tiny_recipe(Ablation::standard), f, rng).list_size == f.batch_size);
        CHECK(local_train(theta, parts[0], data, tiny_recipe(Ablation::adv_only), f, rng).list_size == f.batch_size);
    }
    SUBCASE("same stream gives identical local models") {
        Rng a(5), b(5);
        CHECK(local_train(theta, parts[1], data, tiny_recipe(), f, a).params ==
              local_train(theta, parts[1], data, tiny_recipe(), f, b).params);
    }
}

TEST_CASE("aggregation") {
    const NetworkSpec spec{{1, 2}};
    auto filled = [&](double v) { return ParamVector(spec, std::vector<double>(spec.param_count(), v)); };

    std::vector<ClientUpdate> one = {{filled(2.5), 7}};
    CHECK(aggregate(one) == filled(2.5));

    std::vector<ClientUpdate> weighted = {{filled(0.0), 1}, {filled(4.0), 3}};
    const ParamVector w = aggregate(weighted);
    for (double v : w.values()) CHECK(v == doctest::Approx(3.0));

    std::vector<ClientUpdate> equal = {{filled(1.0), 5}, {filled(2.0), 5}, {filled(6.0), 5}};
    const ParamVector e = aggregate(equal);
    for (double v : e.values()) CHECK(v == doctest::Approx(3.0));

    std::vector<ClientUpdate> same = {{filled(1.25), 2}, {filled(1.25), 9}};
    const ParamVector sm = aggregate(same);
    for (double v : sm.values()) CHECK(v == doctest::Approx(1.25));

    std::vector<ClientUpdate> reversed(weighted.rbegin(), weighted.rend());
    const auto a = aggregate(weighted), b = aggregate(reversed);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.values()[i] == doctest::Approx(b.values()[i]).epsilon(1e-15));

    CHECK_THROWS_AS(aggregate(std::vector<ClientUpdate>{}), ArgumentError);
}

TEST_CASE("training with zero rounds returns the initial model") {
    const Dataset data = synth_blobs(3, 40, 4, 0.1, 1);
    const ParamVector theta = init_params(NetworkSpec::mlp(4, {6}, 3), 1);
    FederationConfig f = tiny_federation();
    f.rounds = 0;
    const auto parts = make_partitions(data, f);
    const auto res = run_training(data, theta, parts, tiny_recipe(), f, TrainingMode::fed_smoothadv);
    CHECK(res.params == theta);
    CHECK(res.log.empty());
}

TEST_CASE("round log and access tracing") {
    const Dataset data = synth_blobs(3, 40, 4, 0.1, 1);
    const ParamVector theta = init_params(NetworkSpec::mlp(4, {6}, 3), 1);
    const FederationConfig f = tiny_federation();
    const auto parts = make_partitions(data, f);

    std::map<std::size_t, std::set<std::size_t>> reads;
    std::mutex mu;
    std::size_t rounds_seen = 0;
    TrainingHooks hooks;
    hooks.tracer = [&](std::size_t device, std::size_t row) {
        std::lock_guard lock(mu);
        reads[device].insert(row);
    };
    hooks.on_round = [&](std::size_t, const ParamVector&) { ++rounds_seen; };
    const auto res = run_training(data, theta, parts, tiny_recipe(), f, TrainingMode::fed_smoothadv, hooks);

    REQUIRE(res.log.size() == f.rounds);
    CHECK(rounds_seen == f.rounds);
    for (std::size_t t = 0; t < f.rounds; ++t) {
        CHECK(res.log[t].round == t + 1);
        CHECK(res.log[t].estimator == "stochastic");
        CHECK(std::isfinite(res.log[t].mean_loss));
    }
    CHECK_FALSE(reads.empty());
    for (const auto& [device, rows] : reads) {
        const std::set<std::size_t> own(parts[device].indices.begin(), parts[device].indices.end());
        for (auto r : rows) CHECK(own.count(r) == 1);
    }

    std::ostringstream csv;
    write_round_log(csv, res.log);
    CHECK(csv.str().rfind("round,mode,estimator,mean_loss,seconds\n1,fed_smoothadv,stochastic,", 0) == 0);
}

TEST_CASE("training is reproducible and independent of worker count") {
    const Dataset data = synth_blobs(3, 40, 4, 0.1, 1);
    const ParamVector theta = init_params(NetworkSpec::mlp(4, {6}, 3), 1);
    FederationConfig f = tiny_federation();
    const auto parts = make_partitions(data, f);
    const auto serial = run_training(data, theta, parts, tiny_recipe(), f, TrainingMode::fed_smoothadv);
    CHECK(run_training(data, theta, parts, tiny_recipe(), f, TrainingMode::fed_smoothadv).params == serial.params);
    f.workers = 3;
    CHECK(run_training(data, theta, parts, tiny_recipe(), f, TrainingMode::fed_smoothadv).params == serial.params);
    f.workers = 1;
    f.seed = 12;
    CHECK_FALSE(run_training(data, theta, parts, tiny_recipe(), f, TrainingMode::fed_smoothadv).params ==
                serial.params);
}

TEST_CASE("one full-participation device reproduces centralized training") {
    const Dataset data = synth_blobs(3, 20, 4, 0.1, 1);
    const ParamVector theta = init_params(NetworkSpec::mlp(4, {6}, 3), 1);
    FederationConfig f = tiny_federation();
    f.num_devices = 1;
    f.participation = 1.0;
    f.batch_size = 10;
    f.central_batch_size = 10;
    f.rounds = 4;
    Partition all;
    all.indices.resize(data.size());
    std::iota(all.indices.begin(), all.indices.end(), std::size_t{0});
    const std::vector<Partition> parts = {all};

    std::vector<ParamVector> fed, central;
    TrainingHooks hf, hc;
    hf.on_round = [&](std::size_t, const ParamVector& p) { fed.push_back(p); };
    hc.on_round = [&](std::size_t, const ParamVector& p) { central.push_back(p); };
    run_training(data, theta, parts, tiny_recipe(), f, TrainingMode::fed_smoothadv, hf);
    run_training(data, theta, {}, tiny_recipe(), f, TrainingMode::centralized_smoothadv, hc);
    REQUIRE(fed.size() == central.size());
    for (std::size_t t = 0; t < fed.size(); ++t) {
        for (std::size_t i = 0; i < fed[t].size(); ++i) {
            CHECK(std::abs(fed[t].values()[i] - central[t].values()[i]) <= 1e-10);
        }
    }
}

TEST_CASE("centralized rounds take at least one step") {
    const Dataset data = synth_blobs(3, 20, 4, 0.1, 1);
    const ParamVector theta = init_params(NetworkSpec::mlp(4, {6}, 3), 1);
    FederationConfig f = tiny_federation();
    f.local_batches = 1;
    f.batch_size = 2;
    f.central_batch_size = 60;  // 3 * 1 * 2 / 60 rounds to zero
    f.rounds = 1;
    const TrainingResult r = run_training(data, theta, {}, tiny_recipe(), f, TrainingMode::centralized_smoothadv);
    REQUIRE(r.log.size() == 1);
    CHECK(r.log[0].mean_loss > 0.0);
    CHECK_FALSE(std::ranges::equal(r.params.values(), theta.values()));
}

TEST_CASE("numeric failures report the round and device") {
    const Dataset data = synth_blobs(3, 40, 4, 0.1, 1);
    const NetworkSpec spec = NetworkSpec::mlp(4, {6}, 3);
    const ParamVector huge(spec, std::vector<double>(spec.param_count(), 1e300));
    const FederationConfig f = tiny_federation();
    const auto parts = make_partitions(data, f);
    try {
        run_training(data, huge, parts, tiny_recipe(Ablation::standard), f, TrainingMode::fed_smoothadv);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("round 1, device") != std::string::npos);
    }
}

TEST_CASE("estimator labels and ablation names") {
    CHECK(tiny_recipe(Ablation::standard).estimator_label() == "none");
    CHECK(tiny_recipe(Ablation::adv_only).estimator_label() == "stochastic");
    TrainingRecipe r = tiny_recipe();
    r.attack.estimator = Estimator::one_point;
    CHECK(r.estimator_label() == "one_point");
    for (Ablation a : {Ablation::standard, Ablation::adv_only, Ablation::adv_smooth}) {
        CHECK(parse_ablation(to_string(a)) == a);
    }
    CHECK_THROWS_AS(parse_ablation("adv"), ConfigError);
}

TEST_CASE("federation config validation") {
    FederationConfig f;
    CHECK_NOTHROW(f.validate());
    f.participation = 0.0;
    CHECK_THROWS_AS(f.validate(), ConfigError);
    f = {};
    f.gamma_device = 1.0;
    CHECK_THROWS_AS(f.validate(), ConfigError);
    const auto paper = FederationConfig::paper_scale();
    CHECK(paper.num_devices == 1000);
    CHECK(paper.participation == 0.1);
    CHECK(paper.samples_per_device == 500);
    CHECK(paper.batch_size == 30);
    CHECK(paper.local_batches == 20);
    CHECK(paper.rounds == 150);
    CHECK(paper.central_batch_size == 60);
    CHECK(paper.outer_lr == 0.01);
    CHECK(paper.clients_per_round() == 100);
}
