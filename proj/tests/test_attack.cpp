#include <doctest.h>

#include <cmath>
#include <random>

#include "fedsmooth/attack.hpp"
#include "fedsmooth/errors.hpp"
#include "fedsmooth/nn.hpp"
#include "fedsmooth/rng.hpp"
#include "oracles.hpp"

using namespace fedsmooth;

TEST_CASE("projection onto the l2 ball") {
    const std::vector<double> c = {0.0, 0.0};
    CHECK(project_l2_ball(std::vector<double>{0.3, 0.4}, c, 1.0) == std::vector<double>{0.3, 0.4});
    const auto p = project_l2_ball(std::vector<double>{3.0, 4.0}, c, 1.0);
    CHECK(p[0] == doctest::Approx(0.6));
    CHECK(p[1] == doctest::Approx(0.8));
    CHECK(project_l2_ball(c, c, 0.5) == c);
}

TEST_CASE("projection never leaves the ball") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g(0.0, 2.0);
    for (int t = 0; t < 200; ++t) {
        std::vector<double> x(6), center(6);
        for (auto& v : x) v = g(rng);
        for (auto& v : center) v = g(rng);
        const double eps = std::abs(g(rng)) + 0.01;
        const auto p = project_l2_ball(x, center, eps);
        CHECK(l2_distance(p, center) <= eps * (1 + 1e-12));
        if (l2_distance(x, center) <= eps) CHECK(p == x);
    }
}

TEST_CASE("fixed-noise stochastic gradient matches central differences") {
    for (unsigned s = 0; s < 20; ++s) {
        const auto p = oracle::random_network({5, 8, 6, 3}, 300 + s);
        const auto x = oracle::random_point(5, s);
        Rng rng(s);
        const NoisePack noise = draw_noise(4, 5, 0.25, rng);
        const std::size_t y = s % 3;
        const auto g = stochastic_grad(p, x, y, noise);
        const auto fd = oracle::central_diff(
            [&](const std::vector<double>& v) { return -std::log(smoothed_class_prob(p, v, y, noise)); }, x);
        CHECK(oracle::max_rel_error(g, fd) < 1e-4);
    }
}

TEST_CASE("with one zero noise vector the stochastic gradient is -grad log F") {
    const auto p = oracle::random_network({4, 6, 3}, 5);
    const auto x = oracle::random_point(4, 5);
    const auto g = stochastic_grad(p, x, 1, zero_noise(1, 4));
    const auto ig = input_grad(p, x, 1);
    const double f = forward(p, x)[1];
    for (std::size_t i = 0; i < 4; ++i) CHECK(g[i] == doctest::Approx(-ig[i] / f).epsilon(1e-10));
}

TEST_CASE("one-point estimator is unbiased on a linear probe") {
    // f(z) = w.z + c has smoothed gradient exactly w.
    const std::vector<double> w = {0.7, -1.2, 0.3};
    const double c = 0.4;
    const double sigma = 0.25;
    const BatchValueFn f = [&](const Matrix& z) {
        std::vector<double> out(z.rows);
        for (std::size_t r = 0; r < z.rows; ++r) out[r] = dot(w, z.row(r)) + c;
        return out;
    };
    const std::vector<double> x = {0.5, 0.2, 0.9};
    const std::size_t draws = 100000;
    Rng rng(21);
    std::vector<double> sum(3, 0.0), sumsq(3, 0.0);
    for (std::size_t t = 0; t < draws; ++t) {
        const auto g = one_point_estimate(f, x, draw_noise(1, 3, sigma, rng), sigma);
        for (std::size_t i = 0; i < 3; ++i) {
            sum[i] += g[i];
            sumsq[i] += g[i] * g[i];
        }
    }
    for (std::size_t i = 0; i < 3; ++i) {
        const double mean = sum[i] / draws;
        const double se = std::sqrt((sumsq[i] / draws - mean * mean) / draws);
        CHECK(std::abs(mean - w[i]) <= 3 * se);
    }
}

TEST_CASE("one-point estimate of a constant has mean zero") {
    const BatchValueFn f = [](const Matrix& z) { return std::vector<double>(z.rows, 0.8); };
    const std::vector<double> x = {0.1, 0.2};
    const std::size_t draws = 100000;
    Rng rng(22);
    std::vector<double> sum(2, 0.0), sumsq(2, 0.0);
    for (std::size_t t = 0; t < draws; ++t) {
        const auto g = one_point_estimate(f, x, draw_noise(1, 2, 0.5, rng), 0.5);
        for (std::size_t i = 0; i < 2; ++i) {
            sum[i] += g[i];
            sumsq[i] += g[i] * g[i];
        }
    }
    for (std::size_t i = 0; i < 2; ++i) {
        const double mean = sum[i] / draws;
        const double se = std::sqrt((sumsq[i] / draws - mean * mean) / draws);
        CHECK(std::abs(mean) <= 3 * se);
    }
}

TEST_CASE("one-point estimates average over concatenated packs") {
    const auto p = oracle::random_network({4, 5, 3}, 6);
    const auto x = oracle::random_point(4, 6);
    Rng rng(6);
    const NoisePack a = draw_noise(3, 4, 0.25, rng);
    const NoisePack b = draw_noise(5, 4, 0.25, rng);
    NoisePack ab;
    ab.deltas = Matrix(8, 4);
    std::copy(a.deltas.data.begin(), a.deltas.data.end(), ab.deltas.data.begin());
    std::copy(b.deltas.data.begin(), b.deltas.data.end(), ab.deltas.data.begin() + 12);
    const auto ga = one_point_grad(p, x, 2, a, 0.25);
    const auto gb = one_point_grad(p, x, 2, b, 0.25);
    const auto gab = one_point_grad(p, x, 2, ab, 0.25);
    for (std::size_t i = 0; i < 4; ++i) CHECK(gab[i] == doctest::Approx((3 * ga[i] + 5 * gb[i]) / 8).epsilon(1e-12));
}

TEST_CASE("attack stays inside the ball and the box") {
    const auto p = oracle::random_network({6, 8, 3}, 8);
    SmoothingConfig scfg;
    for (Estimator est : {Estimator::stochastic, Estimator::one_point}) {
        for (unsigned s = 0; s < 20; ++s) {
            AttackConfig acfg;
            acfg.estimator = est;
            acfg.epsilon = 0.3;
            acfg.steps = 5;
            acfg.inner_lr = 0.2;
            auto x = oracle::random_point(6, s);
            x[0] = 0.0;
            x[1] = 1.0;
            Rng rng(s);
            const auto noise = draw_noise(2, 6, scfg.sigma, rng);
            const auto xhat = smoothadv_attack(p, x, s % 3, acfg, scfg, noise);
            CHECK(l2_distance(xhat, x) <= acfg.epsilon * (1 + 1e-12));
            for (double v : xhat) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("tiny budget and zero network leave the input in place") {
    SmoothingConfig scfg;
    const auto x = oracle::random_point(4, 1);
    Rng rng(1);
    const auto noise = draw_noise(2, 4, scfg.sigma, rng);

    AttackConfig tiny;
    tiny.epsilon = 1e-12;
    const auto p = oracle::random_network({4, 5, 3}, 1);
    CHECK(l2_distance(smoothadv_attack(p, x, 0, tiny, scfg, noise), x) <= 1e-12 + 1e-14);  // coordinates near 0.5 carry ~1e-16 rounding each

    const ParamVector zero(NetworkSpec{{4, 5, 3}});
    for (Estimator est : {Estimator::stochastic, Estimator::one_point}) {
        AttackConfig acfg;
        acfg.estimator = est;
        const auto xhat = smoothadv_attack(zero, x, 0, acfg, scfg, noise);
        // The zero network has a flat output so the stochastic gradient vanishes;
        // the one-point estimate is a noise direction but the output stays in budget.
        CHECK(l2_distance(xhat, x) <= acfg.epsilon * (1 + 1e-12));
        if (est == Estimator::stochastic) CHECK(xhat == x);
    }
}

TEST_CASE("stochastic attack lowers the smoothed probability of the true class") {
    // Two-class linear model separating along the first coordinate.
    const NetworkSpec spec{{3, 2, 2}};
    std::vector<double> v(spec.param_count(), 0.0);
    ParamVector p(spec, v);
    auto vals = p.values();
    // hidden: h0 = relu(4 x0), h1 = relu(4 - 4 x0); logits: z0 = h1, z1 = h0
    vals[0] = 4.0;
    vals[3] = -4.0;
    vals[7] = 4.0;
    vals[8 + 1] = 1.0;
    vals[8 + 2] = 1.0;
    SmoothingConfig scfg;
    for (unsigned s = 0; s < 20; ++s) {
        std::vector<double> x = {0.3 + 0.01 * s, 0.5, 0.5};
        Rng rng(s);
        const auto noise = draw_noise(2, 3, scfg.sigma, rng);
        for (Estimator est : {Estimator::stochastic, Estimator::one_point}) {
            AttackConfig acfg;
            acfg.estimator = est;
            acfg.epsilon = 0.2;
            acfg.inner_lr = 0.05;
            const auto xhat = smoothadv_attack(p, x, 0, acfg, scfg, noise);
            if (est == Estimator::stochastic) {
                CHECK(smoothed_class_prob(p, xhat, 0, noise) <= smoothed_class_prob(p, x, 0, noise) + 1e-12);
            }
            CHECK(l2_distance(xhat, x) <= 0.2 + 1e-12);
        }
    }
}

TEST_CASE("attack is deterministic given the noise pack") {
    const auto p = oracle::random_network({5, 6, 3}, 2);
    const auto x = oracle::random_point(5, 2);
    SmoothingConfig scfg;
    Rng r1(9), r2(9);
    const auto n1 = draw_noise(2, 5, scfg.sigma, r1);
    const auto n2 = draw_noise(2, 5, scfg.sigma, r2);
    AttackConfig acfg;
    CHECK(smoothadv_attack(p, x, 1, acfg, scfg, n1) == smoothadv_attack(p, x, 1, acfg, scfg, n2));
}

TEST_CASE("estimator names round trip") {
    CHECK(parse_estimator(to_string(Estimator::stochastic)) == Estimator::stochastic);
    CHECK(parse_estimator(to_string(Estimator::one_point)) == Estimator::one_point);
    CHECK_THROWS_AS(parse_estimator("zeroth"), ConfigError);
}
