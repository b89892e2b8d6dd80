#include "fedsmooth/attack.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fedsmooth/errors.hpp"

namespace fedsmooth {

namespace {

constexpr double kProbFloor = 1e-300;
constexpr double kZeroGradNorm = 1e-12;

Matrix shifted(std::span<const double> xhat, const NoisePack& noise) {
    if (noise.deltas.cols != xhat.size()) throw ShapeError("noise dimension does not match input");
    Matrix pts = noise.deltas;
    for (std::size_t r = 0; r < pts.rows; ++r) {
        auto row = pts.row(r);
        for (std::size_t i = 0; i < row.size(); ++i) row[i] += xhat[i];
    }
    return pts;
}

}  // namespace

std::string_view to_string(Estimator e) {
    switch (e) {
        case Estimator::stochastic:
            return "stochastic";
        case Estimator::one_point:
            return "one_point";
    }
    return "?";
}

Estimator parse_estimator(std::string_view s) {
    if (s == "stochastic") return Estimator::stochastic;
    if (s == "one_point" || s == "one-point") return Estimator::one_point;
    throw ConfigError("unknown estimator '" + std::string(s) + "' (expected stochastic or one_point)");
}

void AttackConfig::validate() const {
    if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (steps < 1) throw ConfigError("attack steps must be at least 1");
    if (!(inner_lr > 0.0)) throw ConfigError("inner_lr must be positive");
    if (m < 1) throw ConfigError("m must be at least 1");
}

NoisePack draw_noise(std::size_t m, std::size_t dim, double sigma, Rng& rng) {
    NoisePack pack{Matrix(m, dim)};
    std::normal_distribution<double> dist(0.0, sigma);
    for (double& v : pack.deltas.data) v = dist(rng);
    return pack;
}

NoisePack zero_noise(std::size_t m, std::size_t dim) { return NoisePack{Matrix(m, dim)}; }

std::vector<double> project_l2_ball(std::span<const double> candidate, std::span<const double> center,
                                    double epsilon) {
    const double dist = l2_distance(candidate, center);
    std::vector<double> out(candidate.begin(), candidate.end());
    if (dist <= epsilon) return out;
    const double scale = epsilon / dist;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = center[i] + scale * (candidate[i] - center[i]);
    return out;
}

std::vector<double> stochastic_grad(const ParamVector& params, std::span<const double> xhat, std::size_t y,
                                    const NoisePack& noise) {
    if (noise.size() == 0) throw ArgumentError("stochastic_grad: empty noise pack");
    const ClassProbGrad pg = class_prob_and_input_grad(params, shifted(xhat, noise), y);
    double prob_sum = 0.0;
    std::vector<double> grad(xhat.size(), 0.0);
    for (std::size_t i = 0; i < noise.size(); ++i) {
        prob_sum += pg.prob[i];
        axpy(1.0, pg.grad.row(i), grad);
    }
    const double m = static_cast<double>(noise.size());
    if (!(prob_sum / m >= kProbFloor)) {
        throw NumericError("stochastic_grad: smoothed class probability underflowed");
    }
    for (double& g : grad) g = -g / prob_sum;
    return grad;
}

std::vector<double> one_point_estimate(const BatchValueFn& f, std::span<const double> xhat, const NoisePack& noise,
                                       double sigma) {
    if (noise.size() == 0) throw ArgumentError("one_point_estimate: empty noise pack");
    if (!(sigma > 0.0)) throw DomainError("one_point_estimate: sigma must be positive");
    const std::vector<double> values = f(shifted(xhat, noise));
    if (values.size() != noise.size()) throw ShapeError("value function returned wrong number of entries");
    const double scale = 1.0 / (static_cast<double>(noise.size()) * sigma * sigma);
    std::vector<double> est(xhat.size(), 0.0);
    for (std::size_t i = 0; i < noise.size(); ++i) axpy(values[i] * scale, noise.deltas.row(i), est);
    return est;
}

std::vector<double> one_point_grad(const ParamVector& params, std::span<const double> xhat, std::size_t y,
                                   const NoisePack& noise, double sigma) {
    if (y >= params.spec().num_classes()) throw ShapeError("class index out of range");
    const BatchValueFn class_prob = [&](const Matrix& pts) {
        const Matrix probs = forward(params, pts);
        std::vector<double> v(pts.rows);
        for (std::size_t r = 0; r < pts.rows; ++r) v[r] = probs(r, y);
        return v;
    };
    return one_point_estimate(class_prob, xhat, noise, sigma);
}

double smoothed_class_prob(const ParamVector& params, std::span<const double> xhat, std::size_t y,
                           const NoisePack& noise) {
    const Matrix probs = forward(params, shifted(xhat, noise));
    double s = 0.0;
    for (std::size_t r = 0; r < probs.rows; ++r) s += probs(r, y);
    return s / static_cast<double>(probs.rows);
}

std::vector<double> smoothadv_attack(const ParamVector& params, std::span<const double> x, std::size_t y,
                                     const AttackConfig& acfg, const SmoothingConfig& scfg, const NoisePack& noise) {
    acfg.validate();
    std::vector<double> xhat(x.begin(), x.end());
    for (std::size_t step = 0; step < acfg.steps; ++step) {
        std::vector<double> g;
        if (acfg.estimator == Estimator::stochastic) {
            g = stochastic_grad(params, xhat, y, noise);
        } else {
            g = one_point_grad(params, xhat, y, noise, scfg.sigma);
            for (double& v : g) v = -v;
        }
        const double norm = l2_norm(g);
        if (!std::isfinite(norm)) throw NumericError("attack gradient is not finite");
        if (norm < kZeroGradNorm) continue;
        axpy(acfg.inner_lr / norm, g, xhat);
        xhat = project_l2_ball(xhat, x, acfg.epsilon);
        for (double& v : xhat) v = std::clamp(v, 0.0, 1.0);
    }
    return xhat;
}

}  // namespace fedsmooth
