#pragma once

// l2-constrained PGD against the Gaussian-smoothed classifier, driven by
// either the back-propagated stochastic estimator or the forward-only
// one-point estimator of the smoothed class probability's gradient.

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "fedsmooth/matrix.hpp"
#include "fedsmooth/nn.hpp"
#include "fedsmooth/rng.hpp"
#include "fedsmooth/smoothing.hpp"

namespace fedsmooth {

enum class Estimator { stochastic, one_point };

std::string_view to_string(Estimator e);
Estimator parse_estimator(std::string_view s);

struct AttackConfig {
    double epsilon = 0.5;  // l2 budget in [0,1] input units
    std::size_t steps = 2;
    double inner_lr = 0.01;
    Estimator estimator = Estimator::stochastic;
    std::size_t m = 2;

    void validate() const;
};

/// Per-example Gaussian draws, one row per noise sample. Shared by every
/// PGD step of the example and by its training augmentation.
struct NoisePack {
    Matrix deltas;  // m x d

    std::size_t size() const { return deltas.rows; }
};

NoisePack draw_noise(std::size_t m, std::size_t dim, double sigma, Rng& rng);

/// m zero vectors; turns the smoothed attack into a plain attack on F.
NoisePack zero_noise(std::size_t m, std::size_t dim);

std::vector<double> project_l2_ball(std::span<const double> candidate, std::span<const double> center,
                                    double epsilon);

/// Exact gradient of -log((1/m) sum_i [F(xhat + delta_i)]_y) w.r.t. xhat.
std::vector<double> stochastic_grad(const ParamVector& params, std::span<const double> xhat, std::size_t y,
                                    const NoisePack& noise);

/// Evaluates a scalar function at each row of a matrix.
using BatchValueFn = std::function<std::vector<double>(const Matrix&)>;

/// (1/m) sum_i (delta_i / sigma^2) f(xhat + delta_i), for any f.
std::vector<double> one_point_estimate(const BatchValueFn& f, std::span<const double> xhat, const NoisePack& noise,
                                       double sigma);

/// One-point estimate of the gradient of [G(xhat)]_y; forward passes only.
std::vector<double> one_point_grad(const ParamVector& params, std::span<const double> xhat, std::size_t y,
                                   const NoisePack& noise, double sigma);

/// (1/m) sum_i [F(xhat + delta_i)]_y
double smoothed_class_prob(const ParamVector& params, std::span<const double> xhat, std::size_t y,
                           const NoisePack& noise);

/// Normalized-gradient PGD from x; every iterate is projected onto the
/// epsilon-ball around x and clamped to [0,1].
std::vector<double> smoothadv_attack(const ParamVector& params, std::span<const double> x, std::size_t y,
                                     const AttackConfig& acfg, const SmoothingConfig& scfg, const NoisePack& noise);

}  // namespace fedsmooth
