#pragma once

// Randomized smoothing: Monte-Carlo evaluation of the Gaussian-smoothed
// classifier, prediction with abstention, and l2 certification.

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fedsmooth/matrix.hpp"
#include "fedsmooth/rng.hpp"

namespace fedsmooth {

struct SmoothingConfig {
    double sigma = 0.25;
    std::size_t m = 2;     // noise samples per example for training/attack
    std::size_t n0 = 100;  // selection samples for certify
    std::size_t n = 1000;  // estimation samples for certify / predict
    double alpha = 0.001;

    void validate() const;
};

/// Batched soft classifier: maps a matrix of inputs (one per row) to class
/// scores (one row per input). Only the argmax of each row is used here.
using SoftClassifier = std::function<Matrix(const Matrix&)>;

struct CertificationOutcome {
    std::optional<std::size_t> cls;  // empty = abstain
    double radius = 0.0;
    std::size_t top_count = 0;
    double pa_lower = 0.0;
    std::size_t n_used = 0;

    bool certified() const { return cls.has_value(); }
};

/// Standard normal CDF.
double norm_cdf(double z);

/// Standard normal quantile. Throws DomainError unless 0 < p < 1.
double inv_norm_cdf(double p);

/// (sigma/2)(inv_norm_cdf(pa) - inv_norm_cdf(pb)). Requires 0 < pb <= pa < 1.
double certified_radius(double pa, double pb, double sigma);

/// log P(X >= k) for X ~ Binomial(n, p).
double binomial_log_survival(std::size_t k, std::size_t n, double p);

/// One-sided (1 - alpha) Clopper-Pearson lower bound on the success
/// probability after k successes in n trials.
double clopper_pearson_lower(std::size_t k, std::size_t n, double alpha);

/// Exact two-sided binomial test p-value against p = 1/2.
double binomial_test_half(std::size_t k, std::size_t n);

/// Classifies n Gaussian corruptions of x (noise is not clipped) and
/// returns per-class counts. num_classes sizes the result.
std::vector<std::size_t> mc_counts(const SoftClassifier& classifier, std::span<const double> x, double sigma,
                                   std::size_t n, std::size_t num_classes, Rng& rng);

/// Smoothed prediction with abstention (empty optional).
std::optional<std::size_t> predict(const SoftClassifier& classifier, std::span<const double> x,
                                   const SmoothingConfig& cfg, std::size_t num_classes, Rng& rng);

/// Two-phase certification: n0 samples pick the candidate class, n fresh
/// samples bound its probability from below.
CertificationOutcome certify(const SoftClassifier& classifier, std::span<const double> x, const SmoothingConfig& cfg,
                             std::size_t num_classes, Rng& rng);

}  // namespace fedsmooth
