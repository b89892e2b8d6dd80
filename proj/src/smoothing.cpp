#include "fedsmooth/smoothing.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "fedsmooth/errors.hpp"

namespace fedsmooth {

namespace {

constexpr std::size_t kChunk = 128;

// Acklam's rational approximation for the lower half, p in (0, 0.5].
double acklam_lower(double p) {
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
               ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double q = p - 0.5;
    const double r = q * q;
    return (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
           (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
}

double log_choose(std::size_t n, std::size_t k) {
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
           std::lgamma(static_cast<double>(n - k) + 1.0);
}

std::size_t top_index(const std::vector<std::size_t>& counts) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < counts.size(); ++i) {
        if (counts[i] > counts[best]) best = i;
    }
    return best;
}

}  // namespace

void SmoothingConfig::validate() const {
    if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ConfigError("sigma must be positive");
    if (m < 1) throw ConfigError("m must be at least 1");
    if (n0 < 1) throw ConfigError("n0 must be at least 1");
    if (n < n0) throw ConfigError("n must be at least n0");
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
}

double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

double inv_norm_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("inv_norm_cdf: p = " + std::to_string(p) + " outside (0, 1)");
    if (p > 0.5) return -inv_norm_cdf(1.0 - p);
    double x = acklam_lower(p);
    // One Halley step against the erfc-based CDF; erfc keeps full relative
    // precision in the lower tail.
    const double e = norm_cdf(x) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
    return x;
}

double certified_radius(double pa, double pb, double sigma) {
    if (!(pb > 0.0 && pa < 1.0)) throw DomainError("certified_radius: probabilities must lie in (0, 1)");
    if (pa < pb) throw ArgumentError("certified_radius: pa < pb");
    if (pa == pb) return 0.0;
    return 0.5 * sigma * (inv_norm_cdf(pa) - inv_norm_cdf(pb));
}

double binomial_log_survival(std::size_t k, std::size_t n, double p) {
    if (k == 0) return 0.0;
    if (k > n) return -std::numeric_limits<double>::infinity();
    if (p <= 0.0) return -std::numeric_limits<double>::infinity();
    if (p >= 1.0) return 0.0;
    const double lp = std::log(p);
    const double lq = std::log1p(-p);
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    terms.reserve(n - k + 1);
    for (std::size_t i = k; i <= n; ++i) {
        const double t = log_choose(n, i) + static_cast<double>(i) * lp + static_cast<double>(n - i) * lq;
        terms.push_back(t);
        mx = std::max(mx, t);
    }
    double s = 0.0;
    for (double t : terms) s += std::exp(t - mx);
    return std::min(0.0, mx + std::log(s));
}

double clopper_pearson_lower(std::size_t k, std::size_t n, double alpha) {
    if (n == 0 || k > n) throw ArgumentError("clopper_pearson_lower: need 0 <= k <= n, n >= 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("clopper_pearson_lower: alpha outside (0, 1)");
    if (k == 0) return 0.0;
    // P(X >= k) is increasing in p; find the p where it equals alpha.
    const double target = std::log(alpha);
    double lo = 0.0;
    double hi = static_cast<double>(k) / static_cast<double>(n);
    while (hi - lo > 1e-12) {
        const double mid = 0.5 * (lo + hi);
        if (binomial_log_survival(k, n, mid) < target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return lo;
}

double binomial_test_half(std::size_t k, std::size_t n) {
    if (n == 0) return 1.0;
    const std::size_t extreme = std::max(k, n - k);
    if (2 * extreme == n) return 1.0;
    return std::min(1.0, 2.0 * std::exp(binomial_log_survival(extreme, n, 0.5)));
}

std::vector<std::size_t> mc_counts(const SoftClassifier& classifier, std::span<const double> x, double sigma,
                                   std::size_t n, std::size_t num_classes, Rng& rng) {
    if (n < 1) throw ArgumentError("mc_counts: n must be positive");
    std::vector<std::size_t> counts(num_classes, 0);
    std::normal_distribution<double> noise(0.0, sigma);
    const std::size_t d = x.size();
    for (std::size_t done = 0; done < n;) {
        const std::size_t rows = std::min(kChunk, n - done);
        Matrix batch(rows, d);
        for (std::size_t r = 0; r < rows; ++r) {
            auto row = batch.row(r);
            for (std::size_t i = 0; i < d; ++i) row[i] = x[i] + noise(rng);
        }
        const Matrix scores = classifier(batch);
        if (scores.rows != rows) throw ShapeError("classifier returned wrong number of rows");
        for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t c = argmax(scores.row(r));
            if (c >= num_classes) throw ShapeError("classifier returned more classes than expected");
            ++counts[c];
        }
        done += rows;
    }
    return counts;
}

std::optional<std::size_t> predict(const SoftClassifier& classifier, std::span<const double> x,
                                   const SmoothingConfig& cfg, std::size_t num_classes, Rng& rng) {
    cfg.validate();
    auto counts = mc_counts(classifier, x, cfg.sigma, cfg.n, num_classes, rng);
    const std::size_t top = top_index(counts);
    const std::size_t top_count = counts[top];
    counts[top] = 0;
    const std::size_t runner_count = counts[top_index(counts)];
    if (binomial_test_half(top_count, top_count + runner_count) > cfg.alpha) return std::nullopt;
    return top;
}

CertificationOutcome certify(const SoftClassifier& classifier, std::span<const double> x, const SmoothingConfig& cfg,
                             std::size_t num_classes, Rng& rng) {
    cfg.validate();
    const auto selection = mc_counts(classifier, x, cfg.sigma, cfg.n0, num_classes, rng);
    const std::size_t candidate = top_index(selection);
    const auto estimation = mc_counts(classifier, x, cfg.sigma, cfg.n, num_classes, rng);

    CertificationOutcome out;
    out.top_count = estimation[candidate];
    out.n_used = cfg.n;
    out.pa_lower = clopper_pearson_lower(out.top_count, cfg.n, cfg.alpha);
    if (out.pa_lower > 0.5) {
        out.cls = candidate;
        out.radius = certified_radius(out.pa_lower, 1.0 - out.pa_lower, cfg.sigma);
    }
    return out;
}

}  // namespace fedsmooth
