#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "errors.hpp"

namespace spinlab {

/// Pairwise (cascade) summation over a fixed-order range.  Used everywhere an
/// aggregate must not depend on accumulation chunking.
inline double pairwise_sum(std::span<const double> v) {
    if (v.empty()) return 0.0;
    if (v.size() <= 8) {
        double acc = 0.0;
        for (double x : v) acc += x;
        return acc;
    }
    std::size_t half = v.size() / 2;
    return pairwise_sum(v.subspan(0, half)) + pairwise_sum(v.subspan(half));
}

inline double mean(std::span<const double> v) {
    if (v.empty()) throw DomainError("mean of empty sample");
    return pairwise_sum(v) / static_cast<double>(v.size());
}

/// Unbiased sample standard deviation; 0 for a single observation.
inline double sample_sd(std::span<const double> v) {
    if (v.empty()) throw DomainError("sd of empty sample");
    if (v.size() == 1) return 0.0;
    double m = mean(v);
    std::vector<double> sq(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m) * (v[i] - m);
    return std::sqrt(pairwise_sum(sq) / static_cast<double>(v.size() - 1));
}

inline double standard_error(std::span<const double> v) {
    return sample_sd(v) / std::sqrt(static_cast<double>(v.size()));
}

inline double log_sum_exp(std::span<const double> v) {
    if (v.empty()) throw DomainError("log_sum_exp of empty sample");
    double m = *std::max_element(v.begin(), v.end());
    if (!std::isfinite(m)) return m;
    std::vector<double> e(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) e[i] = std::exp(v[i] - m);
    return m + std::log(pairwise_sum(e));
}

/// log((1/n) sum exp(v_i))
inline double log_mean_exp(std::span<const double> v) {
    return log_sum_exp(v) - std::log(static_cast<double>(v.size()));
}

struct LogMeanExp {
    double value = 0.0;
    double stderr_ = 0.0;    // delta-method error of value
    double jack_bias = 0.0;  // leave-one-out bias estimate (reported, not applied)
};

/// Log of the sample mean of exp(v_i) with a delta-method standard error and a
/// jackknife bias estimate.  The bias estimate degrades when one term carries
/// nearly all the weight; it is reported for diagnostics, never subtracted.
inline LogMeanExp log_mean_exp_full(std::span<const double> v) {
    LogMeanExp out;
    std::size_t n = v.size();
    out.value = log_mean_exp(v);
    if (n < 2) return out;
    // relative weights q_i = exp(v_i) / sum_j exp(v_j), so sum q_i = 1
    std::vector<double> q(n);
    double lse = out.value + std::log(static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) q[i] = std::exp(v[i] - lse);
    // Var(log mean) ~ Var(exp(v))/ (n * mean^2);  exp(v_i)/mean = n q_i
    std::vector<double> dev(n);
    for (std::size_t i = 0; i < n; ++i) {
        double r = static_cast<double>(n) * q[i] - 1.0;
        dev[i] = r * r;
    }
    double rel_var = pairwise_sum(dev) / static_cast<double>(n - 1);
    out.stderr_ = std::sqrt(rel_var / static_cast<double>(n));
    // jackknife: L_{-i} = L + log n + log1p(-q_i) - log(n-1)
    std::vector<double> loo(n);
    double shift = std::log(static_cast<double>(n)) - std::log(static_cast<double>(n - 1));
    for (std::size_t i = 0; i < n; ++i) {
        double qi = std::min(q[i], 1.0 - 1e-15);
        loo[i] = shift + std::log1p(-qi);
    }
    out.jack_bias = static_cast<double>(n - 1) * mean(loo);
    return out;
}

inline double normal_cdf(double x) {
    return 0.5 * std::erfc(-x / std::sqrt(2.0));
}

/// Two-sided Kolmogorov-Smirnov distance between the sample and a continuous
/// reference CDF.  Sorts a copy.
inline double ks_statistic(std::span<const double> sample,
                           const std::function<double(double)>& cdf) {
    if (sample.empty()) throw DomainError("ks_statistic of empty sample");
    std::vector<double> s(sample.begin(), sample.end());
    std::sort(s.begin(), s.end());
    double n = static_cast<double>(s.size());
    double d = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        double f = cdf(s[i]);
        double lo = static_cast<double>(i) / n;
        double hi = static_cast<double>(i + 1) / n;
        d = std::max(d, std::max(std::abs(f - lo), std::abs(hi - f)));
    }
    return d;
}

/// Asymptotic two-sided KS critical value at level alpha for n samples:
/// sqrt(-log(alpha/2)/2) / sqrt(n).  Good for n in the thousands.
inline double ks_critical(std::size_t n, double alpha = 0.01) {
    if (n == 0 || alpha <= 0.0 || alpha >= 1.0)
        throw DomainError("ks_critical needs n>0, alpha in (0,1)");
    return std::sqrt(-0.5 * std::log(alpha / 2.0)) / std::sqrt(static_cast<double>(n));
}

}  // namespace spinlab
