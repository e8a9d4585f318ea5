#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace spinlab {

/// Mixture of interaction degrees: coefficient gamma_p for p = 1, 2, ...
/// The model covariance function is xi(t) = sum_p gamma_p^2 t^p on [-1, 1].
class Mixture {
  public:
    Mixture() = default;

    /// coeffs[k] is gamma_{k+1}.  All entries must be >= 0 and at least one
    /// positive; trailing zeros are trimmed.
    static Mixture validated(std::vector<double> coeffs) {
        for (double g : coeffs) {
            if (!(g >= 0.0))
                throw NegativeCoefficient("mixture coefficient must be >= 0, got " +
                                          std::to_string(g));
        }
        while (!coeffs.empty() && coeffs.back() == 0.0) coeffs.pop_back();
        if (coeffs.empty()) throw AllZero("mixture needs at least one positive coefficient");
        Mixture m;
        m.coeffs_ = std::move(coeffs);
        return m;
    }

    static Mixture pure(int p, double gamma = 1.0) {
        if (p < 1) throw DomainError("pure mixture needs p >= 1");
        std::vector<double> c(static_cast<std::size_t>(p), 0.0);
        c.back() = gamma;
        return validated(std::move(c));
    }

    const std::vector<double>& coeffs() const { return coeffs_; }

    int max_degree() const { return static_cast<int>(coeffs_.size()); }

    double coeff(int p) const {
        if (p < 1 || p > max_degree()) return 0.0;
        return coeffs_[static_cast<std::size_t>(p - 1)];
    }

    /// Degrees p with gamma_p > 0, ascending.
    std::vector<int> active_degrees() const {
        std::vector<int> out;
        for (int p = 1; p <= max_degree(); ++p)
            if (coeff(p) > 0.0) out.push_back(p);
        return out;
    }

    /// xi and its first two derivatives: xi(t) = sum gamma_p^2 t^p, |t| <= 1.
    double xi(double t, int order = 0) const {
        if (!(std::abs(t) <= 1.0 + 1e-12))
            throw DomainError("xi argument must lie in [-1, 1], got " + std::to_string(t));
        t = std::clamp(t, -1.0, 1.0);
        double acc = 0.0;
        if (order == 0) {
            for (int p = max_degree(); p >= 1; --p) acc = acc * t + coeff(p) * coeff(p);
            acc *= t;  // polynomial has no constant term
        } else if (order == 1) {
            for (int p = max_degree(); p >= 1; --p)
                acc = acc * t + static_cast<double>(p) * coeff(p) * coeff(p);
        } else if (order == 2) {
            for (int p = max_degree(); p >= 2; --p)
                acc = acc * t + static_cast<double>(p) * (p - 1) * coeff(p) * coeff(p);
        } else {
            throw DomainError("xi derivative order must be 0, 1 or 2");
        }
        return acc;
    }

    bool operator==(const Mixture& o) const { return coeffs_ == o.coeffs_; }

  private:
    std::vector<double> coeffs_;
};

struct ConvexityReport {
    bool even = false;              // only even degrees present
    bool convex_on_unit = false;    // xi'' >= 0 on [0, 1]
    bool convex_on_full = false;    // xi'' >= 0 on [-1, 1]
    double min_second_unit = 0.0;   // min of xi'' over the scanned grid
    double min_second_full = 0.0;
    int grid_points = 0;
};

/// Grid scan of xi'' (second differences are not needed; the polynomial form
/// is exact).  Convexity on [0,1] always holds for nonnegative coefficients;
/// the interesting flag is convex_on_full, which requires even degrees or a
/// lucky cancellation pattern.
inline ConvexityReport convexity_report(const Mixture& m, int grid_points = 10001) {
    if (grid_points < 3) throw DomainError("convexity_report needs >= 3 grid points");
    ConvexityReport r;
    r.grid_points = grid_points;
    r.even = true;
    for (int p : m.active_degrees())
        if (p % 2 != 0) r.even = false;
    double min_unit = std::numeric_limits<double>::infinity();
    double min_full = std::numeric_limits<double>::infinity();
    for (int i = 0; i < grid_points; ++i) {
        double t = -1.0 + 2.0 * static_cast<double>(i) / (grid_points - 1);
        double s = m.xi(t, 2);
        min_full = std::min(min_full, s);
        if (t >= 0.0) min_unit = std::min(min_unit, s);
    }
    r.min_second_unit = min_unit;
    r.min_second_full = min_full;
    r.convex_on_unit = min_unit >= 0.0;
    r.convex_on_full = min_full >= 0.0;
    return r;
}

/// Parameters of the small decoupling perturbation.  The per-degree weights
/// x_p live in [1, 2]; the strength exponent c in (1/4, 1/2) sets s_n = n^c.
struct PerturbationParams {
    std::vector<double> x;  // x[k] is x_{k+1}
    double c = 0.375;

    static PerturbationParams validated(std::vector<double> x, double c) {
        if (x.empty()) throw DomainError("perturbation needs at least one weight");
        for (double v : x)
            if (!(v >= 1.0 && v <= 2.0))
                throw DomainError("perturbation weight outside [1, 2]: " + std::to_string(v));
        if (!(c > 0.25 && c < 0.5))
            throw DomainError("perturbation exponent c must lie in (1/4, 1/2), got " +
                              std::to_string(c));
        PerturbationParams p;
        p.x = std::move(x);
        p.c = c;
        return p;
    }

    static PerturbationParams sample(int p_max, double c, Rng& rng) {
        if (p_max < 1) throw DomainError("perturbation needs p_max >= 1");
        std::uniform_real_distribution<double> u(1.0, 2.0);
        std::vector<double> x(static_cast<std::size_t>(p_max));
        for (double& v : x) v = u(rng);
        return validated(std::move(x), c);
    }

    int p_max() const { return static_cast<int>(x.size()); }

    double weight(int p) const {
        if (p < 1 || p > p_max()) return 0.0;
        return x[static_cast<std::size_t>(p - 1)];
    }

    /// Strength multiplier s_n = n^c.
    double strength(int n) const {
        if (n < 1) throw DomainError("strength needs n >= 1");
        return std::pow(static_cast<double>(n), c);
    }
};

/// Covariance polynomial of the scaled perturbation field on the sphere of
/// dimension n: eta(t) = s_n^2 sum_p 4^{-p} x_p^2 t^p.
inline double eta_x(const PerturbationParams& pp, int n, double t) {
    if (!(std::abs(t) <= 1.0 + 1e-12))
        throw DomainError("eta_x argument must lie in [-1, 1]");
    t = std::clamp(t, -1.0, 1.0);
    double acc = 0.0;
    for (int p = pp.p_max(); p >= 1; --p) {
        double w = pp.weight(p) * std::pow(0.5, p);
        acc = acc * t + w * w;
    }
    acc *= t;
    double s = pp.strength(n);
    return s * s * acc;
}

}  // namespace spinlab
