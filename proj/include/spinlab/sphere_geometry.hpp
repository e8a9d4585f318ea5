#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "errors.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "stats.hpp"

namespace spinlab {

/// Point on (or inside) a centered sphere.  radius caches the Euclidean norm
/// of coords; factories keep the two consistent.
struct SphericalConfig {
    std::vector<double> coords;
    double radius = 0.0;

    int dim() const { return static_cast<int>(coords.size()); }
};

inline double norm2(std::span<const double> v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionMismatch("dot: length mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline SphericalConfig make_config(std::vector<double> coords) {
    if (coords.empty()) throw DimensionMismatch("configuration needs dimension >= 1");
    SphericalConfig c;
    c.radius = norm2(coords);
    if (!(c.radius > 0.0)) throw DomainError("configuration must be nonzero");
    c.coords = std::move(coords);
    return c;
}

/// Uniform draw from the sphere of the given radius in dimension n.
inline SphericalConfig uniform_sphere(int n, double radius, Rng& rng) {
    if (n < 1) throw DimensionMismatch("uniform_sphere needs n >= 1");
    if (!(radius > 0.0)) throw DomainError("uniform_sphere needs radius > 0");
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> v(static_cast<std::size_t>(n));
    double nrm = 0.0;
    do {
        for (double& x : v) x = g(rng);
        nrm = norm2(v);
    } while (!(nrm > 1e-300));
    for (double& x : v) x *= radius / nrm;
    SphericalConfig c;
    c.coords = std::move(v);
    c.radius = radius;
    return c;
}

/// Draw from the sphere of radius sqrt(n), the standard state space here.
inline SphericalConfig uniform_state(int n, Rng& rng) {
    return uniform_sphere(n, std::sqrt(static_cast<double>(n)), rng);
}

/// Pair configuration on a product of spheres: rho in dimension n, tau in m.
struct ProductConfig {
    SphericalConfig rho;
    SphericalConfig tau;

    int dim_first() const { return rho.dim(); }
    int dim_second() const { return tau.dim(); }

    void concat_into(std::vector<double>& out) const {
        out.resize(rho.coords.size() + tau.coords.size());
        std::copy(rho.coords.begin(), rho.coords.end(), out.begin());
        std::copy(tau.coords.begin(), tau.coords.end(),
                  out.begin() + static_cast<std::ptrdiff_t>(rho.coords.size()));
    }

    std::vector<double> concat() const {
        std::vector<double> out;
        concat_into(out);
        return out;
    }
};

inline ProductConfig uniform_product(int n, int m, Rng& rng) {
    return ProductConfig{uniform_state(n, rng), uniform_state(m, rng)};
}

/// Normalized overlaps of two pair configurations: per-factor overlaps and the
/// dimension-weighted overlap of the concatenated points.
struct OverlapTriple {
    double first = 0.0;     // rho.rho' / n
    double second = 0.0;    // tau.tau' / m
    double combined = 0.0;  // (n*first + m*second) / (n+m)
};

inline OverlapTriple overlaps(const ProductConfig& a, const ProductConfig& b) {
    int n = a.dim_first(), m = a.dim_second();
    if (b.dim_first() != n || b.dim_second() != m)
        throw DimensionMismatch("overlaps: factor dimensions differ");
    OverlapTriple t;
    t.first = dot(a.rho.coords, b.rho.coords) / static_cast<double>(n);
    t.second = dot(a.tau.coords, b.tau.coords) / static_cast<double>(m);
    t.combined = (n * t.first + m * t.second) / static_cast<double>(n + m);
    return t;
}

/// Radius of the first-factor sphere that keeps the concatenated point on the
/// sphere of radius sqrt(n+m) when the second factor has norm r.
inline double eta_radius(int n, int m, double r) {
    double d = static_cast<double>(n + m);
    if (!(r >= 0.0 && r * r <= d * (1.0 + 1e-12)))
        throw DomainError("eta_radius needs 0 <= r <= sqrt(n+m)");
    return std::sqrt(std::max(d - r * r, 0.0));
}

/// Scaling map onto the sphere of radius sqrt(n+m): rescales rho to norm
/// eta(r) and tau to norm r.  Input factors must sit at radii sqrt(n), sqrt(m).
inline ProductConfig scale_map(const ProductConfig& cfg, double r) {
    int n = cfg.dim_first(), m = cfg.dim_second();
    double sn = std::sqrt(static_cast<double>(n)), sm = std::sqrt(static_cast<double>(m));
    if (std::abs(cfg.rho.radius - sn) > 1e-9 * sn || std::abs(cfg.tau.radius - sm) > 1e-9 * sm)
        throw DomainError("scale_map expects factors at radii sqrt(n), sqrt(m)");
    double eta = eta_radius(n, m, r);
    ProductConfig out = cfg;
    double a = eta / sn, b = r / sm;
    for (double& x : out.rho.coords) x *= a;
    for (double& x : out.tau.coords) x *= b;
    out.rho.radius = eta;
    out.tau.radius = r;
    return out;
}

struct BandMeasure {
    double exact = 0.0;    // regularized incomplete Beta difference
    double numeric = 0.0;  // adaptive quadrature of the radial coarea density
};

namespace sphere_detail {

/// log of the density of r = |last-m-block| under the uniform measure on the
/// sphere of radius sqrt(n+m) in dimension n+m:
///   f(r) = [2 / B(m/2, n/2)] * r^{m-1} * eta(r)^{n-2} * d^{-(d-2)/2},  d = n+m.
/// Equivalently r^2/d is Beta(m/2, n/2); both routes are kept as a cross-check.
inline double log_radial_density(int n, int m, double r) {
    double d = static_cast<double>(n + m);
    double eta2 = std::max(d - r * r, 0.0);
    if (r < 0.0) return -std::numeric_limits<double>::infinity();
    if (r == 0.0 && m != 1) return -std::numeric_limits<double>::infinity();
    if (eta2 == 0.0) {
        if (n > 2) return -std::numeric_limits<double>::infinity();
        if (n == 1) throw DomainError("radial density diverges at the pole for n = 1");
    }
    double lp = std::numbers::ln2 + std::lgamma(0.5 * d) - std::lgamma(0.5 * n) -
                std::lgamma(0.5 * m) - 0.5 * (d - 2.0) * std::log(d);
    if (m != 1) lp += (m - 1.0) * std::log(r);
    if (n != 2) lp += 0.5 * (n - 2.0) * std::log(eta2);
    return lp;
}

}  // namespace sphere_detail

/// Probability that the norm of the second factor of a uniform point on the
/// sphere of radius sqrt(n+m) lands in [lo, hi], by two independent routes.
inline BandMeasure band_measure(int n, int m, double lo, double hi, double tol = 1e-10) {
    if (n < 1 || m < 1) throw DimensionMismatch("band_measure needs n, m >= 1");
    double d = static_cast<double>(n + m);
    double top = std::sqrt(d);
    if (!(0.0 <= lo && lo <= hi && hi <= top * (1.0 + 1e-12)))
        throw DomainError("band interval must satisfy 0 <= lo <= hi <= sqrt(n+m)");
    hi = std::min(hi, top);
    BandMeasure out;
    double ulo = std::clamp(lo * lo / d, 0.0, 1.0);
    double uhi = std::clamp(hi * hi / d, 0.0, 1.0);
    out.exact = boost::math::ibeta(0.5 * m, 0.5 * n, uhi) - boost::math::ibeta(0.5 * m, 0.5 * n, ulo);
    // Integrate the radial density under r = sqrt(d) sin(phi).  The jacobian
    // cancels the (d - r^2)^{-1/2} endpoint singularity at n = 1 exactly, so
    // the quadrature sees a smooth integrand for every n, m >= 1.
    double lp0 = std::numbers::ln2 + std::lgamma(0.5 * d) - std::lgamma(0.5 * n) -
                 std::lgamma(0.5 * m) - 0.5 * (d - 2.0) * std::log(d);
    double phi_lo = std::asin(std::clamp(lo / top, 0.0, 1.0));
    double phi_hi = std::asin(std::clamp(hi / top, 0.0, 1.0));
    out.numeric = adaptive_simpson(
        [n, m, top, lp0](double phi) {
            double sc = std::sin(phi), cc = std::cos(phi);
            double lg = lp0;
            if (m != 1) {
                if (!(sc > 0.0)) return 0.0;
                lg += (m - 1.0) * std::log(top * sc);
            }
            if (n != 1) {
                if (!(cc > 0.0)) return 0.0;
                lg += (n - 1.0) * std::log(top * cc);
            }
            return std::exp(lg);
        },
        phi_lo, phi_hi, tol);
    return out;
}

struct PoincareResult {
    double ks = 0.0;
    double threshold = 0.0;  // asymptotic 1% KS critical value for k samples
    bool gaussian_accepted = false;
};

/// KS test of the fixed linear functional (first coordinate of the second
/// block) of a uniform point on the sphere of radius sqrt(n+m) against the
/// standard normal law.  Accepts for large n, rejects for small n.
inline PoincareResult poincare_check(int n, int m, int k_samples, Rng& rng) {
    if (n < 1 || m < 1) throw DimensionMismatch("poincare_check needs n, m >= 1");
    if (k_samples < 100) throw DomainError("poincare_check needs k_samples >= 100");
    int d = n + m;
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> values(static_cast<std::size_t>(k_samples));
    for (double& v : values) {
        double sumsq = 0.0, pick = 0.0;
        for (int i = 0; i < d; ++i) {
            double z = g(rng);
            sumsq += z * z;
            if (i == n) pick = z;
        }
        v = std::sqrt(static_cast<double>(d)) * pick / std::sqrt(sumsq);
    }
    PoincareResult r;
    r.ks = ks_statistic(values, [](double x) { return normal_cdf(x); });
    r.threshold = ks_critical(static_cast<std::size_t>(k_samples), 0.01);
    r.gaussian_accepted = r.ks < r.threshold;
    return r;
}

}  // namespace spinlab
