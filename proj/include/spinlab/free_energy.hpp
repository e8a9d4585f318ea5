#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gaussian_field.hpp"
#include "mixture.hpp"
#include "quadrature.hpp"
#include "rng.hpp"
#include "sphere_geometry.hpp"
#include "stats.hpp"

namespace spinlab {

enum class Method { automatic, exact_quadrature, plain_mc };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::exact_quadrature: return "exact_quadrature";
        case Method::plain_mc: return "plain_mc";
        default: return "automatic";
    }
}

/// Node counts for the deterministic partition-function quadratures.  The
/// defaults are frozen; halving/doubling them is a convergence check, not a
/// tuning knob.
struct ExactNodes {
    int circle = 4096;   // n = 2: equispaced angles
    int polar = 256;     // n = 3: Gauss-Legendre in the polar coordinate
    int azimuth = 512;   // n = 3: equispaced azimuth
};

/// log of the uniform-measure average of exp(h) over the sphere of radius
/// sqrt(n), for n in {1, 2, 3}.  h is any callable on coordinate spans.
template <class H>
double exact_log_partition(H&& h, int n, const ExactNodes& nodes = {}) {
    if (n == 1) {
        std::array<double, 2> vals{};
        double point[1] = {1.0};
        vals[0] = h(std::span<const double>(point, 1));
        point[0] = -1.0;
        vals[1] = h(std::span<const double>(point, 1));
        return log_mean_exp(vals);
    }
    if (n == 2) {
        if (nodes.circle < 4) throw DomainError("exact_log_partition needs >= 4 circle nodes");
        double radius = std::sqrt(2.0);
        std::vector<double> vals(static_cast<std::size_t>(nodes.circle));
        for (int j = 0; j < nodes.circle; ++j) {
            double th = 2.0 * std::numbers::pi * (j + 0.5) / nodes.circle;
            double point[2] = {radius * std::cos(th), radius * std::sin(th)};
            vals[static_cast<std::size_t>(j)] = h(std::span<const double>(point, 2));
        }
        return log_mean_exp(vals);
    }
    if (n == 3) {
        if (nodes.polar < 2 || nodes.azimuth < 4)
            throw DomainError("exact_log_partition needs >= 2 polar, >= 4 azimuth nodes");
        // Uniform measure on the radius-sqrt(3) sphere is uniform in the third
        // coordinate: z = sqrt(3) u with u uniform on [-1, 1].
        QuadratureRule gl = gauss_legendre(nodes.polar);
        std::vector<double> terms;
        terms.reserve(static_cast<std::size_t>(nodes.polar * nodes.azimuth));
        double log_az = -std::log(static_cast<double>(nodes.azimuth));
        for (int i = 0; i < nodes.polar; ++i) {
            double u = gl.nodes[static_cast<std::size_t>(i)];
            double z = std::sqrt(3.0) * u;
            double rxy = std::sqrt(std::max(3.0 - z * z, 0.0));
            double logw = std::log(0.5 * gl.weights[static_cast<std::size_t>(i)]) + log_az;
            for (int j = 0; j < nodes.azimuth; ++j) {
                double phi = 2.0 * std::numbers::pi * (j + 0.5) / nodes.azimuth;
                double point[3] = {rxy * std::cos(phi), rxy * std::sin(phi), z};
                terms.push_back(h(std::span<const double>(point, 3)) + logw);
            }
        }
        return log_sum_exp(terms);
    }
    throw UnsupportedDimension("exact_log_partition supports n in {1, 2, 3}, got " +
                               std::to_string(n));
}

/// Plain Monte Carlo estimate of log E_uniform[exp(h)] over the sphere of the
/// given radius, with delta-method standard error and jackknife bias estimate.
template <class H>
LogMeanExp mc_log_partition(H&& h, int n, double radius, long n_inner, Rng& rng) {
    if (n_inner < 2) throw DomainError("mc_log_partition needs n_inner >= 2");
    std::vector<double> vals(static_cast<std::size_t>(n_inner));
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> point(static_cast<std::size_t>(n));
    for (long i = 0; i < n_inner; ++i) {
        double nrm = 0.0;
        do {
            for (double& x : point) x = g(rng);
            nrm = norm2(point);
        } while (!(nrm > 1e-300));
        for (double& x : point) x *= radius / nrm;
        vals[static_cast<std::size_t>(i)] = h(std::span<const double>(point));
    }
    return log_mean_exp_full(vals);
}

struct ReplicaRecord {
    int replica = 0;
    std::uint64_t seed = 0;
    double logz = 0.0;       // total log-partition of this disorder draw
    double inner_bias = 0.0; // jackknife bias of the inner estimator (0 if exact)
    Method method = Method::automatic;
};

/// Quenched free energy estimate.  value is per site: mean over disorder of
/// log Z / dim.  stderr_ is the across-replica standard error of value, which
/// absorbs the inner sampling noise honestly.
struct FreeEnergyEstimate {
    double value = 0.0;
    double stderr_ = 0.0;
    int dim = 0;
    long n_disorder = 0;
    long n_inner = 0;
    Method method = Method::automatic;
    std::uint64_t seed = 0;
    double mean_inner_bias = 0.0;  // mean jackknife bias per site (diagnostic)

    double total() const { return value * dim; }
    double total_stderr() const { return stderr_ * dim; }
};

inline Method resolve_method(Method m, int n) {
    if (m != Method::automatic) return m;
    return n <= 3 ? Method::exact_quadrature : Method::plain_mc;
}

/// Quenched free energy of one sphere: disorder average of log Z_n / n, with
/// fresh perturbation weights per replica when the perturbation is enabled.
inline FreeEnergyEstimate quenched_free_energy(int n, const Mixture& mix, const PerturbSpec& spec,
                                               long n_disorder, long n_inner, std::uint64_t seed,
                                               Method method = Method::automatic,
                                               std::vector<ReplicaRecord>* records = nullptr) {
    if (n < 1) throw DimensionMismatch("quenched_free_energy needs n >= 1");
    if (n_disorder < 2) throw DomainError("quenched_free_energy needs n_disorder >= 2");
    Method use = resolve_method(method, n);
    std::vector<double> logz(static_cast<std::size_t>(n_disorder));
    std::vector<double> biases(static_cast<std::size_t>(n_disorder), 0.0);
    for (long r = 0; r < n_disorder; ++r) {
        std::uint64_t rs = child_seed(seed, "replica", static_cast<std::uint64_t>(r));
        PerturbedField field = PerturbedField::sample(n, mix, spec, rs);
        auto h = [&](std::span<const double> s) { return field.value(s); };
        double lz = 0.0, bias = 0.0;
        if (use == Method::exact_quadrature) {
            lz = exact_log_partition(h, n);
        } else {
            Rng inner = make_stream(rs, "inner");
            LogMeanExp est = mc_log_partition(h, n, std::sqrt(static_cast<double>(n)), n_inner, inner);
            lz = est.value;
            bias = est.jack_bias;
        }
        logz[static_cast<std::size_t>(r)] = lz;
        biases[static_cast<std::size_t>(r)] = bias;
        if (records) records->push_back({static_cast<int>(r), rs, lz, bias, use});
    }
    FreeEnergyEstimate out;
    out.dim = n;
    out.n_disorder = n_disorder;
    out.n_inner = use == Method::exact_quadrature ? 0 : n_inner;
    out.method = use;
    out.seed = seed;
    out.value = mean(logz) / n;
    out.stderr_ = standard_error(logz) / n;
    out.mean_inner_bias = mean(biases) / n;
    return out;
}

enum class ProductMode { restricted_whole, decoupled };

inline const char* product_mode_name(ProductMode m) {
    return m == ProductMode::restricted_whole ? "restricted_whole" : "decoupled";
}

namespace fe_detail {

/// log of the average of exp(h) over the four points of S_1 x S_1.
template <class H>
double product_enumerate_1x1(H&& h) {
    std::array<double, 4> vals{};
    int k = 0;
    for (double a : {1.0, -1.0}) {
        for (double b : {1.0, -1.0}) {
            double rho[1] = {a}, tau[1] = {b};
            vals[static_cast<std::size_t>(k++)] =
                h(std::span<const double>(rho, 1), std::span<const double>(tau, 1));
        }
    }
    return log_mean_exp(vals);
}

}  // namespace fe_detail

/// Quenched free energy of the pair system on S_n x S_m under the uniform
/// product measure.  restricted_whole uses the whole-sphere perturbed field at
/// the concatenated point; decoupled uses the factor-decoupled perturbation.
/// value is per site with dim = n + m.  Exact enumeration at n = m = 1.
inline FreeEnergyEstimate product_free_energy(int n, int m, const Mixture& mix,
                                              const PerturbSpec& spec, ProductMode mode,
                                              long n_disorder, long n_inner, std::uint64_t seed,
                                              std::vector<ReplicaRecord>* records = nullptr) {
    if (n < 1 || m < 1) throw DimensionMismatch("product_free_energy needs n, m >= 1");
    if (n_disorder < 2) throw DomainError("product_free_energy needs n_disorder >= 2");
    bool exact = (n == 1 && m == 1);
    std::vector<double> logz(static_cast<std::size_t>(n_disorder));
    std::vector<double> biases(static_cast<std::size_t>(n_disorder), 0.0);
    for (long r = 0; r < n_disorder; ++r) {
        std::uint64_t rs = child_seed(seed, "replica", static_cast<std::uint64_t>(r));
        FieldBundle bundle = FieldBundle::sample(n, m, mix, spec, rs);
        auto h = [&](std::span<const double> rho, std::span<const double> tau) {
            if (mode == ProductMode::decoupled) return decoupled_evaluate(bundle, rho, tau);
            auto& cat = field_detail::concat_scratch();
            cat.resize(rho.size() + tau.size());
            std::copy(rho.begin(), rho.end(), cat.begin());
            std::copy(tau.begin(), tau.end(),
                      cat.begin() + static_cast<std::ptrdiff_t>(rho.size()));
            return bundle.whole.value(cat);
        };
        double lz = 0.0, bias = 0.0;
        if (exact) {
            lz = fe_detail::product_enumerate_1x1(h);
        } else {
            Rng inner = make_stream(rs, "inner");
            std::vector<double> vals(static_cast<std::size_t>(n_inner));
            for (long i = 0; i < n_inner; ++i) {
                ProductConfig pc = uniform_product(n, m, inner);
                vals[static_cast<std::size_t>(i)] = h(pc.rho.coords, pc.tau.coords);
            }
            LogMeanExp est = log_mean_exp_full(vals);
            lz = est.value;
            bias = est.jack_bias;
        }
        logz[static_cast<std::size_t>(r)] = lz;
        biases[static_cast<std::size_t>(r)] = bias;
        if (records)
            records->push_back({static_cast<int>(r), rs, lz, bias,
                                exact ? Method::exact_quadrature : Method::plain_mc});
    }
    FreeEnergyEstimate out;
    out.dim = n + m;
    out.n_disorder = n_disorder;
    out.n_inner = exact ? 0 : n_inner;
    out.method = exact ? Method::exact_quadrature : Method::plain_mc;
    out.seed = seed;
    out.value = mean(logz) / (n + m);
    out.stderr_ = standard_error(logz) / (n + m);
    out.mean_inner_bias = mean(biases) / (n + m);
    return out;
}

/// Superadditivity defect of total quenched free energies:
///   defect = (n+m) Fbar_{n+m} - n Fbar_n - m Fbar_m.
/// The three estimates use independent child streams of the given seed.
struct SuperadditivityResult {
    double defect = 0.0;
    double stderr_ = 0.0;  // combined error of the three independent totals
    FreeEnergyEstimate whole, left, right;
};

inline SuperadditivityResult superadditivity_defect(int n, int m, const Mixture& mix,
                                                    const PerturbSpec& spec, long n_disorder,
                                                    long n_inner, std::uint64_t seed) {
    SuperadditivityResult out;
    out.whole = quenched_free_energy(n + m, mix, spec, n_disorder, n_inner,
                                     child_seed(seed, "whole"));
    out.left = quenched_free_energy(n, mix, spec, n_disorder, n_inner, child_seed(seed, "left"));
    out.right = quenched_free_energy(m, mix, spec, n_disorder, n_inner, child_seed(seed, "right"));
    out.defect = out.whole.total() - out.left.total() - out.right.total();
    double a = out.whole.total_stderr(), b = out.left.total_stderr(), c = out.right.total_stderr();
    out.stderr_ = std::sqrt(a * a + b * b + c * c);
    return out;
}

}  // namespace spinlab
