#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gaussian_field.hpp"
#include "rng.hpp"
#include "sphere_geometry.hpp"
#include "stats.hpp"

namespace spinlab {

enum class BandSide { plus, minus };

inline const char* band_side_name(BandSide s) { return s == BandSide::plus ? "plus" : "minus"; }

/// Splits the product sphere by the sign of the derivative of the whole-sphere
/// perturbed field along the second-block radial direction (0, tau/|tau|),
/// evaluated at the concatenated point.  Ties go to plus.
inline BandSide band_membership(const FieldBundle& b, const ProductConfig& pc) {
    if (pc.dim_first() != b.n || pc.dim_second() != b.m)
        throw DimensionMismatch("band_membership: dimensions differ from bundle");
    auto& cat = field_detail::concat_scratch();
    pc.concat_into(cat);
    std::vector<double> grad(cat.size(), 0.0);
    b.whole.gradient_acc(cat, grad);
    double acc = 0.0;
    for (int i = 0; i < b.m; ++i)
        acc += grad[static_cast<std::size_t>(b.n + i)] * pc.tau.coords[static_cast<std::size_t>(i)];
    acc /= pc.tau.radius;
    return acc >= 0.0 ? BandSide::plus : BandSide::minus;
}

/// Band integrals at second-block radius r: uniform product expectation of
/// exp(whole field at the rescaled point), split by membership of the
/// pre-image.  plus_part + minus_part equals total exactly by construction.
struct BandIntegrals {
    double total = 0.0, plus_part = 0.0, minus_part = 0.0;
    double total_stderr = 0.0, plus_stderr = 0.0, minus_stderr = 0.0;
    long n_inner = 0;
};

inline BandIntegrals x_band_integrals(const FieldBundle& b, double r, long n_inner, Rng& rng) {
    if (n_inner < 2) throw DomainError("x_band_integrals needs n_inner >= 2");
    double top = std::sqrt(static_cast<double>(b.n + b.m));
    if (!(r > 0.0 && r < top))
        throw DomainError("band radius must lie in (0, sqrt(n+m))");
    std::vector<double> w(static_cast<std::size_t>(n_inner));
    std::vector<double> wp(static_cast<std::size_t>(n_inner));
    std::vector<double> wm(static_cast<std::size_t>(n_inner));
    std::vector<double> cat;
    for (long i = 0; i < n_inner; ++i) {
        ProductConfig pc = uniform_product(b.n, b.m, rng);
        BandSide side = band_membership(b, pc);
        ProductConfig mapped = scale_map(pc, r);
        mapped.concat_into(cat);
        double v = std::exp(b.whole.value(cat));
        std::size_t k = static_cast<std::size_t>(i);
        w[k] = v;
        wp[k] = side == BandSide::plus ? v : 0.0;
        wm[k] = side == BandSide::minus ? v : 0.0;
    }
    BandIntegrals out;
    out.total = mean(w);
    out.plus_part = mean(wp);
    out.minus_part = mean(wm);
    out.total_stderr = standard_error(w);
    out.plus_stderr = standard_error(wp);
    out.minus_stderr = standard_error(wm);
    out.n_inner = n_inner;
    return out;
}

enum class ProbeMethod { random_points, polished };

inline const char* probe_method_name(ProbeMethod m) {
    return m == ProbeMethod::random_points ? "random_points" : "polished";
}

/// Probe-based estimates of the two regularity constants of the whole-sphere
/// perturbed field over the ball of the given radius:
///   l1: max gradient norm;  l2: max |directional second derivative|.
/// Lower bounds by construction; `polished` sharpens each probe with a short
/// projected ascent plus power iterations for the direction.  Deterministic in
/// (seed, n_probes), and the probe set only grows with n_probes.
struct LipschitzEstimates {
    double l1 = 0.0;
    double l2 = 0.0;
    int n_probes = 0;
    double radius = 0.0;
    ProbeMethod method = ProbeMethod::polished;
};

namespace band_detail {

inline void project_ball(std::vector<double>& s, double radius) {
    double nrm = norm2(s);
    if (nrm > radius)
        for (double& x : s) x *= radius / nrm;
}

inline std::vector<double> random_direction(int d, Rng& rng) {
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> u(static_cast<std::size_t>(d));
    double nrm = 0.0;
    do {
        for (double& x : u) x = g(rng);
        nrm = norm2(u);
    } while (!(nrm > 1e-300));
    for (double& x : u) x /= nrm;
    return u;
}

}  // namespace band_detail

inline LipschitzEstimates lipschitz_estimates(const FieldBundle& b, double radius, int n_probes,
                                              ProbeMethod method, std::uint64_t seed) {
    if (n_probes < 1) throw DomainError("lipschitz_estimates needs n_probes >= 1");
    double inscribed = std::sqrt(static_cast<double>(b.n + b.m));
    if (!(radius >= inscribed * (1.0 - 1e-12)))
        throw DomainError("probe radius must cover the sphere of radius sqrt(n+m)");
    const PerturbedField& f = b.whole;
    int d = b.n + b.m;
    LipschitzEstimates out;
    out.n_probes = n_probes;
    out.radius = radius;
    out.method = method;
    std::vector<double> grad(static_cast<std::size_t>(d));
    std::vector<double> hv(static_cast<std::size_t>(d));
    for (int probe = 0; probe < n_probes; ++probe) {
        Rng rng = make_stream(seed, "probe", static_cast<std::uint64_t>(probe));
        // start on the boundary (even probes) or in the interior (odd probes)
        std::vector<double> s = band_detail::random_direction(d, rng);
        double rr = radius;
        if (probe % 2 == 1)
            rr = radius * std::pow(uniform_unit(rng), 1.0 / static_cast<double>(d));
        for (double& x : s) x *= rr;

        // gradient-norm probe
        {
            std::vector<double> pos = s;
            std::fill(grad.begin(), grad.end(), 0.0);
            f.gradient_acc(pos, grad);
            double best = norm2(grad);
            if (method == ProbeMethod::polished) {
                double step = 0.05 * radius;
                for (int it = 0; it < 60 && step > 1e-7 * radius; ++it) {
                    // ascend the squared gradient norm: its gradient is Hess * grad
                    std::fill(hv.begin(), hv.end(), 0.0);
                    f.hessian_vec_acc(pos, grad, hv);
                    double hn = norm2(hv);
                    if (!(hn > 1e-14)) break;
                    std::vector<double> cand = pos;
                    for (int i = 0; i < d; ++i)
                        cand[static_cast<std::size_t>(i)] += step * hv[static_cast<std::size_t>(i)] / hn;
                    band_detail::project_ball(cand, radius);
                    std::fill(grad.begin(), grad.end(), 0.0);
                    f.gradient_acc(cand, grad);
                    double val = norm2(grad);
                    if (val > best) {
                        best = val;
                        pos = std::move(cand);
                        step *= 1.3;
                    } else {
                        step *= 0.5;
                        std::fill(grad.begin(), grad.end(), 0.0);
                        f.gradient_acc(pos, grad);
                    }
                }
            }
            out.l1 = std::max(out.l1, best);
        }

        // directional-second probe: power iterations pull u toward the
        // dominant-magnitude eigenvector of the Hessian at pos
        {
            std::vector<double> pos = s;
            std::vector<double> u = band_detail::random_direction(d, rng);
            auto refine_direction = [&](int iters) {
                for (int k = 0; k < iters; ++k) {
                    std::fill(hv.begin(), hv.end(), 0.0);
                    f.hessian_vec_acc(pos, u, hv);
                    double hn = norm2(hv);
                    if (!(hn > 1e-14)) break;
                    for (int i = 0; i < d; ++i) u[static_cast<std::size_t>(i)] = hv[static_cast<std::size_t>(i)] / hn;
                }
            };
            refine_direction(48);
            double best = std::abs(f.directional_second(pos, u));
            if (method == ProbeMethod::polished) {
                double step = 0.05 * radius;
                for (int it = 0; it < 10 && step > 1e-6 * radius; ++it) {
                    double cur = f.directional_second(pos, u);
                    std::fill(hv.begin(), hv.end(), 0.0);
                    f.directional_second_grad_acc(pos, u, hv);
                    double hn = norm2(hv);
                    if (!(hn > 1e-14)) break;
                    double sign = cur >= 0.0 ? 1.0 : -1.0;
                    std::vector<double> cand = pos;
                    for (int i = 0; i < d; ++i)
                        cand[static_cast<std::size_t>(i)] += sign * step * hv[static_cast<std::size_t>(i)] / hn;
                    band_detail::project_ball(cand, radius);
                    double val = std::abs(f.directional_second(cand, u));
                    if (val > best) {
                        best = val;
                        pos = std::move(cand);
                        refine_direction(4);
                        best = std::max(best, std::abs(f.directional_second(pos, u)));
                        step *= 1.3;
                    } else {
                        step *= 0.5;
                    }
                }
                refine_direction(16);
                best = std::max(best, std::abs(f.directional_second(pos, u)));
            }
            out.l2 = std::max(out.l2, best);

            // the refined direction doubles as a boundary probe for l1
            std::vector<double> edge(static_cast<std::size_t>(d));
            for (int i = 0; i < d; ++i) edge[static_cast<std::size_t>(i)] = radius * u[static_cast<std::size_t>(i)];
            std::fill(grad.begin(), grad.end(), 0.0);
            f.gradient_acc(edge, grad);
            out.l1 = std::max(out.l1, norm2(grad));
        }
    }
    return out;
}

/// One Taylor-chain audit at second-block radius r: for sampled product pairs
/// on the side selected by the sign of r - sqrt(m), the rescaled field value
/// must not drop below the probed-constant bound
///   value(pre-image) - l1 |eta(r) - sqrt(n)| - l2 (r - sqrt(m))^2.
struct LemmaCheckResult {
    long checked = 0;
    long violations = 0;
    double worst_margin = 0.0;  // most negative (lhs - bound); >= 0 when clean
};

inline LemmaCheckResult lemma_estimate_check(const FieldBundle& b, double r,
                                             const LipschitzEstimates& lips, long n_pairs,
                                             Rng& rng) {
    double sm = std::sqrt(static_cast<double>(b.m));
    double sn = std::sqrt(static_cast<double>(b.n));
    double top = std::sqrt(static_cast<double>(b.n + b.m));
    if (!(r > 0.0 && r < top)) throw DomainError("band radius must lie in (0, sqrt(n+m))");
    // the tau-move passes through points of norm sqrt(n + r^2); probes must
    // have covered that ball
    double path_radius = std::sqrt(static_cast<double>(b.n) + r * r);
    if (lips.radius < std::max(top, path_radius) * (1.0 - 1e-12))
        throw DomainError("probe radius does not cover the Taylor path for this r");
    BandSide side = r >= sm ? BandSide::plus : BandSide::minus;
    double eta = eta_radius(b.n, b.m, r);
    double allowance = lips.l1 * std::abs(eta - sn) + lips.l2 * (r - sm) * (r - sm);
    LemmaCheckResult out;
    out.worst_margin = std::numeric_limits<double>::infinity();
    std::vector<double> cat;
    for (long i = 0; i < n_pairs; ++i) {
        ProductConfig pc = uniform_product(b.n, b.m, rng);
        if (band_membership(b, pc) != side) continue;
        ++out.checked;
        pc.concat_into(cat);
        double base = b.whole.value(cat);
        ProductConfig mapped = scale_map(pc, r);
        mapped.concat_into(cat);
        double lhs = b.whole.value(cat);
        double margin = lhs - (base - allowance);
        out.worst_margin = std::min(out.worst_margin, margin);
        if (margin < -1e-9 * (1.0 + std::abs(base))) ++out.violations;
    }
    if (out.checked == 0) out.worst_margin = 0.0;
    return out;
}

/// Escalating audit: run the chain check at each radius; on any violation,
/// quadruple the probe count (the probe set grows monotonically) and retry.
struct AuditedLemmaCheck {
    LipschitzEstimates lips;
    std::vector<LemmaCheckResult> per_radius;
    int rounds = 0;
    bool clean = false;
};

inline AuditedLemmaCheck audited_lemma_check(const FieldBundle& b, std::span<const double> radii,
                                             long n_pairs, int base_probes, std::uint64_t seed,
                                             int max_rounds = 3) {
    if (radii.empty()) throw DomainError("audited_lemma_check needs at least one radius");
    double top = std::sqrt(static_cast<double>(b.n + b.m));
    double r_max = *std::max_element(radii.begin(), radii.end());
    double probe_radius = std::max(top, std::sqrt(static_cast<double>(b.n) + r_max * r_max));
    AuditedLemmaCheck out;
    int probes = base_probes;
    for (int round = 0; round < max_rounds; ++round) {
        out.rounds = round + 1;
        out.lips = lipschitz_estimates(b, probe_radius, probes, ProbeMethod::polished,
                                       child_seed(seed, "lipschitz"));
        out.per_radius.clear();
        bool clean = true;
        for (std::size_t k = 0; k < radii.size(); ++k) {
            Rng rng = make_stream(seed, "pairs", static_cast<std::uint64_t>(k));
            LemmaCheckResult res = lemma_estimate_check(b, radii[k], out.lips, n_pairs, rng);
            if (res.violations > 0) clean = false;
            out.per_radius.push_back(res);
        }
        out.clean = clean;
        if (clean) break;
        probes *= 4;
    }
    return out;
}

}  // namespace spinlab
