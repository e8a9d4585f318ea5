#include <catch2/catch_amalgamated.hpp>

#include <array>
#include <cmath>
#include <vector>

#include <spinlab/interpolation.hpp>

using namespace spinlab;

namespace {

FieldBundle test_bundle(int n, int m, std::uint64_t seed) {
    auto mix = Mixture::validated({0.4, 1.0, 0.3});
    return FieldBundle::sample(n, m, mix, PerturbSpec::standard(3), seed);
}

}  // namespace

TEST_CASE("interpolation endpoints coincide with the two decoupled forms") {
    auto b = test_bundle(3, 2, 11);
    Rng rng = make_stream(12, "pts");
    for (int k = 0; k < 5; ++k) {
        auto pc = uniform_product(3, 2, rng);
        double at1 = interp_hamiltonian(b, 1.0, pc.rho.coords, pc.tau.coords);
        CHECK(at1 == Catch::Approx(decoupled_evaluate(b, pc.rho.coords, pc.tau.coords)).margin(1e-12));
        double at0 = interp_hamiltonian(b, 0.0, pc.rho.coords, pc.tau.coords);
        double split = b.first.value(pc.rho.coords) + b.second.value(pc.tau.coords);
        CHECK(at0 == Catch::Approx(split).margin(1e-12));
    }
    auto pc = uniform_product(3, 2, rng);
    CHECK_THROWS_AS(interp_hamiltonian(b, 1.2, pc.rho.coords, pc.tau.coords), DomainError);
    CHECK_THROWS_AS(interp_hamiltonian(b, -0.1, pc.rho.coords, pc.tau.coords), DomainError);
    std::vector<double> wrong(4, 1.0);
    CHECK_THROWS_AS(interp_hamiltonian(b, 0.5, wrong, pc.tau.coords), DimensionMismatch);
}

TEST_CASE("coupling functional vanishes on the diagonal and clips nonpositively") {
    auto mix = Mixture::validated({0.2, 1.0, 0.0, 0.7});
    Rng rng = make_stream(14, "pts");
    auto a = uniform_product(4, 3, rng);
    CHECK(u_functional(a, a, mix) == Catch::Approx(0.0).margin(1e-10));

    // equal per-factor overlaps make the clipped functional vanish identically
    for (double r : {0.0, 0.3, 0.8, 1.0}) {
        OverlapTriple t;
        t.first = r;
        t.second = r;
        CHECK(u_plus_functional(t, 4, 3, mix) == Catch::Approx(0.0).margin(1e-12));
    }
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    double ubound = u_uniform_bound(3, mix);
    for (int k = 0; k < 2000; ++k) {
        OverlapTriple t;
        t.first = u(rng);
        t.second = u(rng);
        t.combined = (4 * t.first + 3 * t.second) / 7.0;
        CHECK(u_plus_functional(t, 4, 3, mix) <= 1e-12);
        CHECK(std::abs(u_functional(t, 4, 3, mix)) <= ubound + 1e-12);
    }
    CHECK(u_clip_gap_bound(0.1, 3, mix) ==
          Catch::Approx(2.0 * 0.1 * 3 * (mix.xi(1.0, 1) + mix.xi(1.0, 2))));
    CHECK_THROWS_AS(u_clip_gap_bound(-0.5, 3, mix), DomainError);
}

TEST_CASE("four-state enumeration is a normalized Gibbs law") {
    auto b = test_bundle(1, 1, 21);
    auto fs = interp_detail::enumerate_1x1(b, 0.6);
    double total = 0.0;
    for (double lw : fs.log_weights) total += std::exp(lw);
    CHECK(total == Catch::Approx(1.0).margin(1e-12));

    // replay the partition by hand
    std::array<double, 4> h{};
    int k = 0;
    for (double a : {1.0, -1.0})
        for (double c : {1.0, -1.0}) {
            std::vector<double> rho{a}, tau{c};
            h[static_cast<std::size_t>(k++)] = interp_hamiltonian(b, 0.6, rho, tau);
        }
    CHECK(fs.log_partition == Catch::Approx(log_mean_exp(h)).margin(1e-13));
    CHECK(interp_log_partition_1x1(b, 0.6) == fs.log_partition);

    auto b22 = test_bundle(2, 2, 22);
    CHECK_THROWS_AS(interp_detail::enumerate_1x1(b22, 0.5), UnsupportedDimension);
}

TEST_CASE("negativity mass enumerates the two-replica law") {
    auto b = test_bundle(1, 1, 23);
    double t = 0.4;
    auto fs = interp_detail::enumerate_1x1(b, t);
    // P(rho rho' = -1) = 2 p_plus p_minus with p the first-factor marginals
    double p_plus = std::exp(fs.log_weights[0]) + std::exp(fs.log_weights[1]);
    double p_minus = std::exp(fs.log_weights[2]) + std::exp(fs.log_weights[3]);
    CHECK(negativity_mass_1x1(b, t, 0.5) == Catch::Approx(2.0 * p_plus * p_minus).margin(1e-12));
    // threshold above 1 can never be crossed
    CHECK(negativity_mass_1x1(b, t, 1.0) == Catch::Approx(2.0 * p_plus * p_minus).margin(1e-12));
}

TEST_CASE("metropolis chain reproduces the exact four-state law") {
    auto b = test_bundle(1, 1, 31);
    double t = 0.5;
    auto fs = interp_detail::enumerate_1x1(b, t);

    McmcParams p;
    p.chain_len = 26000;
    p.burn_in = 1000;
    p.thin = 5;
    Rng rng = make_stream(32, "chain");
    auto set = gibbs_sample(b, t, p, rng);
    REQUIRE(set.diag.n_samples == 5000);
    CHECK_FALSE(set.diag.non_ergodic_warning);

    std::array<long, 4> counts{};
    for (const auto& s : set.samples) {
        int idx = (s.rho.coords[0] > 0 ? 0 : 2) + (s.tau.coords[0] > 0 ? 0 : 1);
        ++counts[static_cast<std::size_t>(idx)];
    }
    double k = static_cast<double>(set.samples.size());
    for (int i = 0; i < 4; ++i) {
        double w = std::exp(fs.log_weights[static_cast<std::size_t>(i)]);
        double freq = counts[static_cast<std::size_t>(i)] / k;
        double sd = std::sqrt(std::max(w * (1.0 - w), 1e-6) / k);
        INFO("state " << i << " freq " << freq << " weight " << w);
        CHECK(std::abs(freq - w) < 5.0 * sd);
    }
}

TEST_CASE("metropolis agrees with importance resampling at 2x2") {
    auto b = test_bundle(2, 2, 41);
    double t = 0.7;
    McmcParams p;
    p.chain_len = 21000;
    p.burn_in = 1000;
    p.thin = 5;
    Rng rng = make_stream(42, "chain");
    auto chain = gibbs_sample(b, t, p, rng);
    REQUIRE(chain.diag.n_samples == 4000);
    CHECK(chain.diag.acceptance > 0.15);
    CHECK(chain.diag.acceptance < 0.65);

    Rng rng2 = make_stream(43, "pool");
    auto oracle = gibbs_importance_resample(b, t, 40000, 4000, rng2);

    auto mean_h = [&](const GibbsSampleSet& s) {
        std::vector<double> v;
        v.reserve(s.samples.size());
        for (const auto& c : s.samples)
            v.push_back(interp_hamiltonian(b, t, c.rho.coords, c.tau.coords));
        return std::pair{mean(v), sample_sd(v) / std::sqrt(static_cast<double>(v.size()) / 9.0)};
    };
    auto [ma, sa] = mean_h(chain);
    auto [mb, sb] = mean_h(oracle);
    INFO("chain " << ma << "+-" << sa << " oracle " << mb << "+-" << sb);
    CHECK(std::abs(ma - mb) < 5.0 * std::sqrt(sa * sa + sb * sb));

    CHECK_THROWS_AS(gibbs_importance_resample(b, t, 1000, 4000, rng2), DomainError);
    auto big = test_bundle(4, 4, 44);
    CHECK_THROWS_AS(gibbs_importance_resample(big, t, 40000, 400, rng2), UnsupportedDimension);
}

TEST_CASE("tiny proposals trip the ergodicity warning") {
    auto b = test_bundle(2, 2, 51);
    McmcParams p;
    p.chain_len = 2000;
    p.burn_in = 500;
    p.thin = 5;
    p.proposal_angle = 1e-3;
    p.auto_tune = false;
    Rng rng = make_stream(52, "chain");
    auto set = gibbs_sample(b, 0.5, p, rng);
    CHECK(set.diag.acceptance > 0.99);
    CHECK(set.diag.non_ergodic_warning);

    McmcParams bad;
    bad.chain_len = 30;
    bad.burn_in = 20;
    bad.thin = 5;
    CHECK_THROWS_AS(gibbs_sample(b, 0.5, bad, rng), DomainError);
}

TEST_CASE("phi curve interpolates smoothly between its endpoints") {
    std::vector<double> grid{0.0, 0.25, 0.5, 0.75, 1.0};
    auto mix = Mixture::validated({0.4, 1.0});
    long n_disorder = 200;
    auto curve = phi_curve(grid, 1, 1, mix, PerturbSpec::standard(2), n_disorder, 0, 61);
    REQUIRE(curve.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(curve[i].t == grid[i]);
        CHECK(curve[i].stderr_ > 0.0);
    }
    // replay the t = 0 and t = 1 points from the same replica seeds
    std::vector<double> at0(static_cast<std::size_t>(n_disorder));
    std::vector<double> at1(static_cast<std::size_t>(n_disorder));
    for (long r = 0; r < n_disorder; ++r) {
        auto bundle = FieldBundle::sample(1, 1, mix, PerturbSpec::standard(2),
                                          child_seed(61, "replica", static_cast<std::uint64_t>(r)));
        at0[static_cast<std::size_t>(r)] = interp_log_partition_1x1(bundle, 0.0);
        at1[static_cast<std::size_t>(r)] = interp_log_partition_1x1(bundle, 1.0);
    }
    CHECK(curve[0].phi == Catch::Approx(mean(at0)).margin(1e-12));
    CHECK(curve[4].phi == Catch::Approx(mean(at1)).margin(1e-12));

    std::vector<double> bad{0.5, 1.5};
    CHECK_THROWS_AS(phi_curve(bad, 1, 1, mix, PerturbSpec::off(), 4, 0, 1), DomainError);
}

TEST_CASE("endpoint check is exact at 1x1") {
    auto mix = Mixture::validated({0.5, 0.9});
    auto chk = interp_endpoint_check(1, 1, mix, PerturbSpec::standard(2), 50, 0, 71);
    CHECK(std::abs(chk.d0) < 1e-12);
    CHECK(std::abs(chk.d1) < 1e-12);
}

TEST_CASE("derivative identity holds across disorder at 1x1") {
    auto mix = Mixture::validated({0.4, 1.0});
    auto id = derivative_identity_check_1x1(0.5, 0.05, mix, PerturbSpec::standard(3), 400, 81);
    INFO("fd " << id.fd << " ibp " << id.ibp << " diff " << id.diff << " z " << id.z);
    CHECK(std::abs(id.z) < 3.0);
    // the two routes disagree per draw, so the paired spread must be visible
    CHECK(id.diff_stderr > 0.0);
    CHECK_THROWS_AS(derivative_identity_check_1x1(0.02, 0.05, mix, PerturbSpec::off(), 10, 1),
                    DomainError);
}

TEST_CASE("chain-based derivative matches the exhaustive route at 1x1") {
    auto mix = Mixture::validated({0.4, 1.0});
    PerturbSpec spec = PerturbSpec::standard(2);
    long n_disorder = 60;
    McmcParams p;
    p.chain_len = 11000;
    p.burn_in = 1000;
    p.thin = 5;
    auto exact = phi_prime_ibp(0.5, 1, 1, mix, spec, p, n_disorder, 91, GibbsMode::exhaustive);
    auto chain = phi_prime_ibp(0.5, 1, 1, mix, spec, p, n_disorder, 91, GibbsMode::metropolis);
    double se = std::sqrt(exact.stderr_ * exact.stderr_ + chain.stderr_ * chain.stderr_);
    INFO("exact " << exact.value << " chain " << chain.value << " se " << se);
    CHECK(std::abs(exact.value - chain.value) < 5.0 * se);
    CHECK(exact.value == Catch::Approx(-0.5 * exact.mean_u));

    auto b22 = test_bundle(2, 2, 92);
    CHECK_THROWS_AS(phi_prime_ibp(0.5, 2, 2, mix, spec, p, 4, 1, GibbsMode::exhaustive),
                    UnsupportedDimension);
}

TEST_CASE("sampled negativity mass tracks the exact 1x1 mass") {
    auto mix = Mixture::validated({0.4, 1.0});
    PerturbSpec spec = PerturbSpec::standard(2);
    double t = 0.5, eps = 0.5;
    long n_disorder = 40;
    McmcParams p;
    p.chain_len = 11000;
    p.burn_in = 1000;
    p.thin = 5;
    auto est = overlap_negativity_mass(t, eps, 1, 1, mix, spec, p, n_disorder, 101);

    std::vector<double> exact(static_cast<std::size_t>(n_disorder));
    for (long r = 0; r < n_disorder; ++r) {
        auto bundle = FieldBundle::sample(1, 1, mix, spec,
                                          child_seed(101, "replica", static_cast<std::uint64_t>(r)));
        exact[static_cast<std::size_t>(r)] = negativity_mass_1x1(bundle, t, eps);
    }
    double se = std::sqrt(est.stderr_ * est.stderr_ +
                          standard_error(exact) * standard_error(exact));
    INFO("sampled " << est.mass << " exact " << mean(exact));
    CHECK(std::abs(est.mass - mean(exact)) < 5.0 * se);
    CHECK_THROWS_AS(overlap_negativity_mass(t, 1.5, 1, 1, mix, spec, p, 4, 1), DomainError);
}
