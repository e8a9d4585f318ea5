#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdlib>
#include <sstream>
#include <vector>

#include <spinlab/gaussian_field.hpp>

using namespace spinlab;

TEST_CASE("pure 2-spin value matches the hand expansion at n = 2") {
    // H(s) = 2^{-1/2} sum_{ij} J_ij s_i s_j, row-major entries
    auto J = CouplingTensors::from_entries(2, {{2, {0.7, -1.3, 0.4, 2.1}}});
    auto terms = hamiltonian_terms(Mixture::pure(2), 2);
    REQUIRE(terms.size() == 1);
    CHECK(terms[0].coeff == Catch::Approx(1.0 / std::sqrt(2.0)));

    std::vector<double> s{1.0, 1.0};
    double expect = (0.7 - 1.3 + 0.4 + 2.1) / std::sqrt(2.0);
    CHECK(field_value(J, terms, s) == Catch::Approx(expect).margin(1e-14));

    std::vector<double> t{2.0, -1.0};
    double direct = 0.7 * 4 + (-1.3) * (2 * -1) + 0.4 * (-1 * 2) + 2.1 * 1;
    CHECK(field_value(J, terms, t) == Catch::Approx(direct / std::sqrt(2.0)).margin(1e-13));

    std::vector<double> bad{1.0, 2.0, 3.0};
    CHECK_THROWS_AS(field_value(J, terms, bad), DimensionMismatch);
}

TEST_CASE("degree-3 value matches a dense triple loop") {
    int n = 3;
    Rng rng = make_stream(5, "tensor-test");
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<double> entries(27);
    for (double& x : entries) x = g(rng);
    auto J = CouplingTensors::from_entries(n, {{3, entries}});
    auto terms = hamiltonian_terms(Mixture::pure(3, 0.9), n);
    std::vector<double> s{0.4, -1.1, 1.3};
    double acc = 0.0;
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            for (int k = 0; k < 3; ++k)
                acc += entries[static_cast<std::size_t>(9 * i + 3 * j + k)] * s[static_cast<std::size_t>(i)] *
                       s[static_cast<std::size_t>(j)] * s[static_cast<std::size_t>(k)];
    double coeff = 0.9 / 3.0;  // gamma * n^{-(p-1)/2}
    CHECK(field_value(J, terms, s) == Catch::Approx(coeff * acc).epsilon(1e-12));
}

TEST_CASE("single-field covariance matches n xi(overlap)") {
    Rng rng = make_stream(21, "cov");
    int n = 5;
    auto mix = Mixture::validated({0.5, 1.0, 0.7});
    auto sa = uniform_state(n, rng);
    auto sb = uniform_state(n, rng);
    auto chk = covariance_check(n, mix, sa.coords, sb.coords, 4000, 99);
    INFO("empirical " << chk.empirical << " theory " << chk.theory << " z " << chk.z);
    CHECK(std::abs(chk.z) < 5.0);
    CHECK(chk.stderr_ > 0.0);
}

TEST_CASE("perturbed field variance is n xi(1) + eta(1)") {
    int n = 4;
    auto mix = Mixture::pure(2);
    auto params = PerturbationParams::validated({1.4, 1.8, 1.1}, 0.375);
    PerturbSpec spec = PerturbSpec::standard(3);
    spec.fixed_x = params;

    Rng rng = make_stream(31, "var");
    auto s = uniform_state(n, rng);
    int k = 4000;
    std::vector<double> vals(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
        auto f = PerturbedField::sample(n, mix, spec, child_seed(77, "draw",
                                                                 static_cast<std::uint64_t>(i)));
        vals[static_cast<std::size_t>(i)] = f.value(s.coords);
    }
    double m = mean(vals);
    double var = 0.0;
    for (double v : vals) var += (v - m) * (v - m);
    var /= k - 1;
    double theory = n * mix.xi(1.0) + eta_x(params, n, 1.0);
    double se = theory * std::sqrt(2.0 / (k - 1));
    INFO("var " << var << " theory " << theory << " se " << se);
    CHECK(std::abs(var - theory) < 5.0 * se);
}

TEST_CASE("dump and load round-trip bit-exactly") {
    auto J = CouplingTensors::sample(3, {1, 2, 3}, 4242);
    std::stringstream ss;
    J.dump(ss);
    auto K = CouplingTensors::load(ss);
    CHECK(K.dim() == 3);
    CHECK(K.seed() == 4242);
    REQUIRE(K.degrees() == J.degrees());
    for (int p : {1, 2, 3}) {
        const auto& a = J.tensor(p);
        const auto& b = K.tensor(p);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
    }
    std::stringstream bad("not a dump");
    CHECK_THROWS_AS(CouplingTensors::load(bad), Error);
}

TEST_CASE("sampling is reproducible and budget-guarded") {
    auto a = CouplingTensors::sample(4, {2, 3}, 555);
    auto b = CouplingTensors::sample(4, {2, 3}, 555);
    CHECK(a.tensor(3) == b.tensor(3));
    auto c = CouplingTensors::sample(4, {2, 3}, 556);
    CHECK(a.tensor(3) != c.tensor(3));

    CHECK_THROWS_AS(CouplingTensors::sample(0, {2}, 1), DimensionMismatch);
    CHECK_THROWS_AS(CouplingTensors::sample(4, {2, 2}, 1), DomainError);
    CHECK_THROWS_AS(field_detail::checked_pow(10, 19), ResourceLimit);

    setenv("SPINLAB_MEM_BUDGET_MB", "1", 1);
    CHECK_THROWS_AS(CouplingTensors::sample(512, {2}, 1), ResourceLimit);
    setenv("SPINLAB_MEM_BUDGET_MB", "bogus", 1);
    CHECK_THROWS_AS(mem_budget_bytes(), ConfigError);
    unsetenv("SPINLAB_MEM_BUDGET_MB");
    CHECK(mem_budget_bytes() == std::size_t{2048} * 1024 * 1024);
}

TEST_CASE("derivatives agree with finite differences") {
    int n = 5;
    auto mix = Mixture::validated({0.3, 1.0, 0.0, 0.4});
    PerturbSpec spec = PerturbSpec::standard(3);
    auto f = PerturbedField::sample(n, mix, spec, 808);
    Rng rng = make_stream(808, "points");
    auto s = uniform_state(n, rng);
    auto u = uniform_sphere(n, 1.0, rng);
    double h = 1e-5;

    auto shift = [&](double eps, std::span<const double> dir) {
        std::vector<double> out(s.coords);
        for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] += eps * dir[static_cast<std::size_t>(i)];
        return out;
    };

    SECTION("gradient") {
        auto grad = f.gradient(s.coords);
        for (int i = 0; i < n; ++i) {
            std::vector<double> e(static_cast<std::size_t>(n), 0.0);
            e[static_cast<std::size_t>(i)] = 1.0;
            double fd = (f.value(shift(h, e)) - f.value(shift(-h, e))) / (2 * h);
            CHECK(grad[static_cast<std::size_t>(i)] == Catch::Approx(fd).margin(1e-6));
        }
    }

    SECTION("directional second derivative") {
        double d2 = f.directional_second(s.coords, u.coords);
        double fd = (f.value(shift(h, u.coords)) - 2 * f.value(s.coords) +
                     f.value(shift(-h, u.coords))) / (h * h);
        CHECK(d2 == Catch::Approx(fd).margin(1e-4));
    }

    SECTION("hessian-vector product") {
        std::vector<double> hv(static_cast<std::size_t>(n), 0.0);
        f.hessian_vec_acc(s.coords, u.coords, hv);
        auto gp = f.gradient(shift(h, u.coords));
        auto gm = f.gradient(shift(-h, u.coords));
        for (int i = 0; i < n; ++i) {
            double fd = (gp[static_cast<std::size_t>(i)] - gm[static_cast<std::size_t>(i)]) / (2 * h);
            CHECK(hv[static_cast<std::size_t>(i)] == Catch::Approx(fd).margin(1e-5));
        }
        // consistency: u^T (Hess u) equals the directional second derivative
        CHECK(dot(u.coords, hv) == Catch::Approx(f.directional_second(s.coords, u.coords)).epsilon(1e-10));
    }

    SECTION("gradient of the directional second derivative") {
        std::vector<double> g2(static_cast<std::size_t>(n), 0.0);
        f.directional_second_grad_acc(s.coords, u.coords, g2);
        for (int i = 0; i < n; ++i) {
            std::vector<double> e(static_cast<std::size_t>(n), 0.0);
            e[static_cast<std::size_t>(i)] = 1.0;
            double fd = (f.directional_second(shift(h, e), u.coords) -
                         f.directional_second(shift(-h, e), u.coords)) / (2 * h);
            CHECK(g2[static_cast<std::size_t>(i)] == Catch::Approx(fd).margin(1e-4));
        }
    }
}

TEST_CASE("bundle shares x weights and decouples cleanly") {
    auto mix = Mixture::validated({0.0, 1.0, 0.5});
    PerturbSpec spec = PerturbSpec::standard(4);
    auto b = FieldBundle::sample(3, 2, mix, spec, 31337);

    CHECK(b.whole.n == 5);
    CHECK(b.first.n == 3);
    CHECK(b.second.n == 2);
    // x weights shared between whole and first; y independent
    REQUIRE(b.whole.perturbed());
    CHECK(b.whole.params.x == b.first.params.x);
    CHECK(b.whole.params.x != b.second.params.x);
    // distinct coupling streams
    CHECK(b.whole.main.tensor(2)[0] != b.first.main.tensor(2)[0]);

    Rng rng = make_stream(5150, "pt");
    auto pc = uniform_product(3, 2, rng);
    double dec = decoupled_evaluate(b, pc.rho.coords, pc.tau.coords);
    auto cat = pc.concat();
    double manual = b.whole.main_value(cat) + b.first.pert_value(pc.rho.coords) +
                    b.second.pert_value(pc.tau.coords);
    CHECK(dec == Catch::Approx(manual).margin(1e-13));

    std::vector<double> wrong(4, 0.5);
    CHECK_THROWS_AS(decoupled_evaluate(b, wrong, pc.tau.coords), DimensionMismatch);
}

TEST_CASE("decoupled covariance matches sampled products") {
    auto mix = Mixture::validated({0.0, 1.0});
    PerturbSpec spec = PerturbSpec::standard(2);
    // fix both weight draws so every bundle shares the same covariance profile
    Rng wr = make_stream(999, "w");
    spec.fixed_x = PerturbationParams::sample(2, 0.375, wr);
    spec.fixed_y = PerturbationParams::sample(2, 0.375, wr);

    int n = 3, m = 2;
    Rng rng = make_stream(1000, "pts");
    auto pa = uniform_product(n, m, rng);
    auto pb = uniform_product(n, m, rng);
    auto t = overlaps(pa, pb);

    int k = 3000;
    std::vector<double> prod(static_cast<std::size_t>(k));
    double theory = 0.0;
    for (int i = 0; i < k; ++i) {
        auto b = FieldBundle::sample(n, m, mix, spec,
                                     child_seed(1234, "draw", static_cast<std::uint64_t>(i)));
        prod[static_cast<std::size_t>(i)] = decoupled_evaluate(b, pa.rho.coords, pa.tau.coords) *
                                            decoupled_evaluate(b, pb.rho.coords, pb.tau.coords);
        if (i == 0) theory = decoupled_covariance(b, t);
    }
    double z = (mean(prod) - theory) / standard_error(prod);
    INFO("mean " << mean(prod) << " theory " << theory);
    CHECK(std::abs(z) < 5.0);
}
