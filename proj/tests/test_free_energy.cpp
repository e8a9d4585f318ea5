#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>
#include <vector>

#include <spinlab/free_energy.hpp>
#include <spinlab/quadrature.hpp>

using namespace spinlab;

TEST_CASE("constant fields give the constant back exactly") {
    auto h = [](std::span<const double>) { return 1.7; };
    for (int n : {1, 2, 3}) CHECK(exact_log_partition(h, n) == Catch::Approx(1.7).margin(1e-9));
    CHECK_THROWS_AS(exact_log_partition(h, 4), UnsupportedDimension);

    Rng rng = make_stream(3, "mc");
    auto est = mc_log_partition(h, 6, std::sqrt(6.0), 500, rng);
    CHECK(est.value == Catch::Approx(1.7).margin(1e-12));
    CHECK(est.stderr_ == Catch::Approx(0.0).margin(1e-12));
    CHECK(est.jack_bias == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("log-mean-exp summary matches hand numbers") {
    std::vector<double> vals{std::log(1.0), std::log(3.0)};
    auto est = log_mean_exp_full(vals);
    CHECK(est.value == Catch::Approx(std::log(2.0)).margin(1e-14));
    // q = {1/4, 3/4}; rel_var = (2q1-1)^2 + (2q2-1)^2 = 1/2; se = sqrt(1/4)
    CHECK(est.stderr_ == Catch::Approx(0.5).margin(1e-14));
    // leave-one-out values are log 3 and log 1
    double jack = 0.5 * (std::log(3.0) + 0.0);
    CHECK(est.jack_bias == Catch::Approx(jack - std::log(2.0)).margin(1e-12));
}

TEST_CASE("quadrature is rotation invariant and node-converged at n = 2") {
    auto J = CouplingTensors::sample(2, {1, 2}, 606);
    auto terms = hamiltonian_terms(Mixture::validated({0.6, 1.0}), 2);
    auto h = [&](std::span<const double> s) { return field_value(J, terms, s); };
    double base = exact_log_partition(h, 2);

    double th = 0.83;
    double co = std::cos(th), si = std::sin(th);
    auto hr = [&](std::span<const double> s) {
        double r[2] = {co * s[0] - si * s[1], si * s[0] + co * s[1]};
        return field_value(J, terms, std::span<const double>(r, 2));
    };
    CHECK(exact_log_partition(hr, 2) == Catch::Approx(base).margin(1e-8));

    ExactNodes half;
    half.circle = 2048;
    CHECK(exact_log_partition(h, 2, half) == Catch::Approx(base).margin(1e-8));
}

TEST_CASE("node halving keeps n = 3 partitions fixed") {
    auto J = CouplingTensors::sample(3, {1, 2, 3}, 607);
    auto terms = hamiltonian_terms(Mixture::validated({0.4, 0.8, 0.5}), 3);
    auto h = [&](std::span<const double> s) { return field_value(J, terms, s); };
    double base = exact_log_partition(h, 3);
    ExactNodes half;
    half.polar = 128;
    half.azimuth = 256;
    CHECK(exact_log_partition(h, 3, half) == Catch::Approx(base).margin(1e-8));
}

TEST_CASE("one-spin free energy matches the Gauss-Hermite route") {
    // H(s) = gamma J s on {-1, +1}: log Z = log cosh(gamma J), J standard
    // normal, so the quenched value is the Hermite integral of log cosh.
    double gamma = 1.3;
    auto gh = gauss_hermite(64);
    double oracle = 0.0;
    for (std::size_t i = 0; i < gh.nodes.size(); ++i)
        oracle += gh.weights[i] * std::log(std::cosh(gamma * std::sqrt(2.0) * gh.nodes[i]));
    oracle /= std::sqrt(std::numbers::pi);

    long n_disorder = 20000;
    auto est = quenched_free_energy(1, Mixture::pure(1, gamma), PerturbSpec::off(), n_disorder, 0,
                                    12121);
    INFO("estimate " << est.value << " oracle " << oracle << " se " << est.stderr_);
    CHECK(est.method == Method::exact_quadrature);
    CHECK(est.n_inner == 0);
    CHECK(std::abs(est.value - oracle) < 5.0 * est.stderr_);
}

TEST_CASE("monte carlo log-partition agrees with the exact route") {
    auto mix = Mixture::validated({0.5, 1.0});
    auto field = PerturbedField::sample(2, mix, PerturbSpec::standard(3), 2424);
    auto h = [&](std::span<const double> s) { return field.value(s); };
    double exact = exact_log_partition(h, 2);
    Rng rng = make_stream(2424, "inner");
    auto mc = mc_log_partition(h, 2, std::sqrt(2.0), 40000, rng);
    INFO("mc " << mc.value << " exact " << exact << " se " << mc.stderr_);
    CHECK(std::abs(mc.value - exact) < 5.0 * mc.stderr_);
    CHECK(std::abs(mc.jack_bias) < 5.0 * mc.stderr_);
}

TEST_CASE("quenched estimates resolve methods and keep records") {
    auto mix = Mixture::pure(2);
    std::vector<ReplicaRecord> rec;
    auto est = quenched_free_energy(2, mix, PerturbSpec::off(), 8, 0, 99, Method::automatic, &rec);
    CHECK(est.method == Method::exact_quadrature);
    CHECK(rec.size() == 8);
    CHECK(rec[3].replica == 3);
    CHECK(rec[3].method == Method::exact_quadrature);
    CHECK(est.total() == Catch::Approx(2.0 * est.value));

    rec.clear();
    auto big = quenched_free_energy(5, mix, PerturbSpec::off(), 4, 800, 99, Method::automatic, &rec);
    CHECK(big.method == Method::plain_mc);
    CHECK(big.n_inner == 800);
    CHECK(rec[0].method == Method::plain_mc);

    // same seed, forced MC at a small n: reproducible
    auto a = quenched_free_energy(2, mix, PerturbSpec::off(), 4, 500, 7, Method::plain_mc);
    auto b = quenched_free_energy(2, mix, PerturbSpec::off(), 4, 500, 7, Method::plain_mc);
    CHECK(a.value == b.value);

    CHECK_THROWS_AS(quenched_free_energy(2, mix, PerturbSpec::off(), 1, 0, 9), DomainError);
}

TEST_CASE("product free energy at 1x1 is an exact enumeration") {
    auto mix = Mixture::validated({0.8, 0.6});
    PerturbSpec spec = PerturbSpec::standard(2);
    long n_disorder = 6;
    std::vector<ReplicaRecord> rec;
    auto est = product_free_energy(1, 1, mix, spec, ProductMode::decoupled, n_disorder, 0, 444,
                                   &rec);
    CHECK(est.n_inner == 0);
    CHECK(est.dim == 2);
    REQUIRE(rec.size() == static_cast<std::size_t>(n_disorder));

    // replay one replica by hand
    FieldBundle b = FieldBundle::sample(1, 1, mix, spec, rec[2].seed);
    std::vector<double> vals;
    for (double a : {1.0, -1.0})
        for (double t : {1.0, -1.0}) {
            std::vector<double> rho{a}, tau{t};
            vals.push_back(decoupled_evaluate(b, rho, tau));
        }
    CHECK(rec[2].logz == Catch::Approx(log_mean_exp(vals)).margin(1e-12));
}

TEST_CASE("perturbation raises the quenched free energy on paired draws") {
    // log Z is convex in the field, so averaging over an independent centered
    // perturbation can only raise the disorder mean.
    auto mix = Mixture::pure(2);
    long n_disorder = 300;
    auto plain = quenched_free_energy(2, mix, PerturbSpec::off(), n_disorder, 0, 2026);
    auto pert = quenched_free_energy(2, mix, PerturbSpec::standard(4), n_disorder, 0, 2026);
    double diff = pert.value - plain.value;
    double se = std::sqrt(plain.stderr_ * plain.stderr_ + pert.stderr_ * pert.stderr_);
    INFO("diff " << diff << " se " << se);
    CHECK(diff > -3.0 * se);
}

TEST_CASE("superadditivity defect wires the three estimates together") {
    auto mix = Mixture::pure(2);
    auto r = superadditivity_defect(1, 1, mix, PerturbSpec::off(), 40, 0, 888);
    CHECK(r.defect == Catch::Approx(r.whole.total() - r.left.total() - r.right.total()));
    CHECK(r.stderr_ > 0.0);
    CHECK(r.whole.dim == 2);
    CHECK(r.left.dim == 1);
}
