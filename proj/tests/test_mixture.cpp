#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <spinlab/mixture.hpp>

using namespace spinlab;

TEST_CASE("mixture validation") {
    auto m = Mixture::validated({0.0, 1.0, 0.0, 0.5, 0.0, 0.0});
    CHECK(m.max_degree() == 4);  // trailing zeros trimmed
    CHECK(m.coeff(2) == 1.0);
    CHECK(m.coeff(4) == 0.5);
    CHECK(m.coeff(1) == 0.0);
    CHECK(m.coeff(9) == 0.0);
    CHECK(m.active_degrees() == std::vector<int>{2, 4});

    CHECK_THROWS_AS(Mixture::validated({1.0, -0.1}), NegativeCoefficient);
    CHECK_THROWS_AS(Mixture::validated({0.0, 0.0}), AllZero);
    CHECK_THROWS_AS(Mixture::validated({}), AllZero);

    auto p3 = Mixture::pure(3, 2.0);
    CHECK(p3.active_degrees() == std::vector<int>{3});
    CHECK(p3.coeff(3) == 2.0);
}

TEST_CASE("xi matches the direct power sum") {
    auto m = Mixture::validated({0.5, 1.0, 0.25});
    for (double t : {-1.0, -0.7, -0.2, 0.0, 0.3, 0.9, 1.0}) {
        double direct = 0.25 * t + 1.0 * t * t + 0.0625 * t * t * t;
        double d1 = 0.25 + 2.0 * t + 3 * 0.0625 * t * t;
        double d2 = 2.0 + 6 * 0.0625 * t;
        CHECK(m.xi(t) == Catch::Approx(direct).margin(1e-15));
        CHECK(m.xi(t, 1) == Catch::Approx(d1).margin(1e-15));
        CHECK(m.xi(t, 2) == Catch::Approx(d2).margin(1e-15));
    }
    CHECK(m.xi(0.0) == 0.0);  // no constant term
    CHECK_THROWS_AS(m.xi(1.5), DomainError);
    CHECK_THROWS_AS(m.xi(0.5, 3), DomainError);
}

TEST_CASE("xi derivatives agree with finite differences") {
    auto m = Mixture::validated({0.3, 0.0, 1.0, 0.0, 0.2});
    double h = 1e-6;
    for (double t : {-0.8, -0.3, 0.1, 0.6, 0.95}) {
        double fd1 = (m.xi(t + h) - m.xi(t - h)) / (2 * h);
        double fd2 = (m.xi(t + h, 1) - m.xi(t - h, 1)) / (2 * h);
        CHECK(m.xi(t, 1) == Catch::Approx(fd1).epsilon(1e-7));
        CHECK(m.xi(t, 2) == Catch::Approx(fd2).epsilon(1e-7));
    }
}

TEST_CASE("convexity report flags even and odd mixtures") {
    auto even = convexity_report(Mixture::validated({0.0, 1.0, 0.0, 0.5}));
    CHECK(even.even);
    CHECK(even.convex_on_unit);
    CHECK(even.convex_on_full);

    // pure 3-spin: xi'' = 6t changes sign at 0
    auto odd = convexity_report(Mixture::pure(3));
    CHECK_FALSE(odd.even);
    CHECK(odd.convex_on_unit);
    CHECK_FALSE(odd.convex_on_full);
    CHECK(odd.min_second_full == Catch::Approx(-6.0).margin(1e-9));

    // pure 1-spin: xi'' = 0 everywhere, convex but not strictly
    auto lin = convexity_report(Mixture::pure(1));
    CHECK(lin.convex_on_full);
    CHECK(lin.min_second_full == 0.0);
}

TEST_CASE("perturbation parameters") {
    CHECK_THROWS_AS(PerturbationParams::validated({0.5}, 0.375), DomainError);
    CHECK_THROWS_AS(PerturbationParams::validated({1.5}, 0.2), DomainError);
    CHECK_THROWS_AS(PerturbationParams::validated({1.5}, 0.5), DomainError);
    CHECK_THROWS_AS(PerturbationParams::validated({}, 0.375), DomainError);

    Rng rng = make_stream(7, "weights-x");
    auto pp = PerturbationParams::sample(4, 0.375, rng);
    CHECK(pp.p_max() == 4);
    for (int p = 1; p <= 4; ++p) {
        CHECK(pp.weight(p) >= 1.0);
        CHECK(pp.weight(p) <= 2.0);
    }
    CHECK(pp.weight(5) == 0.0);

    CHECK(pp.strength(1) == 1.0);
    CHECK(pp.strength(16) == Catch::Approx(std::pow(16.0, 0.375)));
}

TEST_CASE("eta_x matches the hand-written sum") {
    auto pp = PerturbationParams::validated({1.5, 1.2, 1.9}, 0.375);
    int n = 9;
    double s2 = std::pow(9.0, 0.75);
    for (double t : {-1.0, -0.4, 0.0, 0.5, 1.0}) {
        double direct = 0.0;
        for (int p = 1; p <= 3; ++p)
            direct += std::pow(0.25, p) * pp.weight(p) * pp.weight(p) * std::pow(t, p);
        CHECK(eta_x(pp, n, t) == Catch::Approx(s2 * direct).margin(1e-12));
    }
    // scale grows like n^{2c}: sublinear, so eta(1)/n -> 0
    double e16 = eta_x(pp, 16, 1.0), e256 = eta_x(pp, 256, 1.0);
    CHECK(e256 / 256.0 < e16 / 16.0);
}
