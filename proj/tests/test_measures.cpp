#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "mfc/error.hpp"
#include "mfc/measures.hpp"
#include "mfc/model.hpp"
#include "mfc/transport.hpp"
#include "oracles.hpp"

using namespace mfc;

namespace {

EmpiricalMeasure atoms1d(std::vector<double> x, std::vector<double> w = {}) {
    EmpiricalMeasure e = EmpiricalMeasure::uniform(1, std::move(x));
    e.weights = std::move(w);
    return e;
}

EmpiricalMeasure from_slots(const oracle::SixSlots& s) {
    std::vector<double> pts;
    for (const auto& a : s.slot)
        for (int k = 0; k < s.dim; ++k) pts.push_back(a[k]);
    return EmpiricalMeasure::uniform(s.dim, pts);
}

GridDensity gaussian(const BoxGrid& g, double mu, double sd) {
    InitialMeasure m;
    m.mean[0] = mu;
    m.sd = sd;
    return m.on(g);
}

}  // namespace

TEST_CASE("d1 examples") {
    CHECK(wasserstein1(atoms1d({0.0}), atoms1d({1.0})) == doctest::Approx(1.0).epsilon(1e-14));
    const EmpiricalMeasure m = atoms1d({-0.3, 0.2, 1.7});
    CHECK(wasserstein1(m, m) == doctest::Approx(0.0));
    // Brute force over the 2x2 couplings: mass 1/2 from 1 to 3 costs 1.
    CHECK(wasserstein1(atoms1d({0.0, 1.0}), atoms1d({0.0, 3.0})) ==
          doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("d2 examples") {
    const EmpiricalMeasure m = atoms1d({-0.3, 0.2, 1.7}, {0.2, 0.5, 0.3});
    const EmpiricalMeasure shifted = atoms1d({0.45, 0.95, 2.45}, {0.2, 0.5, 0.3});
    CHECK(wasserstein2(m, shifted) == doctest::Approx(0.75).epsilon(1e-13));
    CHECK(wasserstein2(atoms1d({0.0}), atoms1d({-1.0, 1.0})) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(wasserstein2(m, m) == doctest::Approx(0.0));

    // Translating a grid density by whole cells.
    const BoxGrid g(1, 8.0, 321);
    const double c = 10 * g.dx();
    CHECK(wasserstein2(gaussian(g, 0.0, 0.5), gaussian(g, c, 0.5)) ==
          doctest::Approx(c).epsilon(1e-6));
    CHECK(wasserstein1(gaussian(g, 0.0, 0.5), gaussian(g, c, 0.5)) ==
          doctest::Approx(c).epsilon(1e-6));
}

TEST_CASE("2D atoms match the exhaustive LP") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const auto a = oracle::random_six_slots(rng, 2);
        const auto b = oracle::random_six_slots(rng, 2);
        for (int p : {1, 2})
            CHECK(std::abs(wasserstein(from_slots(a), from_slots(b), p) -
                           oracle::exhaustive_wasserstein(a, b, p)) <= 1e-9);
    }
}

TEST_CASE("network simplex on a degenerate square problem") {
    // Identity cost structure: the optimum keeps all mass in place.
    const std::vector<double> supply{0.25, 0.25, 0.25, 0.25};
    std::vector<double> cost(16);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) cost[i * 4 + j] = std::abs(i - j);
    const TransportSolution s = solve_transport(supply, supply, cost);
    CHECK(s.cost == doctest::Approx(0.0));
    double total = 0.0;
    for (const auto& e : s.plan) total += e.flow;
    CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("moments") {
    CHECK(moment(atoms1d({2.0}), 2) == doctest::Approx(4.0));
    CHECK(moment(atoms1d({-1.0, 1.0}), 1) == doctest::Approx(1.0));
    const BoxGrid g(1, 8.0, 641);
    const double oracle_m2 = oracle::truncated_normal_second_moment(1.0, 8.0);
    CHECK(std::abs(moment(gaussian(g, 0.0, 1.0), 2) - oracle_m2) <= 1e-3);
    CHECK(std::abs(oracle_m2 - 1.0) <= 1e-3);
}

TEST_CASE("kernel density estimate") {
    const BoxGrid g(1, 8.0, 161);
    SUBCASE("single particle") {
        const GridDensity d = density_from_particles(atoms1d({0.0}), g, 1e-3);
        CHECK(d.mass() == doctest::Approx(1.0));
        const std::size_t centre = 80;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (i != centre) CHECK(d.values[i] < d.values[centre]);
    }
    SUBCASE("symmetric pair") {
        const GridDensity d = density_from_particles(atoms1d({-1.3, 1.3}), g, 0.3);
        for (std::size_t i = 0; i < g.size(); ++i)
            CHECK(d.values[i] == doctest::Approx(d.values[g.size() - 1 - i]).epsilon(1e-12));
    }
    SUBCASE("Gaussian samples") {
        std::mt19937_64 rng(11);
        std::normal_distribution<double> n01;
        std::vector<double> x(10000);
        for (double& v : x) v = n01(rng);
        const GridDensity d = density_from_particles(atoms1d(x), g, 0.2);
        Field err(g.size());
        for (std::size_t i = 0; i < g.size(); ++i)
            err[i] = std::abs(d.values[i] - oracle::truncated_normal_pdf(g.coord(i), 0.0, 1.0, 8.0));
        CHECK(g.integrate(err) <= 0.05);
    }
}

TEST_CASE("deposit preserves mass and mean") {
    const BoxGrid g(1, 4.0, 81);
    const EmpiricalMeasure e = atoms1d({-1.234, 0.5, 2.71}, {0.2, 0.3, 0.5});
    const GridDensity d = deposit_particles(e, g);
    CHECK(d.mass() == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(mean(d)[0] == doctest::Approx(mean(e)[0]).epsilon(1e-13));
}

TEST_CASE("1D exact routines agree with each other") {
    const BoxGrid g(1, 6.0, 241);
    const GridDensity a = gaussian(g, -0.4, 0.6);
    const GridDensity b = gaussian(g, 0.7, 0.9);
    CHECK(cdf_l1_distance(a, b) ==
          doctest::Approx(wasserstein_grid_quantile_1d(a, b, 1)).epsilon(1e-6));
    // Two Gaussians: d2^2 = (mu difference)^2 + (sd difference)^2.
    CHECK(wasserstein_grid_quantile_1d(a, b, 2) ==
          doctest::Approx(std::hypot(1.1, 0.3)).epsilon(1e-3));
    CHECK(quantile_1d(a, 0.5) == doctest::Approx(-0.4).epsilon(1e-6));
}

TEST_CASE("errors") {
    CHECK_THROWS_AS(wasserstein1(EmpiricalMeasure::uniform(1, {}), atoms1d({0.0})), Error);
    CHECK_THROWS_AS(wasserstein1(EmpiricalMeasure::uniform(2, {0.0, 0.0}), atoms1d({0.0})), Error);
    CHECK_THROWS_AS(GridDensity::normalized(BoxGrid(1, 1.0, 9), Field(9, -1.0)), Error);
}
