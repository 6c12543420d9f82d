#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "mfc/error.hpp"
#include "mfc/pde.hpp"
#include "oracles.hpp"

using namespace mfc;

namespace {

Field nodal(const BoxGrid& g, double (*f)(double)) {
    Field v(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) v[i] = f(g.coord(i));
    return v;
}

double variance_1d(const BoxGrid& g, const Field& m) {
    Field x(g.size()), x2(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        x[i] = g.coord(i) * m[i];
        x2[i] = g.coord(i) * g.coord(i) * m[i];
    }
    const double mu = g.integrate(x);
    return g.integrate(x2) - mu * mu;
}

double mean_1d(const BoxGrid& g, const Field& m) {
    Field x(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) x[i] = g.coord(i) * m[i];
    return g.integrate(x);
}

DriftField constant_drift(const SpaceTimeGrid& grid, double c) {
    DriftField d = DriftField::zeros(grid);
    for (auto& slice : d.alpha) std::fill(slice.begin(), slice.end(), c);
    return d;
}

}  // namespace

// Interior: at least three diffusion lengths 2 sqrt(T) from the reflecting wall.
TEST_CASE("affine terminal data solve the HJB exactly in the interior") {
    const SpaceTimeGrid grid = SpaceTimeGrid::make(1, 8.0, 161, 0.0, 1.0, 64);
    const Hamiltonian h;
    const Field g = nodal(grid.space(), [](double x) { return 0.5 * x; });
    const ValueField u = solve_hjb(grid, h, {}, g);
    double err = 0.0;
    for (int n = 0; n <= grid.nt(); ++n)
        for (std::size_t i = 0; i < grid.space().size(); ++i) {
            const double x = grid.space().coord(i);
            if (std::abs(x) > 8.0 - 6.0) continue;
            err = std::max(err, std::abs(u.u[n][i] - (0.5 * x - 0.25 * (1.0 - grid.time(n)))));
        }
    CHECK(err <= 1e-4);
    CHECK(u.residual <= 1e-10);
}

TEST_CASE("constant terminal data stay constant") {
    const SpaceTimeGrid grid = SpaceTimeGrid::make(2, 3.0, 21, 0.0, 1.0, 16);
    const ValueField u = solve_hjb(grid, Hamiltonian(), {}, Field(grid.space().size(), 1.75));
    for (const Field& slice : u.u)
        for (double v : slice) CHECK(v == doctest::Approx(1.75).epsilon(1e-12));
}

TEST_CASE("HJB self-convergence halves under refinement") {
    const Hamiltonian h({0.0, Hamiltonian::Drift::Constant, 0.3});
    auto bump = [](double x) { return std::cos(x) * std::exp(-0.5 * x * x); };
    std::vector<Field> u0;
    for (int level = 0; level < 4; ++level) {
        const int nx = 40 * (1 << level) + 1;
        const int nt = 16 * (1 << level);
        const SpaceTimeGrid grid = SpaceTimeGrid::make(1, 4.0, nx, 0.0, 0.5, nt);
        Field g(grid.space().size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = bump(grid.space().coord(i));
        u0.push_back(solve_hjb(grid, h, {}, g).u[0]);
    }
    auto diff = [&](int level) {
        double e = 0.0;
        for (int i = 0; i <= 40; ++i)
            e = std::max(e, std::abs(u0[level][i << level] - u0[level + 1][i << (level + 1)]));
        return e;
    };
    const double e0 = diff(0), e1 = diff(1), e2 = diff(2);
    CHECK(e0 / e1 >= 1.5);
    CHECK(e1 / e2 >= 1.5);
}

TEST_CASE("HJB blow-up is detected") {
    const SpaceTimeGrid grid = SpaceTimeGrid::make(1, 8.0, 33, 0.0, 1.0, 8);
    const Field g = nodal(grid.space(), [](double x) { return 1e3 * x * x; });
    try {
        solve_hjb(grid, Hamiltonian(), {}, g);
        FAIL("expected BlowUp");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::BlowUp);
    }
}

TEST_CASE("diffusion step is self-adjoint and mass preserving") {
    const BoxGrid g(2, 2.0, 17);
    const DiffusionStep S(g, 0.05);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Field a(g.size()), b(g.size());
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    Field Sa = a, Sb = b;
    S.apply(Sa);
    S.apply(Sb);
    CHECK(g.dot(Sa, b) == doctest::Approx(g.dot(a, Sb)).epsilon(1e-13));
    CHECK(g.integrate(Sa) == doctest::Approx(g.integrate(a)).epsilon(1e-13));
}

TEST_CASE("transport adjoint in the trapezoid inner product") {
    const BoxGrid g(1, 3.0, 31);
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Field alpha(g.size()), m(g.size()), v(g.size());
    for (auto& x : alpha) x = 2.0 * u(rng);
    for (auto& x : m) x = u(rng);
    for (auto& x : v) x = u(rng);
    Field Am(g.size(), 0.0), Atv(g.size(), 0.0);
    scheme::add_transport(g, alpha, m, Am);
    scheme::add_transport_adjoint(g, alpha, v, Atv);
    CHECK(g.dot(Am, v) == doctest::Approx(g.dot(m, Atv)).epsilon(1e-12));
    CHECK(g.integrate(Am) == doctest::Approx(0.0).epsilon(1e-13));
}

TEST_CASE("Fokker-Planck with zero drift follows the Gaussian law") {
    const SpaceTimeGrid grid = SpaceTimeGrid::make(1, 8.0, 321, 0.0, 1.0, 64);
    InitialMeasure m0;
    m0.sd = 0.5;
    FpStats stats;
    const DensityPath path =
        solve_fp_forward(grid, m0.on(grid.space()), DriftField::zeros(grid), &stats);
    const double var0 = variance_1d(grid.space(), path.slices[0]);
    for (int n : {16, 32, 64}) {
        const double expected = var0 + 2.0 * grid.time(n);
        CHECK(std::abs(variance_1d(grid.space(), path.slices[n]) - expected) <= 0.01 * expected);
    }
    CHECK(stats.max_mass_drift <= 1e-9);
    for (const Field& s : path.slices) {
        CHECK(grid.space().integrate(s) == doctest::Approx(1.0).epsilon(1e-12));
        for (std::size_t i = 0; i < s.size(); ++i)
            CHECK(s[i] == doctest::Approx(s[s.size() - 1 - i]).epsilon(1e-12));
    }
}

TEST_CASE("constant drift shifts the mean") {
    const SpaceTimeGrid grid = SpaceTimeGrid::make(1, 8.0, 321, 0.0, 0.25, 32);
    InitialMeasure m0;
    m0.sd = 0.5;
    const double c = 0.8;
    const DensityPath path = solve_fp_forward(grid, m0.on(grid.space()), constant_drift(grid, c));
    for (int n : {8, 16, 32}) {
        const double shift = mean_1d(grid.space(), path.slices[n]) - mean_1d(grid.space(), path.slices[0]);
        CHECK(std::abs(shift - c * grid.time(n)) <= 0.01 * c * grid.time(n));
    }
}

TEST_CASE("signed forward propagation conserves the integral") {
    const SpaceTimeGrid grid = SpaceTimeGrid::make(1, 4.0, 81, 0.0, 1.0, 16);
    Field rho0(grid.space().size(), 0.0);
    rho0[30] = 1.0;
    rho0[50] = -1.0;
    const FieldPath rho = propagate_linear_forward(grid, constant_drift(grid, -0.4), rho0);
    for (const Field& s : rho) CHECK(std::abs(grid.space().integrate(s)) <= 1e-13);
}

TEST_CASE("dual solve oracles") {
    const SpaceTimeGrid grid = SpaceTimeGrid::make(1, 8.0, 321, 0.0, 0.5, 128);
    const BoxGrid& g = grid.space();

    SUBCASE("constant terminal") {
        const FieldPath psi =
            solve_linear_dual(grid, constant_drift(grid, 0.7), Field(g.size(), -2.0), 0, grid.nt());
        for (const Field& s : psi)
            for (double v : s) CHECK(v == doctest::Approx(-2.0).epsilon(1e-12));
    }
    SUBCASE("heat smoothing") {
        const double s2 = 0.25;
        Field bump(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) bump[i] = std::exp(-0.5 * g.coord(i) * g.coord(i) / s2);
        const FieldPath psi = solve_linear_dual(grid, DriftField::zeros(grid), bump, 0.0, 0.5);
        const double var = s2 + 2.0 * 0.5;
        double err = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double x = g.coord(i);
            err = std::max(err, std::abs(psi[0][i] - std::sqrt(s2 / var) * std::exp(-0.5 * x * x / var)));
        }
        CHECK(err <= 0.01 * std::sqrt(s2 / var));
    }
    SUBCASE("affine terminal with constant drift") {
        const double a = 0.6, c = -0.9;
        Field term(g.size());
        for (std::size_t i = 0; i < g.size(); ++i) term[i] = a * g.coord(i);
        const int n1 = 32, n2 = 96;
        const FieldPath psi = solve_linear_dual(grid, constant_drift(grid, c), term, n1, n2);
        REQUIRE(psi.size() == static_cast<std::size_t>(n2 - n1 + 1));
        for (int n = n1; n <= n2; ++n)
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double x = g.coord(i);
                if (std::abs(x) > 4.0) continue;
                CHECK(std::abs(psi[n - n1][i] - (a * x + a * c * (grid.time(n2) - grid.time(n)))) <=
                      1e-6);
            }
    }
}

TEST_CASE("grid validation") {
    CHECK_THROWS_AS(SpaceTimeGrid::make(3, 1.0, 16, 0.0, 1.0, 16), Error);
    CHECK_THROWS_AS(SpaceTimeGrid::make(1, 1.0, 4, 0.0, 1.0, 16), Error);
    CHECK_THROWS_AS(SpaceTimeGrid::make(1, 1.0, 16, 1.0, 1.0, 16), Error);
}
