#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "mfc/error.hpp"
#include "mfc/model.hpp"
#include "oracles.hpp"

using namespace mfc;

namespace {

Hamiltonian quadratic_plus(Hamiltonian::Drift d, double amplitude, double lambda = 0.0) {
    return Hamiltonian({lambda, d, amplitude});
}

}  // namespace

TEST_CASE("Legendre transform of the quadratic family") {
    const Hamiltonian h;
    for (double a : {-3.0, -0.5, 0.0, 0.25, 2.0})
        CHECK(legendre(h, Point{0.7, 0, 0}, Point{a, 0, 0}, 1) == doctest::Approx(a * a / 4.0));
    CHECK(legendre(h, Point{0.0, 0.0, 0}, Point{1.0, -2.0, 0}, 2) == doctest::Approx(5.0 / 4.0));
}

TEST_CASE("Legendre transform with drift against a numeric sup") {
    const Hamiltonian h = quadratic_plus(Hamiltonian::Drift::Tanh, 1.0);
    for (double y : {-2.0, 0.3, 1.5})
        for (double a : {-1.7, 0.0, 0.9}) {
            const double v = std::tanh(y);
            const double numeric = oracle::numeric_conjugate(
                [&](double p) { return p * p + v * p; }, a);
            CHECK(std::abs(h.legendre(y, a) - numeric) <= 1e-8);
            CHECK(h.legendre(y, a) == doctest::Approx((a + v) * (a + v) / 4.0));
        }
}

TEST_CASE("Legendre transform of the soft quadratic by Newton") {
    const Hamiltonian h = quadratic_plus(Hamiltonian::Drift::Constant, 0.3, 1.5);
    for (double a : {-4.0, -0.2, 0.0, 1.1, 6.0}) {
        const double numeric = oracle::numeric_conjugate(
            [&](double p) { return p * p + 1.5 * (std::sqrt(1 + p * p) - 1) + 0.3 * p; }, a);
        CHECK(std::abs(h.legendre(0.0, a) - numeric) <= 1e-8);
    }
}

TEST_CASE("envelope identity") {
    const Hamiltonian h = quadratic_plus(Hamiltonian::Drift::Tanh, 1.0, 0.7);
    for (double p0 : {-2.0, 0.1, 3.0}) {
        const double y = 0.4;
        const double a = -h.dp(y, p0);
        CHECK(h.legendre(y, a) == doctest::Approx(-a * p0 - h.value(y, p0)).epsilon(1e-10));
    }
}

TEST_CASE("duality identities") {
    const Hamiltonian q;
    const DualityReport r = duality_identities(q, Point{0.0, 0, 0}, Point{1.0, 0, 0}, 1);
    CHECK(r.value_residual <= 1e-12);
    CHECK(r.gradient_residual <= 1e-7);
    CHECK(r.alpha_norm == doctest::Approx(2.0));

    const DualityReport zero = duality_identities(q, Point{0.0, 0, 0}, Point{0.0, 0, 0}, 1);
    CHECK(zero.alpha_norm == 0.0);
    CHECK(zero.value_residual == 0.0);
    CHECK(legendre(q, Point{}, Point{}, 1) == 0.0);

    const Hamiltonian h = quadratic_plus(Hamiltonian::Drift::Tanh, 1.0);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-4.0, 4.0);
    for (int s = 0; s < 50; ++s) {
        const Point x{u(rng), u(rng), 0}, p{u(rng), u(rng), 0};
        const DualityReport d = duality_identities(h, x, p, 2);
        CHECK(d.ok());
    }
}

TEST_CASE("Hamiltonian checks") {
    const HamiltonianCheck drifted = check_hamiltonian(quadratic_plus(Hamiltonian::Drift::Tanh, 1.0), 8.0);
    CHECK(drifted.ok);
    CHECK(drifted.c_low == doctest::Approx(2.0));
    CHECK(drifted.c_high == doctest::Approx(2.0));
    CHECK(drifted.derivative_error <= 1e-5);
    const HamiltonianCheck soft = check_hamiltonian(quadratic_plus(Hamiltonian::Drift::None, 0.0, 2.0), 8.0);
    CHECK(soft.ok);
    CHECK(soft.c_low > 2.0);
}

TEST_CASE("descriptors") {
    CHECK(Hamiltonian::from_descriptor("quadratic", 0, "none", 0).descriptor() ==
          Hamiltonian().descriptor());
    CHECK_THROWS_AS(Hamiltonian::from_descriptor("cubic", 0, "none", 0), Error);
    try {
        builtin("no-such-problem");
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::UnknownDescriptor);
    }
}

TEST_CASE("builtin problems pass the assumption checks") {
    BuiltinOptions o;
    o.nx = 81;
    o.nt = 16;
    for (const std::string& name : builtin_names()) {
        const SpecCheck c = validate_spec(builtin(name, o));
        CHECK_MESSAGE(c.ok(), name);
    }
    const SpecCheck tw = validate_spec(builtin("two-well", o));
    CHECK(tw.terminal.ok);
    CHECK(tw.terminal.error_fine < tw.terminal.error_coarse);
}

TEST_CASE("coupling derivatives") {
    const BoxGrid g(1, 6.0, 121);
    Outer w;
    w.kind = Outer::Kind::DoubleWell;
    const Coupling c({Feature{Feature::Kind::Coordinate, 0}}, w);
    InitialMeasure m0;
    m0.mean[0] = 0.4;
    const GridDensity m = m0.on(g);
    // <x, m> = 0.4 up to truncation; Phi(s) = 0.5 (s^2 - 1)^2.
    const double s = c.moments(g, m.values)[0];
    CHECK(s == doctest::Approx(0.4).epsilon(1e-9));
    CHECK(c.value(g, m.values) == doctest::Approx(0.5 * (s * s - 1) * (s * s - 1)));
    const Field fd = c.flat_derivative(g, m.values);
    const double slope = 2.0 * s * (s * s - 1.0);
    for (std::size_t i = 0; i < g.size(); i += 20) CHECK(fd[i] == doctest::Approx(slope * g.coord(i)));
    // Second variation along rho = m' - m.
    InitialMeasure m1 = m0;
    m1.mean[0] = -0.2;
    const GridDensity mp = m1.on(g);
    Field rho(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) rho[i] = mp.values[i] - m.values[i];
    const double d = -0.6;
    CHECK(c.second_variation(g, m.values, rho) == doctest::Approx((6 * s * s - 2) * d * d).epsilon(1e-8));
    CHECK(check_coupling(c, m, mp).ok);
}
