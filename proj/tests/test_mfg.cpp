#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mfc/error.hpp"
#include "mfc/mfg.hpp"
#include "oracles.hpp"

using namespace mfc;

namespace {

BuiltinOptions coarse() {
    BuiltinOptions o;
    o.nx = 81;
    o.nt = 32;
    return o;
}

Coupling constant_coupling(double c) {
    // cos(0 x) = 1, so <phi, m> = 1 for every probability measure.
    Feature one{Feature::Kind::Cosine, 0, 0.0};
    return Coupling::linear(one, c);
}

GridDensity m0_of(const ProblemSpec& s) { return s.initial.on(s.grid.space()); }

}  // namespace

TEST_CASE("cost of the zero control without couplings") {
    ProblemSpec s = builtin("quadratic-free", coarse());
    s.terminal = Coupling::zero();
    const DriftField zero = DriftField::zeros(s.grid);
    const DensityPath m = solve_fp_forward(s.grid, m0_of(s), zero);
    CHECK(evaluate_cost(s, m, zero) == 0.0);
}

TEST_CASE("cost of the zero control is the terminal moment of the heat flow") {
    ProblemSpec s = builtin("quadratic-free", coarse());
    s.terminal = Coupling::linear(Feature{Feature::Kind::SquaredNorm}, 1.0);
    const DriftField zero = DriftField::zeros(s.grid);
    const DensityPath m = solve_fp_forward(s.grid, m0_of(s), zero);
    // Gaussian evolution: E|X_T|^2 = sd^2 + 2T.
    const double expected = 0.25 + 2.0 * s.horizon;
    CHECK(std::abs(evaluate_cost(s, m, zero) - expected) <= 0.01 * expected);
}

TEST_CASE("inadmissible pairs are rejected") {
    const ProblemSpec s = builtin("quadratic-free", coarse());
    const DensityPath m = solve_fp_forward(s.grid, m0_of(s), DriftField::zeros(s.grid));
    DriftField other = DriftField::zeros(s.grid);
    for (auto& slice : other.alpha) std::fill(slice.begin(), slice.end(), 0.5);
    try {
        evaluate_cost(s, m, other);
        FAIL("expected Inadmissible");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::Inadmissible);
    }
}

TEST_CASE("quadratic-free: unique minimizer whose cost is the multiplier integral") {
    const ProblemSpec s = builtin("quadratic-free", coarse());
    const MinimizerSet set = solve_mfc(s, s.grid, m0_of(s));
    CHECK(set.failed_starts == 0);
    CHECK(set.solutions.size() == 5);
    CHECK(set.clusters.size() == 1);
    CHECK(set.unique_minimizer());
    const MfgSolution& b = set.best();
    CHECK(b.converged);
    CHECK(std::abs(b.cost - s.grid.space().dot(b.u.u[0], b.m.slices[0])) <= 1e-3);
    CHECK(std::abs(evaluate_cost(s, b.m, b.alpha) - b.cost) <= 1e-12);
    CHECK(first_order_residual(s, b) <= 1e-8);
    CHECK(drift_consistency(s, b) <= 1e-12);
    // Optimal drift -1/2 * 2 = -1: M2(T) = sd^2 + 2T + T^2 = 3.25; upwind diffusion adds O(dx).
    CHECK(std::abs(second_moment_ratio(b) - 13.0) <= 0.1 * 13.0);
    const std::string csv = convergence_csv(b);
    CHECK(csv.rfind("iteration,residual,cost,damping\n", 0) == 0);
}

TEST_CASE("decoupled problem: one update reaches the fixed point") {
    ProblemSpec s = builtin("quadratic-free", coarse());
    SolverConfig cfg;
    cfg.damping = 1.0;
    const MfgSolution sol = picard(s, s.grid, m0_of(s), DriftField::zeros(s.grid), "zero", cfg);
    REQUIRE(sol.converged);
    // Iteration 1 moves off the start, iteration 2 confirms with zero residual.
    CHECK(sol.iterations == 2);
    CHECK(sol.log.back().residual == 0.0);
}

TEST_CASE("two-well from the symmetric measure has tied clusters") {
    const ProblemSpec s = builtin("two-well", coarse());
    SolverConfig cfg;
    cfg.multistarts = 5;
    const MinimizerSet set = solve_mfc(s, s.grid, m0_of(s), cfg);
    REQUIRE(set.clusters.size() >= 2);
    CHECK(std::abs(set.clusters[0].cost - set.clusters[1].cost) <= 1e-4);
    CHECK_FALSE(set.unique_minimizer());
    // The tied minimizers are mirror images.
    const auto& a = set.solutions[set.clusters[0].representative];
    const auto& b = set.solutions[set.clusters[1].representative];
    const BoxGrid& g = s.grid.space();
    const double ma = mean(GridDensity{g, a.m.slices.back()})[0];
    const double mb = mean(GridDensity{g, b.m.slices.back()})[0];
    CHECK(ma * mb < 0.0);
    CHECK(std::abs(ma + mb) <= 1e-4);
}

TEST_CASE("master residual") {
    SUBCASE("constant terminal cost") {
        ProblemSpec s = builtin("quadratic-free", coarse());
        s.terminal = constant_coupling(0.3);
        SolverConfig cfg;
        cfg.multistarts = 1;
        const MinimizerSet set = solve_mfc(s, s.grid, m0_of(s), cfg);
        const MfgSolution& b = set.best();
        for (const Field& slice : b.u.u)
            for (double v : slice) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));
        CHECK(master_equation_residual(s, b, s.grid.nt() / 2, cfg).residual <= 1e-12);
    }
    SUBCASE("quadratic-free refinement and no boundary layer") {
        SolverConfig cfg;
        cfg.multistarts = 1;
        cfg.tolerance = 1e-10;
        double prev = 0.0;
        for (int level = 0; level < 2; ++level) {
            BuiltinOptions o;
            o.nx = 40 * (1 << level) + 1;
            o.nt = 16 * (1 << level);
            const ProblemSpec s = builtin("quadratic-free", o);
            const MfgSolution b = solve_mfc(s, s.grid, m0_of(s), cfg).best();
            const double mid = master_equation_residual(s, b, s.grid.nt() / 2, cfg).residual;
            const double start = master_equation_residual(s, b, 0, cfg).residual;
            const double end = master_equation_residual(s, b, s.grid.nt() - 1, cfg).residual;
            CHECK(end <= 10.0 * std::max(start, mid));
            if (level > 0) CHECK(prev / mid >= 1.5);
            prev = mid;
        }
    }
}

TEST_CASE("Lipschitz diagnostics") {
    SUBCASE("quadratic-free shifts") {
        const ProblemSpec s = builtin("quadratic-free", coarse());
        SolverConfig cfg;
        cfg.multistarts = 1;
        const BoxGrid& g = s.grid.space();
        std::vector<std::pair<std::string, GridDensity>> p;
        p.emplace_back("zero", m0_of(s));
        for (double shift : {0.01, 0.005}) {
            InitialMeasure m = s.initial;
            m.mean[0] += shift;
            p.emplace_back("shift", m.on(g));
        }
        const LipschitzReport r = lipschitz_diagnostics(s, s.grid, m0_of(s), p, cfg);
        REQUIRE(r.entries.size() == 3);
        CHECK(r.entries[0].excluded);
        CHECK(std::isfinite(r.entries[1].ratio));
        CHECK(r.entries[1].ratio > 0.0);
        CHECK(r.entries[1].ratio / r.entries[2].ratio <= 2.0);
        CHECK(r.entries[2].ratio / r.entries[1].ratio <= 2.0);
        CHECK(r.base_unique);
    }
    SUBCASE("two-well flags multiple clusters") {
        const ProblemSpec s = builtin("two-well", coarse());
        const auto p = standard_perturbations(s.initial, s.grid.space(), 0.05);
        const LipschitzReport r = lipschitz_diagnostics(s, s.grid, m0_of(s), p);
        CHECK_FALSE(r.base_unique);
    }
}

TEST_CASE("value function") {
    SolverConfig cfg;
    cfg.multistarts = 1;
    SUBCASE("no couplings gives zero") {
        ProblemSpec s = builtin("quadratic-free", coarse());
        s.terminal = Coupling::zero();
        const ValueReport v = value_function(s, s.grid, m0_of(s), cfg);
        CHECK(v.value == doctest::Approx(0.0));
        CHECK(v.unique);
    }
    SUBCASE("linear terminal cost equals one HJB solve against m0") {
        ProblemSpec s = builtin("quadratic-free", coarse());
        InitialMeasure m = s.initial;
        m.mean[0] = 0.4;
        const GridDensity m0 = m.on(s.grid.space());
        DensityPath any;
        any.grid = s.grid;
        any.slices.assign(s.grid.nt() + 1, m0.values);
        const ValueField u = solve_hjb_backward(s, any);
        const ValueReport v = value_function(s, s.grid, m0, cfg);
        CHECK(std::abs(v.value - s.grid.space().dot(u.u[0], m0.values)) <= 1e-3);
    }
    SUBCASE("empirical Lipschitz constant is finite and stable") {
        const ProblemSpec s = builtin("drifted", coarse());
        std::vector<ValueSample> near, nearer;
        for (double shift : {0.0, 0.1, 0.2}) {
            InitialMeasure m = s.initial;
            m.mean[0] += shift;
            const GridDensity d = m.on(s.grid.space());
            near.push_back({0.0, d, value_function(s, s.grid, d, cfg).value});
            m.mean[0] = s.initial.mean[0] + shift / 2.0;
            const GridDensity e = m.on(s.grid.space());
            nearer.push_back({0.0, e, value_function(s, s.grid, e, cfg).value});
        }
        const double c1 = empirical_value_lipschitz(near);
        const double c2 = empirical_value_lipschitz(nearer);
        CHECK(std::isfinite(c1));
        CHECK(c1 > 0.0);
        CHECK(c1 / c2 <= 2.0);
        CHECK(c2 / c1 <= 2.0);
    }
}

TEST_CASE("dynamic programming gap") {
    const ProblemSpec s = builtin("drifted", coarse());
    SolverConfig cfg;
    cfg.multistarts = 1;
    cfg.tolerance = 1e-10;
    const MfgSolution b = solve_mfc(s, s.grid, m0_of(s), cfg).best();
    const DppReport d = dynamic_programming_gap(s, b, s.grid.nt() / 2, cfg);
    CHECK(d.gap <= 2.0 * cfg.tolerance);
}

TEST_CASE("solver configuration errors") {
    const ProblemSpec s = builtin("quadratic-free", coarse());
    SolverConfig cfg;
    cfg.damping = 0.0;
    CHECK_THROWS_AS(solve_mfc(s, s.grid, m0_of(s), cfg), Error);
}
