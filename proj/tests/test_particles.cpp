#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "mfc/error.hpp"
#include "mfc/particles.hpp"
#include "oracles.hpp"

using namespace mfc;

namespace {

BuiltinOptions coarse() {
    BuiltinOptions o;
    o.nx = 81;
    o.nt = 32;
    return o;
}

MfgSolution solve_single(const ProblemSpec& s) {
    SolverConfig c;
    c.multistarts = 1;
    c.tolerance = 1e-10;
    return solve_mfc(s, s.grid, s.initial.on(s.grid.space()), c).best();
}

std::vector<double> slice_positions(const ParticleEnsemble& e, int n) { return e.positions[n]; }

}  // namespace

TEST_CASE("pure diffusion matches the Gaussian variance") {
    ProblemSpec s = builtin("quadratic-free", coarse());
    s.terminal = Coupling::zero();
    const MfgSolution sol = solve_single(s);
    const int N = 4000;
    const ParticleEnsemble e = simulate_mckean_vlasov(s, sol, N, 3);
    CHECK(e.exits == 0);
    CHECK(e.max_drift == 0.0);
    const double v0 = oracle::variance_of(slice_positions(e, 0));
    const double vT = oracle::variance_of(slice_positions(e, e.steps));
    const double expected = 0.25 + 2.0 * s.horizon;
    // Standard error of a sample variance: var sqrt(2 / (N - 1)).
    CHECK(std::abs(vT - expected) <= 3.0 * expected * std::sqrt(2.0 / (N - 1)));
    CHECK(std::abs(v0 - 0.25) <= 3.0 * 0.25 * std::sqrt(2.0 / (N - 1)));
}

TEST_CASE("determinism and seed dependence") {
    const ProblemSpec s = builtin("quadratic-free", coarse());
    const MfgSolution sol = solve_single(s);
    const ParticleEnsemble a = simulate_mckean_vlasov(s, sol, 1, 99);
    const ParticleEnsemble b = simulate_mckean_vlasov(s, sol, 1, 99);
    CHECK(a.positions == b.positions);

    const int N = 2000;
    const ParticleEnsemble x = simulate_mckean_vlasov(s, sol, N, 1);
    const ParticleEnsemble y = simulate_mckean_vlasov(s, sol, N, 2);
    CHECK(x.positions.back() != y.positions.back());
    const double mx = oracle::mean_of(x.positions.back()), my = oracle::mean_of(y.positions.back());
    const double se = std::sqrt((oracle::variance_of(x.positions.back()) +
                                 oracle::variance_of(y.positions.back())) / N);
    CHECK(std::abs(mx - my) <= 3.0 * se);
    // Optimal drift is -1, so the mean at T is -1.
    CHECK(std::abs(mx + 1.0) <= 3.0 * se);
}

TEST_CASE("mean-field feedback coincides with McKean-Vlasov") {
    const ProblemSpec s = builtin("drifted", coarse());
    const MfgSolution sol = solve_single(s);
    const ParticleEnsemble mv = simulate_mckean_vlasov(s, sol, 64, 5);
    const ParticleEnsemble mf = simulate_meanfield_feedback(s, sol, 64, 5);
    CHECK(mv.positions == mf.positions);
    CHECK(mf.tracking.size() == static_cast<std::size_t>(mf.steps) + 1);
    CHECK_FALSE(mf.truncated);
    CHECK(mf.tau_index == -1);

    const ParticleEnsemble stopped = simulate_meanfield_feedback(s, sol, 64, 5, 1e-6);
    CHECK(stopped.truncated);
    CHECK(stopped.tau_index >= 0);
    CHECK(stopped.positions == mv.positions);
}

TEST_CASE("initial samples are i.i.d. from m0") {
    const ProblemSpec s = builtin("drifted", coarse());
    const std::vector<double> x = sample_initial(s.initial.on(s.grid.space()), 5000, 17);
    CHECK(std::abs(oracle::mean_of(x) - 0.5) <= 3.0 * 0.5 / std::sqrt(5000.0));
    CHECK(x == sample_initial(s.initial.on(s.grid.space()), 5000, 17));
}

TEST_CASE("chaos experiment statistics") {
    const ProblemSpec s = builtin("quadratic-free", coarse());
    const MfgSolution sol = solve_single(s);

    SUBCASE("truncation is rare at N = 512 and the floor lies below") {
        ChaosOptions o;
        o.N_values = {32, 512};
        o.replicas = 20;
        const ChaosExperimentResult r = chaos_rate_experiment(s, sol, o);
        REQUIRE(r.rows.size() == 2);
        CHECK(r.rows[1].truncated_fraction <= 0.05);
        CHECK(r.rows[1].mean_error < r.rows[0].mean_error);
        CHECK(r.rows[1].replicas_used == 20);
        CHECK(iid_sampling_error(sol.m, 100000, 3) < r.rows[1].mean_error);
        CHECK(r.csv().rfind("N,mean_error,ci_halfwidth,replicas_used\n", 0) == 0);
        CHECK(r.fit_summary().rfind("gamma_hat,c_hat,r_squared", 0) == 0);
    }
    SUBCASE("disjoint seed blocks agree") {
        ChaosOptions a, b;
        a.N_values = b.N_values = {64};
        a.replicas = b.replicas = 20;
        a.seed = 1;
        b.seed = 5001;
        a.delta_track = b.delta_track = 1.0;
        const ChaosRow ra = chaos_rate_experiment(s, sol, a).rows[0];
        const ChaosRow rb = chaos_rate_experiment(s, sol, b).rows[0];
        CHECK(std::abs(ra.mean_error - rb.mean_error) <= 2.0 * (ra.ci_halfwidth + rb.ci_halfwidth));
    }
    SUBCASE("one replica gives infinite bands and a warning") {
        ChaosOptions o;
        o.N_values = {16, 32};
        o.replicas = 1;
        const ChaosExperimentResult r = chaos_rate_experiment(s, sol, o);
        CHECK(std::isinf(r.rows[0].ci_halfwidth));
        CHECK_FALSE(r.warnings.empty());
    }
}

TEST_CASE("small-N value functions") {
    const ProblemSpec s = builtin("quadratic-free", coarse());
    SUBCASE("N = 1 is the single-agent HJB") {
        SmallNOptions o;
        o.nx = 81;
        const SmallNValue v1 = solve_vn_small(s, 1, o);
        DensityPath any;
        any.grid = s.grid;
        any.slices.assign(s.grid.nt() + 1, s.initial.on(s.grid.space()).values);
        const ValueField v = solve_hjb_backward(s, any);
        double err = 0.0;
        for (int n = 0; n <= s.grid.nt(); ++n)
            for (std::size_t i = 0; i < v.u[n].size(); ++i)
                err = std::max(err, std::abs(v1.v.u[n][i] - v.u[n][i]));
        CHECK(err <= 1e-6);
    }
    SUBCASE("N = 2 tensorizes and is exchangeable") {
        SmallNOptions o;
        o.nx = 41;
        const SmallNValue v2 = solve_vn_small(s, 2, o);
        const SmallNValue v1 = solve_vn_small(s, 1, o);
        const BoxGrid& g = v1.grid.space();
        double err = 0.0, swap = 0.0;
        for (int n = 0; n <= v2.grid.nt(); n += 4)
            for (int i = 0; i < g.nx(); ++i)
                for (int j = 0; j < g.nx(); ++j) {
                    const double a = v2.v.u[n][static_cast<std::size_t>(j) * g.nx() + i];
                    const double b = v2.v.u[n][static_cast<std::size_t>(i) * g.nx() + j];
                    err = std::max(err, std::abs(a - 0.5 * (v1.v.u[n][i] + v1.v.u[n][j])));
                    swap = std::max(swap, std::abs(a - b));
                }
        CHECK(err <= 1e-12);
        CHECK(swap <= 1e-12);
    }
    SUBCASE("gap vanishes at the terminal time") {
        SmallNOptions o;
        o.nx = 41;
        const SmallNValue v2 = solve_vn_small(s, 2, o);
        std::vector<VnSample> at_T = {{s.grid.nt(), {0.3, -1.1}}, {s.grid.nt(), {2.0, 2.0}}};
        const VnGapReport r = vn_vs_u_gap(s, v2, at_T);
        CHECK(r.max_gap <= 1e-12);
        const auto pts = vn_sample_points(s, 2, 10, 4);
        CHECK(pts.size() == 10);
        for (const auto& p : pts)
            for (double x : p.x) CHECK(std::abs(x) <= 0.5 * s.grid.space().half_width());
    }
    SUBCASE("memory budget") {
        SmallNOptions o;
        o.max_entries = 1e5;
        CHECK_THROWS_AS(solve_vn_small(s, 3, o), Error);
    }
}

TEST_CASE("optimal single-agent trajectories follow the MFG law") {
    const ProblemSpec s = builtin("quadratic-free", coarse());
    SmallNOptions o;
    o.nx = 81;
    const SmallNValue v1 = solve_vn_small(s, 1, o);
    std::vector<double> yT;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        const ParticleEnsemble y = simulate_optimal_yn(s, v1, seed);
        CHECK(y.exits == 0);
        yT.push_back(y.positions.back()[0]);
    }
    const MfgSolution sol = solve_single(s);
    const GridDensity mT = sol.m.at(s.grid.nt());
    const double mu = mean(mT)[0];
    const double var = moment(mT, 2) - mu * mu;
    CHECK(std::abs(oracle::mean_of(yT) - mu) <= 3.0 * std::sqrt(var / 200.0));
    CHECK(std::abs(oracle::variance_of(yT) - var) <= 3.0 * var * std::sqrt(2.0 / 199.0));
}
