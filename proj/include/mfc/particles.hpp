#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "mfc/mfg.hpp"

namespace mfc {

/// N trajectories on the time mesh: positions[n][j * dim + k], n = 0..steps.
struct ParticleEnsemble {
    int N = 0;
    int dim = 1;
    double t0 = 0.0;
    double dt = 0.0;
    int steps = 0;
    std::uint64_t noise_seed = 0;
    FieldPath positions;
    /// Reflections at the box boundary; valid runs have none.
    int exits = 0;
    /// Largest |drift| component used.
    double max_drift = 0.0;
    /// Mean-field feedback only: tracked distance d2(m^N_t, m(t)) per step and
    /// the first step at which it reached delta_track (-1 if never).
    std::vector<double> tracking;
    int tau_index = -1;
    bool truncated = false;

    EmpiricalMeasure empirical(int n) const;
};

/// Initial positions i.i.d. from m0 (inverse CDF in 1D, rejection in 2D) and
/// one Gaussian stream per particle, all from seed_seq{seed, j}.
std::vector<double> sample_initial(const GridDensity& m0, int N, std::uint64_t seed);

/// Euler-Maruyama with drift -H_p(x, Du(t_n, x)) interpolated from sol.u.
ParticleEnsemble simulate_mckean_vlasov(const ProblemSpec& spec, const MfgSolution& sol, int N,
                                        std::uint64_t seed);

/// Same recursion with D_mU at the empirical measure frozen to the base Du;
/// the tracking distance is monitored and the run flagged once it reaches
/// delta_track (the stopped process keeps its path).
ParticleEnsemble simulate_meanfield_feedback(const ProblemSpec& spec, const MfgSolution& sol, int N,
                                             std::uint64_t seed,
                                             double delta_track = std::numeric_limits<double>::infinity());

/// sup over the time mesh of d_p(m^N_t, m(t)): exact in 1D, transport in 2D.
double sup_distance(const ParticleEnsemble& e, const DensityPath& m, int p);

/// sup_t d1 between `samples` i.i.d. draws of each m(t) and m(t).
double iid_sampling_error(const DensityPath& m, int samples, std::uint64_t seed);

struct SmallNOptions {
    /// Points per axis of the tensor grid; 0 picks 161, 81, 41 for N = 1, 2, 3.
    int nx = 0;
    /// Largest number of stored doubles.
    double max_entries = 2.5e8;
};

/// V^N on [t0, T] x [-R, R]^N (1D problems only), with gradients D_{x_j} V^N.
struct SmallNValue {
    int N = 0;
    SpaceTimeGrid grid;
    ValueField v;
    std::shared_ptr<const Hamiltonian> base_hamiltonian;  // owned target of `hamiltonian`
    std::shared_ptr<const ScaledHamiltonian> hamiltonian;
    /// N sup_j ||D_{x_j} V^N||_inf.
    double lipschitz = 0.0;

    /// Multilinear interpolation at time index n.
    double value(int n, std::span<const double> x) const;
};

SmallNValue solve_vn_small(const ProblemSpec& spec, int N, const SmallNOptions& opts = {});

struct VnSample {
    int n = 0;               // time index on the spec mesh
    std::vector<double> x;   // N positions
};

/// Seeded interior samples: positions in [-R/2, R/2]^N, time indices in [0, nt].
std::vector<VnSample> vn_sample_points(const ProblemSpec& spec, int N, int count,
                                       std::uint64_t seed);

struct VnGapReport {
    std::vector<double> gaps;
    std::vector<double> vn_values;
    std::vector<double> u_values;
    double max_gap = 0.0;
    double mean_gap = 0.0;
};

/// |V^N(t, x) - U(t, m^N_x)| with U from solve_mfc on the deposited empirical
/// measure; at t = T both sides are G(m^N_x).
VnGapReport vn_vs_u_gap(const ProblemSpec& spec, const SmallNValue& vn,
                        const std::vector<VnSample>& samples, const SolverConfig& cfg = {});

/// Y^N with feedback -H_p(Y^k, N D_{x_k} V^N), initial law m0 of the spec.
ParticleEnsemble simulate_optimal_yn(const ProblemSpec& spec, const SmallNValue& vn,
                                     std::uint64_t seed);

struct ChaosRow {
    int N = 0;
    double mean_error = 0.0;
    double ci_halfwidth = 0.0;
    int replicas_used = 0;
    int excluded = 0;
    double truncated_fraction = 0.0;
    std::vector<double> errors;
};

struct ChaosExperimentResult {
    std::vector<int> N_values;
    std::vector<ChaosRow> rows;
    double gamma_hat = 0.0;
    double c_hat = 0.0;
    double r_squared = 0.0;
    double delta_track = 0.0;
    std::vector<std::string> warnings;

    std::string csv() const;
    std::string fit_summary() const;
    /// Whitespace-separated "N mean_error" columns.
    std::string plot_data() const;
};

struct ChaosOptions {
    std::vector<int> N_values{8, 16, 32, 64, 128, 256, 512};
    int replicas = 20;
    std::uint64_t seed = 1;
    /// 0 selects 3x the mean tracked distance at the largest N.
    double delta_track = 0.0;
    int threads = 1;
};

/// Mean over replicas of sup_t d1(m^N_t, m(t)) for the mean-field feedback
/// system, with a least-squares fit log error = log C - gamma log N.
ChaosExperimentResult chaos_rate_experiment(const ProblemSpec& spec, const MfgSolution& sol,
                                            const ChaosOptions& opts = {});

}  // namespace mfc
