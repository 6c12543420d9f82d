#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfc/measures.hpp"
#include "mfc/model.hpp"
#include "mfc/pde.hpp"

namespace mfc {

struct ConvergenceRecord {
    int iteration = 0;
    double residual = 0.0;
    double cost = 0.0;
    double damping = 0.0;
};

/// Candidate minimizer: multiplier u, admissible pair (m, alpha) and its cost.
struct MfgSolution {
    ValueField u;
    DensityPath m;
    DriftField alpha;
    double cost = 0.0;
    int iterations = 0;
    double fixed_point_residual = 0.0;
    bool converged = false;
    std::string start_label;
    std::vector<ConvergenceRecord> log;
};

struct Cluster {
    std::vector<std::size_t> members;  // indices into MinimizerSet::solutions
    std::size_t representative = 0;    // lowest-cost member
    double cost = 0.0;
};

struct MinimizerSet {
    std::vector<MfgSolution> solutions;  // converged runs, in start order
    std::vector<Cluster> clusters;       // sorted by cost
    double global_min_cost = 0.0;
    int failed_starts = 0;
    std::vector<std::string> failures;
    double tie_tolerance = 1e-6;

    const MfgSolution& best() const { return solutions.at(clusters.at(0).representative); }
    /// Clusters whose cost is within tie_tolerance of the global minimum.
    std::size_t clusters_at_minimum() const;
    /// Exactly one cluster attains the minimum.
    bool unique_minimizer() const { return clusters_at_minimum() == 1; }
};

struct SolverConfig {
    double damping = 0.5;
    double min_damping = 1.0 / 256.0;
    int max_iterations = 400;
    double tolerance = 1e-8;
    int multistarts = 5;
    std::uint64_t seed = 20240601;
    double merge_tolerance = 1e-3;
    double tie_tolerance = 1e-6;
    /// Amplitude of constant starts; linear starts use amplitude / half_width.
    double start_amplitude = 1.0;
    int threads = 1;
};

/// Sup over time of the slice distance used by the Picard residual: exact d1
/// in 1D, the bound R sqrt(d) * ||a - b||_L1 in 2D.
double path_distance(const SpaceTimeGrid& grid, const FieldPath& a, const FieldPath& b);

/// Discrete cost sum_n dt [<L(x, alpha^n), m^n> + F(m^n)] + G(m^nt). Checks
/// that m is the Fokker-Planck flow of alpha (sup_t L1 defect <= fp_tolerance).
double evaluate_cost(const ProblemSpec& spec, const DensityPath& m, const DriftField& alpha,
                     double fp_tolerance = 1e-8);

/// Same sum without the admissibility check.
double cost_unchecked(const ProblemSpec& spec, const DensityPath& m, const DriftField& alpha);

/// Running part of the cost over steps [0, n1).
double running_cost(const ProblemSpec& spec, const DensityPath& m, const DriftField& alpha, int n1);

/// Initial drift guesses used by the multistart: zero, +-constant, +-linear,
/// then seeded smooth random fields.
std::vector<std::pair<std::string, DriftField>> multistart_drifts(const SpaceTimeGrid& grid,
                                                                  const SolverConfig& cfg);

/// One damped Picard run from an initial drift guess.
MfgSolution picard(const ProblemSpec& spec, const SpaceTimeGrid& grid, const GridDensity& m0,
                   const DriftField& start, const std::string& label, const SolverConfig& cfg);

/// Multistart Picard on the given space-time grid; clusters converged runs.
MinimizerSet solve_mfc(const ProblemSpec& spec, const SpaceTimeGrid& grid, const GridDensity& m0,
                       const SolverConfig& cfg = {});

/// Starts at t0 on the spec mesh (tail grid, same dt) or, off the mesh, with
/// the spec's step count on [t0, T].
MinimizerSet solve_mfc(const ProblemSpec& spec, double t0, const GridDensity& m0,
                       const SolverConfig& cfg = {});

/// Whether two solutions merge under the cluster tolerances.
bool same_cluster(const MfgSolution& a, const MfgSolution& b, double tol);

struct MasterResidual {
    double residual = 0.0;
    double dU_dt = 0.0;
    double U_now = 0.0;
    double U_next = 0.0;
    double diffusion_term = 0.0;  // <Delta_h u, m>
    double hamiltonian_term = 0.0;  // <H(x, Du), m>
    double running_term = 0.0;     // F(m)
    bool unique = true;
};

/// |-dU/dt - <div D_mU, m> + <H(., D_mU), m> - F(m)| at time index n of sol,
/// with D_mU = Du(t_n, .) and dU/dt from re-solves on tail grids.
MasterResidual master_equation_residual(const ProblemSpec& spec, const MfgSolution& sol, int n,
                                        const SolverConfig& cfg = {});

struct LipschitzEntry {
    std::string label;
    double d2_initial = 0.0;
    double numerator = 0.0;
    double ratio = 0.0;
    bool excluded = false;
    bool multiple_clusters = false;
};

struct LipschitzReport {
    std::vector<LipschitzEntry> entries;
    double max_ratio = 0.0;
    bool base_unique = true;
};

/// Labelled perturbations of m0: shift, variance scaling and a small bump.
std::vector<std::pair<std::string, GridDensity>> standard_perturbations(const InitialMeasure& m0,
                                                                        const BoxGrid& grid,
                                                                        double size);

LipschitzReport lipschitz_diagnostics(const ProblemSpec& spec, const SpaceTimeGrid& grid,
                                      const GridDensity& m0,
                                      const std::vector<std::pair<std::string, GridDensity>>& perturbations,
                                      const SolverConfig& cfg = {});

struct ValueReport {
    double value = 0.0;
    bool unique = false;
    std::size_t clusters = 0;
};

ValueReport value_function(const ProblemSpec& spec, const SpaceTimeGrid& grid, const GridDensity& m0,
                           const SolverConfig& cfg = {});

struct ValueSample {
    double t = 0.0;
    GridDensity m;
    double value = 0.0;
};

/// max |U(t,m) - U(t',m')| / (|t - t'| + d1(m, m')) over distinct pairs.
double empirical_value_lipschitz(const std::vector<ValueSample>& samples);

struct DppReport {
    double value_start = 0.0;
    double running = 0.0;
    double value_mid = 0.0;
    double gap = 0.0;
};

/// U(t0, m0) versus running cost on [t0, t_n1] plus U(t_n1, m(t_n1)).
DppReport dynamic_programming_gap(const ProblemSpec& spec, const MfgSolution& sol, int n1,
                                  const SolverConfig& cfg = {});

/// max |D_a L(x, alpha) + Du| over the solution.
double first_order_residual(const ProblemSpec& spec, const MfgSolution& sol);

/// max |alpha + H_p(x, Du)| over the solution.
double drift_consistency(const ProblemSpec& spec, const MfgSolution& sol);

/// sup_t M2(m(t)) / M2(m0).
double second_moment_ratio(const MfgSolution& sol);

/// CSV with header iteration,residual,cost,damping.
std::string convergence_csv(const MfgSolution& sol);

}  // namespace mfc
