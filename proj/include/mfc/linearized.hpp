#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mfc/mfg.hpp"

namespace mfc {

/// Data of the inhomogeneous linearized system. Empty members mean zero.
struct LinearSources {
    FieldPath r1;  // nt slices, running source of the z equation
    FieldPath r2;  // nt slices of dim * size, vector field inside sigma div(R2)
    Field r3;      // terminal source of z
    Field xi;      // initial datum, rho(t0) = sigma xi
};

struct LinearizedSolution {
    FieldPath z;    // nt + 1 slices
    FieldPath rho;  // nt + 1 signed slices
    double sigma = 0.0;
    double residual = 0.0;  // sup-norm defect of the coupled moment equations
    int iterations = 0;     // Picard iterations (0 for the direct solve)
};

struct LinearizedOptions {
    enum class Method { Direct, Picard };
    Method method = Method::Direct;
    double damping = 0.5;
    int max_iterations = 2000;
    double tolerance = 1e-13;
    /// Largest dense operator (entries) assembled before failing with MemoryBudget.
    double max_entries = 4e8;
    /// Workers for the per-sigma spectra.
    int threads = 1;
};

/// Solves the linearized system around base for the given sigma. z enters the
/// rho equation through the exact linearization of the discrete drift
/// alpha(Du); rho enters z only through the coupling feature moments, so the
/// system reduces to a dense problem on those moments.
LinearizedSolution solve_linearized(const ProblemSpec& spec, const MfgSolution& base, double sigma,
                                    const LinearSources& sources,
                                    const LinearizedOptions& opts = {});

/// Dimension of the reduced moment space (running features x nt + terminal features).
std::size_t reduced_dimension(const ProblemSpec& spec, const MfgSolution& base);

/// Dense K with homogeneous moments y -> y' = K y at sigma = 1 (K_sigma = sigma K).
std::vector<double> assemble_moment_operator(const ProblemSpec& spec, const MfgSolution& base,
                                             const LinearizedOptions& opts = {});

enum class Verdict { StronglyStable, Stable, Unstable, Inconclusive };
const char* to_string(Verdict v);

struct StabilityRow {
    double sigma = 0.0;
    double min_singular_value = 0.0;
    double relative = 0.0;  // min singular value / max(largest, 1)
    int det_sign = 1;
};

struct StabilityReport {
    std::vector<double> sigma_grid;
    std::vector<StabilityRow> rows;
    std::vector<double> min_singular_values;
    Verdict verdict = Verdict::Inconclusive;
    double threshold = 1e-6;
    std::size_t dimension = 0;
    /// det(I - sigma K) < 0 somewhere; det(I) = 1, so a real crossing lies in (0, sigma).
    bool sign_change = false;
    std::string note;

    std::string csv() const;
};

std::vector<double> default_sigma_grid();

/// Smallest singular value of I - sigma K per grid point, relative to the
/// largest; verdict from the threshold and determinant sign changes.
StabilityReport classify_stability(const ProblemSpec& spec, const MfgSolution& base,
                                   const std::vector<double>& sigma_grid = default_sigma_grid(),
                                   double threshold = 1e-6, const LinearizedOptions& opts = {});

/// As above, but downgraded to Inconclusive when the base is not the unique
/// global minimizer of its MinimizerSet.
StabilityReport classify_stability(const ProblemSpec& spec, const MinimizerSet& set,
                                   std::size_t cluster,
                                   const std::vector<double>& sigma_grid = default_sigma_grid(),
                                   double threshold = 1e-6, const LinearizedOptions& opts = {});

struct StrongStabilityCheck {
    bool applicable = false;
    std::vector<double> violations;  // sigma values at or below threshold
    std::string note;
};

StrongStabilityCheck strong_stability_from_stability_check(const StabilityReport& report,
                                                           bool unique_cluster);

/// Zeroes a perturbation on the first two time steps.
void vanish_near_start(DriftField& beta);

/// Seeded smooth perturbation: truncated trigonometric series in (t, x),
/// vanishing on the first two steps.
DriftField random_beta(const SpaceTimeGrid& grid, std::uint64_t seed, double amplitude = 1.0);

/// Forward solve of d_t rho - Delta rho + div(rho alpha) + div(m beta) = 0, rho(t0) = 0.
FieldPath solve_perturbation_rho(const ProblemSpec& spec, const MfgSolution& base,
                                 const DriftField& beta);

/// sum_n dt [<L_aa beta.beta, m^n> + F''(m^n)(rho^n, rho^n)] + G''(m^nt)(rho^nt, rho^nt).
double second_order_form(const ProblemSpec& spec, const MfgSolution& base, const DriftField& beta);

struct SecondOrderReport {
    std::vector<std::uint64_t> seeds;
    std::vector<double> values;
    double minimum = 0.0;
};

SecondOrderReport second_order_check(const ProblemSpec& spec, const MfgSolution& base, int samples,
                                     std::uint64_t seed);

/// sigma sum dt <Gamma Dz.Dz, m> + sum dt F''(rho,rho) + G''(rho_T, rho_T) for a
/// homogeneous solution; zero for every solution of the homogeneous system.
double quadratic_identity(const ProblemSpec& spec, const MfgSolution& base,
                          const LinearizedSolution& sol);

/// Homogeneous solution built from the smallest right singular vector of I - sigma K.
LinearizedSolution kernel_candidate(const ProblemSpec& spec, const MfgSolution& base, double sigma,
                                    const LinearizedOptions& opts = {});

struct InteriorPoint {
    double fraction = 0.0;
    int index = 0;
    double t = 0.0;
    bool unique = false;
    Verdict verdict = Verdict::Inconclusive;
};

struct InteriorReport {
    std::vector<InteriorPoint> points;
    int passing = 0;
};

/// Re-solves from (t_n, m(t_n)) at the given fractions of the horizon
/// (t0 itself excluded) and classifies each restart.
InteriorReport interior_trajectory_stability(const ProblemSpec& spec, const MfgSolution& base,
                                             const SolverConfig& cfg = {},
                                             const std::vector<double>& fractions = {0.25, 0.5, 0.75});

}  // namespace mfc
