#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "mfc/grid.hpp"

namespace mfc {

using Field = std::vector<double>;
using FieldPath = std::vector<Field>;

/// Probability density sampled at the nodes of a box grid. Between nodes the
/// density is the multilinear interpolant, whose integral is the trapezoid sum.
struct GridDensity {
    BoxGrid grid;
    Field values;

    /// Validates nonnegativity and rescales to unit trapezoid mass.
    static GridDensity normalized(const BoxGrid& grid, Field values);

    double mass() const { return grid.integrate(values); }
};

/// Time-indexed flow of densities t_n -> m(t_n), n = 0..nt.
struct DensityPath {
    SpaceTimeGrid grid;
    FieldPath slices;

    GridDensity at(int n) const { return GridDensity{grid.space(), slices.at(n)}; }
    int steps() const { return static_cast<int>(slices.size()) - 1; }
};

/// Atomic measure sum_k w_k delta_{x_k}; uniform weights when `weights` is empty.
struct EmpiricalMeasure {
    int dim = 1;
    std::vector<double> points;   // size() * dim, row-major
    std::vector<double> weights;  // empty or size()

    static EmpiricalMeasure uniform(int dim, std::vector<double> points);

    std::size_t size() const { return points.size() / static_cast<std::size_t>(dim); }
    double weight(std::size_t k) const {
        return weights.empty() ? 1.0 / static_cast<double>(size()) : weights[k];
    }
    std::span<const double> point(std::size_t k) const {
        return {points.data() + k * dim, static_cast<std::size_t>(dim)};
    }
    void validate() const;
};

using Measure = std::variant<EmpiricalMeasure, GridDensity>;

struct TransportOptions {
    /// Support cap for the 2D network simplex. Grid measures are aggregated
    /// onto coarser cells; larger atomic measures are resampled.
    std::size_t max_support = 512;
    std::uint64_t seed = 0x5eed;
};

double wasserstein1(const Measure& a, const Measure& b, const TransportOptions& opts = {});
double wasserstein2(const Measure& a, const Measure& b, const TransportOptions& opts = {});

/// Order-p transport distance for p in {1, 2}.
double wasserstein(const Measure& a, const Measure& b, int p, const TransportOptions& opts = {});

/// Integral of |x|^p, p in 1..8: trapezoid rule for grids, weighted average for atoms.
double moment(const Measure& m, int p);

/// Mean vector (first dim entries used).
Point mean(const Measure& m);

/// Gaussian-kernel density estimate at the grid nodes, renormalized to mass 1.
GridDensity density_from_particles(const EmpiricalMeasure& e, const BoxGrid& grid,
                                   double bandwidth);

/// Linear-interpolation ("cloud in cell") deposit of the atoms on the grid.
/// Trapezoid integrals of multilinear functions against the result agree with
/// the atomic measure exactly.
GridDensity deposit_particles(const EmpiricalMeasure& e, const BoxGrid& grid);

/// Cell-centred weighted point cloud carrying the exact cell masses of the
/// multilinear density.
EmpiricalMeasure to_point_cloud(const GridDensity& m);

/// Mass carried by nodes within `layer` of the box boundary.
double boundary_mass(const GridDensity& m, double layer);

// --- One-dimensional exact routines ------------------------------------------

/// int |F_a - F_b| dx for two densities on the same 1D grid, exact for the
/// piecewise-linear interpolants.
double cdf_l1_distance(const GridDensity& a, const GridDensity& b);

/// Order-p distance (p in {1,2}) between 1D atoms and a 1D grid density, exact
/// for the piecewise-linear interpolant.
double wasserstein_atoms_grid_1d(const EmpiricalMeasure& atoms, const GridDensity& m, int p);

/// Quantile of the normalized piecewise-linear density at level s in [0, 1].
double quantile_1d(const GridDensity& m, double s);

/// Order-p distance between two 1D atomic measures by quantile matching.
double wasserstein_atoms_1d(const EmpiricalMeasure& a, const EmpiricalMeasure& b, int p);

/// Order-p distance between 1D grid densities by Gauss-Legendre quadrature of
/// |Q_a - Q_b|^p over the merged quantile breakpoints.
double wasserstein_grid_quantile_1d(const GridDensity& a, const GridDensity& b, int p);

}  // namespace mfc
