#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

namespace mfc {

constexpr int kMaxDim = 3;

using Point = std::array<double, kMaxDim>;

/// Uniform node-centred grid on the box [-R, R]^dim.
///
/// Node i on each axis sits at -R + i*dx with dx = 2R/(nx-1). Each node owns
/// the control volume [x_i - dx/2, x_i + dx/2] clipped to the box, so the
/// end nodes carry half weight and sums against weight() are exactly the
/// composite trapezoidal rule.
///
/// dim may be 3 only for tensor-product grids of small particle systems;
/// measure-valued problems use SpaceTimeGrid, which restricts dim to 1 or 2.
class BoxGrid {
public:
    BoxGrid() = default;
    BoxGrid(int dim, double half_width, int nx);

    int dim() const { return dim_; }
    double half_width() const { return half_width_; }
    int nx() const { return nx_; }
    double dx() const { return dx_; }
    std::size_t size() const { return size_; }

    double coord(int i) const { return -half_width_ + i * dx_; }
    std::size_t stride(int axis) const { return strides_[axis]; }

    /// Per-axis trapezoid factor: 1/2 at the two end nodes, 1 otherwise.
    double axis_weight(int i) const { return (i == 0 || i == nx_ - 1) ? 0.5 : 1.0; }

    std::array<int, kMaxDim> multi_index(std::size_t idx) const;
    std::size_t flat_index(const std::array<int, kMaxDim>& mi) const;
    Point point(std::size_t idx) const;

    /// Control-volume measure of node idx (trapezoid weight times dx^dim).
    double weight(std::size_t idx) const;
    const std::vector<double>& weights() const { return weights_; }

    /// Weighted inner product sum_i w_i a_i b_i.
    double dot(std::span<const double> a, std::span<const double> b) const;
    double integrate(std::span<const double> a) const;

    bool same_as(const BoxGrid& other) const {
        return dim_ == other.dim_ && nx_ == other.nx_ && half_width_ == other.half_width_;
    }

    /// Whether x lies in the closed box.
    bool contains(std::span<const double> x) const;

    /// Multilinear interpolation of nodal values at x (clamped to the box).
    double interpolate(std::span<const double> values, std::span<const double> x) const;

    /// Calls f(first_index) for every grid line along the given axis.
    template <class F>
    void for_each_line(int axis, F&& f) const {
        const std::size_t st = strides_[axis];
        const std::size_t block = st * nx_;
        for (std::size_t outer = 0; outer < size_; outer += block)
            for (std::size_t inner = 0; inner < st; ++inner) f(outer + inner);
    }

private:
    int dim_ = 1;
    double half_width_ = 1.0;
    int nx_ = 2;
    double dx_ = 2.0;
    std::size_t size_ = 2;
    std::array<std::size_t, kMaxDim> strides_{1, 1, 1};
    std::vector<double> weights_;
};

/// Spatial box grid plus a uniform time mesh t_n = t0 + n*dt, n = 0..nt.
class SpaceTimeGrid {
public:
    SpaceTimeGrid() = default;

    /// Validated construction: dim in {1,2}, nx >= 8, nt >= 8, R > 0, 0 <= t0 < T.
    static SpaceTimeGrid make(int dim, double half_width, int nx, double t0, double T, int nt);

    /// Unchecked-dimension construction over any box grid (tensor grids of
    /// small particle systems). Requires nt >= 1 and t0 < T.
    static SpaceTimeGrid product(BoxGrid space, double t0, double T, int nt);

    const BoxGrid& space() const { return space_; }
    int dim() const { return space_.dim(); }
    int nx() const { return space_.nx(); }
    double dx() const { return space_.dx(); }
    double t0() const { return t0_; }
    double T() const { return T_; }
    int nt() const { return nt_; }
    double dt() const { return dt_; }
    double time(int n) const { return t0_ + n * dt_; }

    /// Grid restricted to [t_n, T] with the same step. Tails may have fewer
    /// than eight steps; they are only produced internally.
    SpaceTimeGrid tail(int n) const;

    /// Same box and step count on a new initial time.
    SpaceTimeGrid with_start(double t0, int nt) const;

private:
    SpaceTimeGrid(BoxGrid space, double t0, double T, int nt);

    BoxGrid space_;
    double t0_ = 0.0;
    double T_ = 1.0;
    int nt_ = 1;
    double dt_ = 1.0;
};

}  // namespace mfc
