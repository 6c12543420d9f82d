#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mfc/grid.hpp"
#include "mfc/measures.hpp"
#include "mfc/model.hpp"

namespace mfc {

/// Vector field per node per time step: alpha[n][k * size + i], n = 0..nt-1.
/// Step n drives the transition t_n -> t_{n+1}.
struct DriftField {
    SpaceTimeGrid grid;
    FieldPath alpha;

    static DriftField zeros(const SpaceTimeGrid& grid);
    double& at(int n, int axis, std::size_t i) { return alpha[n][axis * grid.space().size() + i]; }
    double at(int n, int axis, std::size_t i) const {
        return alpha[n][axis * grid.space().size() + i];
    }
    double sup_norm() const;
};

/// Discrete multiplier u(t_n, .), n = 0..nt, with the gradient Du(t_n, .) the
/// scheme selected at each step n < nt (upwind, clamped at argmin H).
struct ValueField {
    SpaceTimeGrid grid;
    FieldPath u;
    FieldPath du;  // [n][k * size + i]
    /// Per node and axis: +1 forward difference, -1 backward, 0 clamped to argmin.
    std::vector<std::vector<std::int8_t>> branch;
    double grad_bound = 0.0;
    /// Max residual of the discrete equation recomputed from the stored slices.
    double residual = 0.0;

    double gradient(int n, int axis, std::size_t i) const {
        return du[n][axis * grid.space().size() + i];
    }
};

struct FpStats {
    double max_mass_drift = 0.0;  // before renormalization, per step
    double min_value = 0.0;       // most negative value seen before clipping
    int renormalizations = 0;
};

/// Implicit heat step S = prod_k (I - dt Delta_k)^{-1} with the reflecting
/// (Neumann) Laplacian; S is self-adjoint in the trapezoid inner product and
/// preserves its total mass.
class DiffusionStep {
public:
    DiffusionStep(const BoxGrid& grid, double dt);
    void apply(std::span<double> f) const;
    /// Discrete Neumann Laplacian sum_k Delta_k f.
    void laplacian(std::span<const double> f, std::span<double> out) const;

private:
    BoxGrid grid_;
    double r_;
    std::vector<double> cprime_;
    std::vector<double> inv_denom_;
};

namespace scheme {

/// Upwind one-sided differences at node i on axis k, scaled by the node's
/// control-volume width (dx in the interior, dx/2 at the ends).
double forward_difference(const BoxGrid& g, std::span<const double> v, int axis, std::size_t i);
double backward_difference(const BoxGrid& g, std::span<const double> v, int axis, std::size_t i);

/// Numerical Hamiltonian of one slice: returns sum_k max(h(min(q+, p0)), h(max(q-, p0)))
/// per node; fills du and branch (size dim * size).
void numerical_hamiltonian(const BoxGrid& g, const AxisHamiltonian& h, std::span<const double> v,
                           std::span<double> hval, std::span<double> du,
                           std::span<std::int8_t> branch);

/// out += A(alpha) m with A(alpha) m = -div(alpha m) in upwind flux form:
/// J_{i+1/2} = alpha_i^+ m_i + alpha_{i+1}^- m_{i+1}, zero flux at the box.
void add_transport(const BoxGrid& g, std::span<const double> alpha, std::span<const double> m,
                   std::span<double> out);

/// out += A(alpha)^* v, the adjoint in the trapezoid inner product.
void add_transport_adjoint(const BoxGrid& g, std::span<const double> alpha,
                           std::span<const double> v, std::span<double> out);

/// out += -div(m beta) with the upwind side of each node fixed by the sign of
/// alpha; where alpha vanishes the flux is split equally between both faces.
/// This is the derivative of A(alpha) m in the direction beta, linear in beta.
void add_drift_perturbation(const BoxGrid& g, std::span<const double> alpha,
                            std::span<const double> beta, std::span<const double> m,
                            std::span<double> out);

/// Largest explicit CFL number dt * sum_k |alpha_k| / w_k over the nodes.
double cfl_number(const BoxGrid& g, std::span<const double> alpha, double dt);

}  // namespace scheme

/// Running-source callback: fills f with the source at step n (n < nt).
using StepSource = std::function<void(int n, std::span<double> f)>;

/// Backward semi-implicit HJB on any box grid:
///   u^nt = terminal,  v = S u^{n+1},  u^n = v - dt H_h(v) + dt F^n.
ValueField solve_hjb(const SpaceTimeGrid& grid, const AxisHamiltonian& h, const StepSource& running,
                     const Field& terminal);

/// HJB of the MFG system with F(x, m^n) and G(x, m^nt) from the spec couplings.
ValueField solve_hjb_backward(const ProblemSpec& spec, const DensityPath& m_path);

/// alpha = -H_p(x, Du) node-wise.
DriftField drift_from_value(const Hamiltonian& h, const ValueField& u);

/// Forward Fokker-Planck m^{n+1} = S(m^n + dt A(alpha^n) m^n).
DensityPath solve_fp_forward(const SpaceTimeGrid& grid, const GridDensity& m0,
                             const DriftField& drift, FpStats* stats = nullptr);

/// Signed linear forward solve rho^{n+1} = S(rho^n + dt A(alpha^n) rho^n + dt src^n).
FieldPath propagate_linear_forward(const SpaceTimeGrid& grid, const DriftField& drift,
                                   const Field& rho0, const StepSource& source = {});

/// Backward dual solve psi^n = v + dt A(alpha^n)^* v + dt src^n, v = S psi^{n+1},
/// between time indices n1 < n2 with psi^{n2} = terminal. Returns slices n1..n2.
FieldPath solve_linear_dual(const SpaceTimeGrid& grid, const DriftField& drift,
                            const Field& terminal, int n1, int n2, const StepSource& source = {});

/// Time-argument overload; t1 and t2 must lie on the time mesh.
FieldPath solve_linear_dual(const SpaceTimeGrid& grid, const DriftField& drift,
                            const Field& terminal, double t1, double t2);

}  // namespace mfc
