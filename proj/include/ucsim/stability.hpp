#pragma once

// Small-signal analysis of the closed loop: analytic Jacobian about an
// equilibrium, elimination of the algebraic load balance, spectrum.

#include "ucsim/closed_loop.hpp"

#include <complex>
#include <functional>
#include <string>
#include <vector>

namespace ucsim {

/// Frozen branch of every nonsmooth term at the linearization point.
struct ActiveSet {
    std::vector<bool> rho_upper;     // per line: multiplier dynamics active
    std::vector<bool> rho_lower;     // per line
    std::vector<bool> command_free;  // per bus: command inside its limits (false = saturated)

    /// Branches read off an equilibrium: a multiplier is active when it is positive or its
    /// projection argument is non-negative; a command is free when its unclipped value lies
    /// strictly inside the limits.
    static ActiveSet at(const ClosedLoop& system, const Vector& x, double t = 0.0);
};

struct LinearModel {
    Matrix a;
    std::vector<std::string> labels;
    Vector equilibrium;                 // full flat state
    std::vector<Eigen::Index> states;   // flat indices kept, in row order
    Eigen::Index theta_reference = -1;  // flat index of the grounded angle (removed)
    Eigen::Index phi_reference = -1;    // flat index of the grounded virtual angle, or -1
    std::vector<Eigen::Index> row_reference; // per kept state: grounded index it is measured from, or -1

    Eigen::Index dimension() const noexcept { return a.rows(); }
};

struct LinearizeOptions {
    double residual_tolerance = 1e-8;
    double time = 0.0;
    bool require_equilibrium = true; // false: Jacobian at an arbitrary state (used for derivative checks)
};

/// Linearize at `equilibrium` (flat state). The active set defaults to ActiveSet::at.
LinearModel linearize(const ClosedLoop& system, const Vector& equilibrium, const ActiveSet* active = nullptr,
                      const LinearizeOptions& options = {});

/// Reduced coordinates of a full flat state (relative angles for the grounded blocks).
Vector reduce_state(const LinearModel& model, const Vector& x);

/// Nonlinear right-hand side in the reduced coordinates of `model`: z maps to a full state by
/// offsetting the kept entries of the equilibrium (relative angles add the reference value).
std::function<Vector(const Vector&)> reduced_rhs(const ClosedLoop& system, const LinearModel& model, double t = 0.0);

/// Central-difference Jacobian of `f` at z.
Matrix finite_difference_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& z, double step = 1e-6);

enum class Stability { stable, marginal, unstable };
std::string_view to_string(Stability s);

struct EigenReport {
    std::vector<std::complex<double>> values; // sorted by decreasing real part
    double abscissa = 0.0;
    Stability classification = Stability::stable;
    std::size_t unstable_count = 0; // Re > tol
    double tolerance = 1e-8;
};

EigenReport eigenvalues(const Matrix& a, double tolerance = 1e-8);
inline EigenReport eigenvalues(const LinearModel& model, double tolerance = 1e-8) { return eigenvalues(model.a, tolerance); }

/// Largest distance from a non-real eigenvalue's conjugate to the nearest eigenvalue.
double conjugate_closure_error(const std::vector<std::complex<double>>& values);

/// Which controller gains a sweep multiplies.
struct GainScaling {
    bool lambda = true;
    bool phi = true;
    bool rho = true;
    bool pi = true;
};

ControllerConfig scale_gains(const ControllerConfig& base, double factor, const GainScaling& which = {});

struct SweepPoint {
    double scale = 0.0;
    double abscissa = 0.0;
    std::string error; // non-empty when the point failed
};

/// Spectral abscissa of the linearization at the pre-disturbance equilibrium for each gain scale.
std::vector<SweepPoint> gain_sweep(const GridModel& grid, const ControllerConfig& base, TurbineModel turbine,
                                   const std::vector<double>& scales, const GainScaling& which = {});

} // namespace ucsim
