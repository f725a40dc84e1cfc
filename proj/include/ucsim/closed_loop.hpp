#pragma once

// Joint plant + controller system and its fixed-step RK4 integrator.
//
// The flat state holds the differential variables only. Load-bus frequencies
// are algebraic; they are eliminated in closed form at every evaluation, which
// is exact because the load balance is linear in omega.

#include "ucsim/controller.hpp"
#include "ucsim/grid.hpp"
#include "ucsim/plant.hpp"

#include <string>
#include <utility>

namespace ucsim {

/// Offsets of each block inside the flat state vector.
struct StateLayout {
    Eigen::Index theta = 0, omega = 0, mech = 0, valve = 0;
    Eigen::Index lambda = 0, phi = 0, rho_upper = 0, rho_lower = 0, pi = 0;
    Eigen::Index emu_mech = 0, emu_valve = 0, agc = 0;
    Eigen::Index size = 0;
    Eigen::Index n = 0, g = 0, m = 0, areas = 0, agc_areas = 0;

    static StateLayout make(const GridModel& grid);
};

struct ClosedLoopState {
    PhysicalState plant;
    ControllerState control;
};

/// Everything computed in one right-hand-side evaluation.
struct Evaluation {
    PhysicalState plant; // load omegas solved
    ControllerState control;
    Vector injection;    // r(t)
    Vector command;      // applied p per bus
    Vector flows;        // physical line flows
    Vector virtual_flows;
    Measurements measurements;
    Vector derivative;   // flat
};

class ClosedLoop {
public:
    ClosedLoop(GridModel grid, ControllerConfig config, TurbineModel turbine, Disturbance disturbance = {});

    const GridModel& grid() const noexcept { return grid_; }
    const ControllerConfig& config() const noexcept { return config_; }
    TurbineModel turbine() const noexcept { return turbine_; }
    const Disturbance& disturbance() const noexcept { return disturbance_; }
    const StateLayout& layout() const noexcept { return layout_; }

    Vector pack(const ClosedLoopState& s) const;
    /// Unpacks and re-solves the algebraic load frequencies at time t.
    ClosedLoopState unpack(const Vector& x, double t = 0.0) const;

    /// Pre-disturbance equilibrium: power flow of the scheduled injections,
    /// zero frequency and controller deviations, virtual angles equal to the physical ones.
    Vector initial_state() const;

    Evaluation evaluate(double t, const Vector& x) const { return evaluate_at(disturbance_.injection_at(grid_, t), x); }
    /// Evaluation with the uncontrolled injection r given explicitly.
    Evaluation evaluate_at(const Vector& injection, const Vector& x) const;
    Vector derivative(double t, const Vector& x) const { return evaluate(t, x).derivative; }

    /// Load frequencies and commands consistent with theta and lambda at injection r.
    std::pair<Vector, Vector> resolve_loads(const Vector& theta, const Vector& lambda, const Vector& injection) const;

    /// One classical RK4 step from t to t+h. The injection is held at its value at t + h/2 for
    /// all stages, so disturbance steps on the step grid are resolved exactly.
    /// `k1`, when given, must be the derivative at x under that injection.
    /// Multipliers rho are clamped at zero afterwards; throws NumericError naming the first
    /// non-finite variable.
    Vector step(double t, double h, const Vector& x, const Vector* k1 = nullptr) const;

    /// Human-readable name of a flat-state entry, e.g. "lambda[34]".
    std::string label(Eigen::Index index) const;

private:
    GridModel grid_;
    ControllerConfig config_;
    TurbineModel turbine_;
    Disturbance disturbance_;
    StateLayout layout_;
    Vector alpha_eff_;
};

/// Spec-level single step on structured states.
std::pair<PhysicalState, ControllerState> step(const ClosedLoop& system, const PhysicalState& plant,
                                               const ControllerState& control, double t, double h);

} // namespace ucsim
