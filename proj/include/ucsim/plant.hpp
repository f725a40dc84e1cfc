#pragma once

// Physical plant: swing dynamics at generator buses, algebraic power balance
// at load buses, and a turbine-governor chain per generator.

#include "ucsim/grid.hpp"

#include <string_view>
#include <vector>

namespace ucsim {

enum class TurbineModel {
    second_order, // turbine lag driven by a governor lag (valve position v)
    first_order,  // single turbine lag driven directly by the command; v unused
};

std::string_view to_string(TurbineModel kind);
TurbineModel parse_turbine_model(std::string_view name);

/// Plant variables at one instant. `omega` holds every bus; load entries are
/// algebraic and must satisfy the load balance (see solve_load_buses).
struct PhysicalState {
    Vector theta;      // per bus, rad
    Vector omega;      // per bus, pu
    Vector mech_power; // per generator, pu
    Vector valve;      // per generator, pu

    static PhysicalState zeros(const GridModel& grid);
};

struct PhysicalDerivative {
    Vector theta;      // per bus (load entries are the algebraic omega)
    Vector omega;      // per bus; load entries are zero
    Vector mech_power; // per generator
    Vector valve;      // per generator
};

struct DisturbanceStep {
    double time = 0.0;
    std::size_t bus = 0;
    double delta = 0.0; // pu injection change
};

/// Right-continuous step changes added on top of the scheduled injections.
class Disturbance {
public:
    Disturbance() = default;
    explicit Disturbance(std::vector<DisturbanceStep> steps);

    const std::vector<DisturbanceStep>& steps() const noexcept { return steps_; }

    /// Total uncontrolled injection r(t): scheduled injection plus every step with time <= t.
    Vector injection_at(const GridModel& grid, double t) const;
    /// Disturbance part only (without the schedule), evaluated after the last step.
    Vector final_delta(const GridModel& grid) const;
    /// Step times in increasing order, without duplicates.
    std::vector<double> event_times() const;

private:
    std::vector<DisturbanceStep> steps_;
};

/// Time derivatives of the plant. `command` is the applied control p per bus and
/// `injection` is r per bus. Load omegas are taken from `state` as given.
PhysicalDerivative physical_rhs(const GridModel& grid, const PhysicalState& state, const Vector& command,
                                const Vector& injection, TurbineModel kind);

/// Generator net torque M_i * domega_i/dt per generator slot (the bracket of the swing equation).
Vector generator_net_power(const GridModel& grid, const PhysicalState& state, const Vector& outflow,
                           const Vector& injection);

/// omega_i = (-sum_j P_ij + p_i + r_i) / D_i for every load bus, in grid.loads() order.
/// Throws ValidationError if a load bus has zero damping.
Vector solve_load_buses(const GridModel& grid, const Vector& theta, const Vector& command, const Vector& injection);

/// Max |residual| of the load balance 0 = -D w - sum P + p + r over load buses.
double load_balance_residual(const GridModel& grid, const PhysicalState& state, const Vector& command,
                             const Vector& injection);

} // namespace ucsim
