#pragma once

// Distributed frequency / congestion controllers: the unified primal-dual
// controller (UC), its decoupled variant with a turbine-governor emulator
// (DUC), and two baselines (AGC with droop, droop only).

#include "ucsim/grid.hpp"
#include "ucsim/plant.hpp"

#include <string_view>

namespace ucsim {

enum class ControllerKind { unified, decoupled, agc, droop };

std::string_view to_string(ControllerKind kind);
ControllerKind parse_controller_kind(std::string_view name);

struct ControllerConfig {
    ControllerKind kind = ControllerKind::unified;

    Vector k_lambda;    // per bus
    Vector k_phi;       // per bus
    Vector k_rho_upper; // per line
    Vector k_rho_lower; // per line
    Vector k_pi;        // per area
    Vector alpha;       // per bus; p_i = -alpha_i (omega_i + lambda_i)

    Vector emulator_turbine_time;  // per generator (DUC)
    Vector emulator_governor_time; // per generator (DUC)

    bool area_control = false;
    bool congestion_management = true;
    bool load_side_control = true; // false: loads keep p = 0 but still run lambda/phi

    double agc_gain = 0.05;       // integral gain on the area control error
    Vector participation;         // per generator; sums to one within each area

    /// Gains of one, alpha from the grid, emulator constants equal to the true
    /// plant constants, equal participation factors.
    static ControllerConfig defaults(const GridModel& grid, ControllerKind kind);

    void validate(const GridModel& grid) const;

    /// alpha with load entries zeroed when load-side control is off.
    Vector effective_alpha(const GridModel& grid) const;
    bool uses_primal_dual() const noexcept { return kind == ControllerKind::unified || kind == ControllerKind::decoupled; }
};

struct ControllerState {
    Vector lambda;     // per bus
    Vector phi;        // per bus, rad
    Vector rho_upper;  // per line, >= 0
    Vector rho_lower;  // per line, >= 0
    Vector pi;         // per area
    Vector emu_mech;   // per generator (DUC estimate of mechanical power)
    Vector emu_valve;  // per generator (DUC estimate of valve position)
    Vector agc;        // per AGC area (one system-wide integrator when no areas are declared)

    /// Pre-disturbance controller state: multipliers zero, virtual angles equal
    /// to the physical angles, emulator at the initial command.
    static ControllerState initial(const GridModel& grid, const Vector& theta, const Vector& command);
};

struct ControllerDerivative {
    Vector lambda, phi, rho_upper, rho_lower, pi, emu_mech, emu_valve, agc;
};

/// Local measurements available to the controller at each bus.
struct Measurements {
    Vector omega;      // per bus
    Vector flows;      // per line, physical P_ij
    Vector net_power;  // per generator: M_i domega_i/dt
    Vector command;    // per bus, applied p_i
};

/// Projection [x]^+_y: x if y > 0 or x > 0, otherwise 0.
constexpr double project(double x, double y) noexcept { return (y > 0.0 || x > 0.0) ? x : 0.0; }

/// P^_ij = B_ij sin(phi_i - phi_j).
Vector virtual_flows(const GridModel& grid, const Vector& phi);

/// clip(-alpha (omega + lambda), lo, hi).
double control_command(double alpha, double omega, double lambda, double lo, double hi) noexcept;

/// Applied command p per bus for the primal-dual controllers (opted-out loads get 0).
Vector primal_dual_commands(const GridModel& grid, const ControllerConfig& cfg, const Vector& omega, const Vector& lambda);

ControllerDerivative uc_rhs(const GridModel& grid, const ControllerConfig& cfg, const Measurements& meas,
                            const ControllerState& state);
ControllerDerivative duc_rhs(const GridModel& grid, const ControllerConfig& cfg, const Measurements& meas,
                             const ControllerState& state);

enum class EstimateSide { load, generator };

/// Load side: r_i = D_i w_i + sum P_ij - p_i, per load bus (grid.loads() order).
/// Generator side: the lumped r_i + p^M_i = M_i dw_i/dt + D_i w_i + sum P_ij, per generator.
Vector estimate_disturbance(const GridModel& grid, const Measurements& meas, EstimateSide side);

struct AgcOutput {
    Vector integral_rate; // per AGC area
    Vector command;       // per bus; loads 0
};

/// Generator droop -omega/R plus participation share of the area integral.
AgcOutput agc_rhs(const GridModel& grid, const ControllerConfig& cfg, const Vector& omega, const Vector& flows,
                  const Vector& agc_state);

/// Droop-only command per bus (generators -alpha omega, loads 0), clipped.
Vector droop_commands(const GridModel& grid, const ControllerConfig& cfg, const Vector& omega);

/// Number of AGC integrators (areas, or one when the grid declares none).
std::size_t agc_area_count(const GridModel& grid);
/// AGC frequency-bias coefficient b_i per bus: D_i + alpha_i at generators, D_i at loads.
Vector agc_bias(const GridModel& grid, const ControllerConfig& cfg);

} // namespace ucsim
