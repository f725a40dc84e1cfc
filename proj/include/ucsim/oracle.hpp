#pragma once

// Reference solver for the congestion-constrained dispatch problem
//
//   min  sum_i 1/2 alpha_i p_i^2
//   s.t. p_i + r_i = sum_j P_ij,  P_ij = B_ij sin(theta_i - theta_j),
//        flow and control limits, optional area schedules,
//
// and comparison of simulated equilibria against its optimum.

#include "ucsim/closed_loop.hpp"

#include <string>
#include <vector>

namespace ucsim {

struct DispatchProblem {
    GridModel grid;
    Vector injection;          // total uncontrolled injection r per bus
    Vector alpha;              // per bus; entries <= 0 mark buses whose p is fixed at zero
    bool area_control = false; // enforce area tie-line schedules

    /// Problem whose optimum a primal-dual controller with `config` should reach after `disturbance`.
    static DispatchProblem from(const GridModel& grid, const ControllerConfig& config, const Disturbance& disturbance);
};

enum class DispatchStatus { optimal, infeasible, not_converged };
std::string_view to_string(DispatchStatus s);

struct DispatchSolution {
    DispatchStatus status = DispatchStatus::not_converged;
    std::string message;
    Vector p;            // per bus
    Vector theta;        // per bus, reference angle unchanged from the warm start
    Vector flows;        // per line
    double objective = 0.0;
    Vector balance_multiplier; // per bus; alpha_i p_i + mu_i = 0 at free buses
    Vector flow_upper_multiplier; // per line, >= 0
    Vector flow_lower_multiplier; // per line, >= 0
    Vector control_upper_multiplier; // per bus, >= 0
    Vector control_lower_multiplier; // per bus, >= 0
    Vector area_multiplier;          // per area (area control only)
    std::vector<std::string> active; // human-readable binding constraints
    int iterations = 0;
};

struct DispatchOptions {
    double tolerance = 1e-10; // Newton residual and constraint activity threshold
    int max_newton = 60;
    int max_active_set_changes = 400;
};

/// Active-set Newton on the KKT conditions, warm-started from the power flow of the
/// scheduled injections with p = 0.
DispatchSolution solve_dispatch(const DispatchProblem& problem, const DispatchOptions& options = {});

struct KktResiduals {
    double stationarity = 0.0;
    double primal = 0.0;          // balance, flow definition, area schedules
    double bounds = 0.0;          // violation of flow and control limits
    double dual = 0.0;            // negativity of inequality multipliers
    double complementarity = 0.0;
    double max() const;
};

KktResiduals kkt_residuals(const DispatchProblem& problem, const DispatchSolution& solution);

/// Brute-force objective minimum over a grid of p with spacing `resolution` for radial
/// instances with at most three controllable buses (flows follow from p by tree balance).
double grid_search_objective(const DispatchProblem& problem, double resolution);

struct EquilibriumSnapshot {
    Vector p;     // per bus applied command
    Vector flows; // per line
    Vector omega; // per bus
    Vector lambda; // per bus (empty for non primal-dual controllers)
    bool settled = false;
};

struct ComparisonReport {
    double max_p_error = 0.0;
    double max_flow_error = 0.0;
    double max_omega = 0.0;
    double max_multiplier_error = 0.0; // |alpha^2 lambda - mu| at controllable buses; NaN if unavailable
    double tolerance = 1e-3;
    bool pass = false;
};

/// Throws NotSettledError when the snapshot is not settled.
ComparisonReport verify_equilibrium(const EquilibriumSnapshot& sim, const DispatchProblem& problem,
                                    const DispatchSolution& solution, double tolerance = 1e-3);

std::string write_dispatch(const GridModel& grid, const DispatchSolution& solution);
DispatchSolution parse_dispatch(const GridModel& grid, std::string_view text, const std::string& source = "<dispatch>");

} // namespace ucsim
