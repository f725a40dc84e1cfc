#pragma once

// Experiment orchestration: scenario files, time-domain runs with settling and
// oscillation metrics, robustness sweeps over emulator errors, eigen-studies
// and oracle verification.

#include "ucsim/closed_loop.hpp"
#include "ucsim/csv.hpp"
#include "ucsim/oracle.hpp"
#include "ucsim/stability.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace ucsim {

struct OscillationOptions {
    std::string signal;       // selector, e.g. lambda[34]; empty disables the check
    double window = 20.0;     // s
    double ratio = 0.8;       // peak-to-peak(last) / peak-to-peak(previous) above this ...
    double amplitude_multiple = 10.0; // ... and amplitude above this many settling tolerances
};

struct EigenStudyOptions {
    bool all_generator = true;
    double synthetic_inertia = 0.1;
    double synthetic_turbine_time = 0.3;
    double synthetic_governor_time = 0.1;
    double lambda_scale = 1.0;
    double phi_scale = 1.0;
    double rho_scale = 1.0;
    std::vector<std::pair<ControllerKind, TurbineModel>> variants;
};

struct Scenario {
    std::string name;
    std::filesystem::path grid_path;
    GridModel grid;              // with overrides applied
    ControllerConfig controller;
    TurbineModel turbine = TurbineModel::second_order;
    Disturbance disturbance;
    double horizon = 10.0;
    double step = 1e-3;
    double record_interval = 0.01;
    double settling_tolerance = 1e-3;
    std::vector<std::string> outputs; // selectors
    std::string monitor;              // selector for overshoot / settling metrics
    double emulator_turbine_factor = 1.0;
    double emulator_governor_factor = 1.0;
    OscillationOptions oscillation;
    EigenStudyOptions eigen;
    std::vector<double> sweep_factors{0.5, 1.0, 2.0};
    double verify_tolerance = 1e-3;

    /// Emulator constants set to factor * plant constants.
    void apply_emulator_factors();
    void validate() const;
};

Scenario parse_scenario(std::string_view text, const std::filesystem::path& base_dir, const std::string& source = "<scenario>");
Scenario load_scenario(const std::filesystem::path& path);

/// Reads one named quantity out of an evaluation, e.g. omega[30], flow[16-19], lambda[*] expands.
class Selector {
public:
    static std::vector<Selector> expand(const ClosedLoop& system, const std::string& spec);
    const std::string& name() const noexcept { return name_; }
    double operator()(const Evaluation& e) const;

private:
    enum class Field { theta, omega, pm, valve, command, lambda, phi, rho_upper, rho_lower, flow, vflow, pi,
                       pm_est, v_est, sigma, agc, estimate };
    std::string name_;
    Field field_ = Field::omega;
    std::size_t index_ = 0;
    const ClosedLoop* system_ = nullptr;
};

struct OscillationResult {
    bool oscillating = false;
    double ratio = 0.0;
    double amplitude = 0.0; // peak-to-peak over the last window
};

/// Compares the peak-to-peak amplitude of the last window with the one before it.
/// Throws ValidationError when the series spans less than two windows.
OscillationResult detect_oscillation(const std::vector<double>& times, const std::vector<double>& values, double window,
                                     double tolerance, double ratio = 0.8, double amplitude_multiple = 10.0);

struct StepMetrics {
    double overshoot = 0.0;     // excursion past the final value, opposite to the initial departure
    double settling_time = 0.0; // last time outside the band around the final value
};

/// Metrics of a sampled response against its final value.
StepMetrics step_metrics(const std::vector<double>& times, const std::vector<double>& values, double band);

struct RunResult {
    std::vector<double> times;
    std::vector<std::string> names;
    std::vector<std::vector<double>> series; // one per name, same length as times

    bool settled = false;
    double settling_time = 0.0;  // frequency: last full-resolution time with max |omega| > tol (inf if never inside)
    double final_max_omega = 0.0;
    std::optional<StepMetrics> monitor;
    std::optional<OscillationResult> oscillation;

    double min_rho = 0.0;               // over every accepted step
    double max_load_residual = 0.0;     // over every accepted step

    Vector final_state;
    EquilibriumSnapshot final_snapshot;
    bool aborted = false;
    std::string error;

    Table table() const;
    const std::vector<double>* find(const std::string& name) const;
};

/// Extra per-step observer, called with (t, state, evaluation) after every accepted step.
using StepObserver = std::function<void(double, const Vector&, const Evaluation&)>;

RunResult run_scenario(const Scenario& scenario, const StepObserver& observer = {});

struct SweepSummary {
    double factor = 1.0;
    bool settled = false;
    double settling_time = 0.0;         // frequency
    double monitor_settling_time = 0.0; // of the monitored signal
    double overshoot = 0.0;
    bool oscillating = false;
    double ratio = 0.0;
    std::string error;
};

std::vector<SweepSummary> run_robustness_sweep(const Scenario& base, const std::vector<double>& factors);
Table sweep_table(const std::vector<SweepSummary>& rows);

struct EigenStudyEntry {
    ControllerKind kind;
    TurbineModel turbine;
    std::string file;     // CSV name, empty on failure
    EigenReport report;
    Eigen::Index dimension = 0;
    std::string error;
};

/// Linearizes each variant at the pre-disturbance equilibrium; writes one CSV per variant into
/// `out_dir` when it is non-empty. Failures are recorded per variant.
std::vector<EigenStudyEntry> run_eigen_study(const Scenario& scenario, const std::filesystem::path& out_dir = {});
std::string eigen_summary(const std::vector<EigenStudyEntry>& entries);
/// Grid and config used for an eigen-study variant.
ClosedLoop eigen_system(const Scenario& scenario, ControllerKind kind, TurbineModel turbine);

struct VerifyOutcome {
    RunResult run;
    DispatchProblem problem;
    DispatchSolution solution;
    std::optional<ComparisonReport> report;
    std::string error;
};

VerifyOutcome run_verification(const Scenario& scenario);

} // namespace ucsim
