// End-to-end acceptance checks. One PASS/FAIL line per criterion; the exit code is
// non-zero when any criterion fails.

#include "support.hpp"

#include "ucsim/controller.hpp"
#include "ucsim/error.hpp"
#include "ucsim/oracle.hpp"
#include "ucsim/scenario.hpp"
#include "ucsim/stability.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

using namespace ucsim;

namespace {

struct Verdict {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

// Collected across every trajectory run below.
struct Invariants {
    double min_rho = std::numeric_limits<double>::infinity();
    double max_load_residual = 0.0;
    std::size_t runs = 0;
    std::vector<EigenReport> spectra;

    void absorb(const RunResult& r) {
        min_rho = std::min(min_rho, r.min_rho);
        max_load_residual = std::max(max_load_residual, r.max_load_residual);
        ++runs;
    }
} invariants;

RunResult run(const std::string& name) {
    RunResult r = run_scenario(load_scenario(testing::scenario_file(name)));
    invariants.absorb(r);
    return r;
}

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

int failures = 0;

void criterion(int id, const char* title, const std::function<void(Verdict&)>& body) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
        body(v);
    } catch (const std::exception& e) {
        v.pass = false;
        v.detail << " [exception: " << e.what() << "]";
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!v.pass) ++failures;
    std::printf("criterion %d (%s): %s%s (%.1f s)\n", id, title, v.pass ? "PASS" : "FAIL", v.detail.str().c_str(), secs);
    std::fflush(stdout);
}

// Projection used inside the multiplier dynamics, checked against the definition.
void projection(Verdict& v) {
    const double values[] = {-2.0, -std::numeric_limits<double>::denorm_min(), -0.0, 0.0,
                             std::numeric_limits<double>::denorm_min(), 3.0};
    int cases = 0;
    for (double x : values)
        for (double y : values) {
            const double expect = (y > 0.0 || x > 0.0) ? x : 0.0;
            v.require(project(x, y) == expect, "project(" + num(x) + ", " + num(y) + ")");
            ++cases;
        }
    v.require(project(5, -1) == 5 && project(-3, 0) == 0 && project(-3, 2) == -3, "worked examples");

    // Same truth table seen through the controller: a slack line with rho = 0 keeps rho at 0,
    // a positive rho may decrease, an overloaded line raises it.
    const GridModel g = testing::two_bus();
    const ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::unified);
    Measurements meas{Vector::Zero(2), Vector::Zero(1), Vector::Zero(1), Vector::Zero(2)};
    for (double phi_gap : {0.0, 0.2}) // virtual flow 0 (slack) and 10 sin(0.2) ~ 1.99 (above Pmax = 1)
        for (double rho : {0.0, 0.5}) {
            auto st = ControllerState::initial(g, Vector::Zero(2), Vector::Zero(2));
            st.phi << phi_gap, 0.0;
            st.rho_upper << rho;
            const double arg = 10.0 * std::sin(phi_gap) - 1.0;
            const double rate = uc_rhs(g, cfg, meas, st).rho_upper[0];
            v.require(rate == project(arg, rho), "rho rate at gap " + num(phi_gap) + ", rho " + num(rho));
            ++cases;
        }
    v.detail << " " << cases << " cases";
}

void jacobians(Verdict& v) {
    double worst = 0.0;
    int combos = 0;
    for (const GridModel& g : {testing::two_bus(), testing::ne39()})
        for (auto kind : {ControllerKind::unified, ControllerKind::decoupled, ControllerKind::agc, ControllerKind::droop})
            for (auto turbine : {TurbineModel::first_order, TurbineModel::second_order}) {
                ClosedLoop sys(g, ControllerConfig::defaults(g, kind), turbine);
                const double at_eq = testing::jacobian_mismatch(sys, sys.initial_state(), true);
                const double off_eq = testing::jacobian_mismatch(sys, testing::perturbed_state(sys, 2024), false);
                const std::string tag = std::to_string(g.bus_count()) + "-bus " + std::string(to_string(kind)) + "/" +
                                        std::string(to_string(turbine));
                v.require(at_eq <= 1e-6, tag + " at equilibrium: " + num(at_eq));
                v.require(off_eq <= 1e-6, tag + " off equilibrium: " + num(off_eq));
                worst = std::max({worst, at_eq, off_eq});
                ++combos;
            }
    v.detail << " " << combos << " combinations, worst relative error " << num(worst);
}

void eigen_ordering(Verdict& v) {
    const Scenario sc = load_scenario(testing::scenario_file("eigen_ne39"));
    const auto entries = run_eigen_study(sc);
    v.require(entries.size() == 3, "three variants");
    for (const auto& e : entries) {
        const std::string tag = std::string(to_string(e.kind)) + "/" + std::string(to_string(e.turbine));
        if (!e.error.empty()) {
            v.require(false, tag + ": " + e.error);
            continue;
        }
        invariants.spectra.push_back(e.report);
        const double a = e.report.abscissa;
        const bool want_positive = e.kind == ControllerKind::unified && e.turbine == TurbineModel::second_order;
        v.require(std::abs(a) > 1e-6, tag + " abscissa too close to zero");
        v.require(want_positive ? a > 0.0 : a < 0.0, tag + " abscissa sign");
        v.detail << " " << tag << "=" << num(a);
    }
}

RunResult uc_step, duc_step, agc_step;

void oscillation_dichotomy(Verdict& v) {
    uc_step = run("step_loss_uc");
    duc_step = run("step_loss_duc");
    v.require(!uc_step.aborted && !duc_step.aborted, "runs finished");
    v.require(uc_step.oscillation && uc_step.oscillation->oscillating, "UC lambda[34] oscillating");
    v.require(duc_step.oscillation && !duc_step.oscillation->oscillating, "DUC lambda[34] not oscillating");
    v.require(duc_step.settled, "DUC settled");
    if (uc_step.oscillation && duc_step.oscillation)
        v.detail << " UC ratio " << num(uc_step.oscillation->ratio) << " amplitude " << num(uc_step.oscillation->amplitude)
                 << "; DUC ratio " << num(duc_step.oscillation->ratio) << " amplitude "
                 << num(duc_step.oscillation->amplitude);
}

void frequency_restoration(Verdict& v) {
    agc_step = run("step_loss_agc");
    for (const auto* r : {&uc_step, &duc_step, &agc_step})
        v.require(!r->aborted && r->final_max_omega <= 1e-3, "final max |omega| " + num(r->final_max_omega));
    v.require(duc_step.settling_time < agc_step.settling_time, "DUC faster than AGC");
    v.detail << " final max|w| UC " << num(uc_step.final_max_omega) << " DUC " << num(duc_step.final_max_omega)
             << " AGC " << num(agc_step.final_max_omega) << "; settling DUC " << num(duc_step.settling_time)
             << " s, AGC " << num(agc_step.settling_time) << " s, UC " << num(uc_step.settling_time) << " s";
}

void congestion(Verdict& v) {
    const GridModel grid = load_scenario(testing::scenario_file("congestion_uc")).grid;
    const double limit = grid.line(grid.line_index(16, 17)).flow_max;
    for (const char* name : {"congestion_uc", "congestion_duc", "congestion_agc"}) {
        const RunResult r = run(name);
        const auto* flow = r.find("flow[16-17]");
        if (r.aborted || !flow) {
            v.require(false, std::string(name) + " did not finish");
            continue;
        }
        const double final = flow->back();
        const bool agc = std::string(name).ends_with("agc");
        v.require(agc ? final > limit : final <= limit + 1e-3, std::string(name) + " final flow " + num(final));
        v.detail << " " << name << "=" << num(final);
    }
    v.detail << " (limit " << num(limit) << ")";
}

void oracle_equivalence(Verdict& v) {
    int matched = 0;
    for (const char* name : {"oracle_uncongested", "oracle_congested", "oracle_limit"})
        for (const char* kind : {"uc", "duc"}) {
            const std::string file = std::string(name) + "_" + kind;
            const VerifyOutcome out = run_verification(load_scenario(testing::scenario_file(file)));
            invariants.absorb(out.run);
            if (!out.report) {
                v.require(false, file + ": " + out.error);
                continue;
            }
            const bool ok = out.report->max_p_error <= 1e-3 && out.report->max_flow_error <= 1e-3;
            v.require(ok, file + " p error " + num(out.report->max_p_error) + ", flow error " +
                              num(out.report->max_flow_error));
            if (ok) ++matched;
        }
    v.detail << " " << matched << "/6 simulated equilibria match the dispatch optimum";

    // Brute force on two buses: unconstrained, binding line, binding control.
    const GridModel g = testing::two_bus();
    DispatchProblem pr{g, Vector::Zero(2), Vector::Ones(2), false};
    pr.injection << -0.5, 0.0;
    std::vector<DispatchProblem> cases{pr, pr, pr};
    cases[1].grid = g.with_line_limits(0, -0.1, 0.1);
    cases[2].grid = g.with_control_limits(1, -0.05, 0.05);
    double worst = 0.0;
    for (const auto& c : cases) {
        const auto sol = solve_dispatch(c);
        v.require(sol.status == DispatchStatus::optimal, "two-bus dispatch solved");
        worst = std::max(worst, std::abs(grid_search_objective(c, 1e-3) - sol.objective));
    }
    v.require(worst <= 1e-6, "grid search gap " + num(worst));
    v.detail << "; two-bus grid-search gap " << num(worst);
}

void robustness(Verdict& v) {
    const Scenario base = load_scenario(testing::scenario_file("robustness_duc"));
    const auto rows = run_robustness_sweep(base, {0.5, 1.0, 2.0});
    invariants.runs += rows.size();
    const SweepSummary* nominal = nullptr;
    for (const auto& r : rows)
        if (r.factor == 1.0) nominal = &r;
    v.require(nominal && nominal->error.empty() && nominal->settled, "nominal run settled");
    if (!nominal) return;
    for (const auto& r : rows) {
        v.detail << " f=" << num(r.factor) << ": settle " << num(r.monitor_settling_time) << " s, overshoot "
                 << num(r.overshoot) << ", freq settle " << num(r.settling_time) << " s"
                 << (r.oscillating ? ", oscillating" : "") << ";";
        if (r.factor == 1.0) continue;
        const std::string tag = "f=" + num(r.factor);
        v.require(r.error.empty() && r.settled, tag + " settled");
        v.require(!r.oscillating, tag + " no oscillation flag");
        v.require(r.monitor_settling_time > nominal->monitor_settling_time, tag + " settling strictly worse");
        v.require(r.overshoot > nominal->overshoot, tag + " overshoot strictly worse");
    }
}

void invariant_suite(Verdict& v) {
    v.require(invariants.runs > 0, "trajectories collected");
    v.require(invariants.min_rho >= 0.0, "rho nonnegative, min " + num(invariants.min_rho));
    v.require(invariants.max_load_residual <= 1e-12, "load residual " + num(invariants.max_load_residual));

    // RK4 order on the 39-bus step-loss system over a stretch without events or kinks.
    const Scenario sc = load_scenario(testing::scenario_file("step_loss_duc"));
    const ClosedLoop sys(sc.grid, sc.controller, sc.turbine, sc.disturbance);
    Vector x0 = sys.initial_state();
    for (int k = 0; k < 100; ++k) x0 = sys.step(k * 1e-3, 1e-3, x0);
    auto integrate = [&](double h) {
        Vector x = x0;
        const int n = static_cast<int>(std::lround(0.5 / h));
        for (int k = 0; k < n; ++k) x = sys.step(0.1 + k * h, h, x);
        return x;
    };
    // Steps above ~2 ms leave the stability region of the fast virtual-angle modes.
    const Vector ref = integrate(0.5 / 16384);
    const double e1 = (integrate(0.5 / 512) - ref).cwiseAbs().maxCoeff();
    const double e2 = (integrate(0.5 / 1024) - ref).cwiseAbs().maxCoeff();
    const double order = std::log2(e1 / e2);
    v.require(order >= 3.5, "RK4 observed order " + num(order));

    double closure = 0.0;
    for (const auto& rep : invariants.spectra) {
        double scale = 1.0;
        for (auto z : rep.values) scale = std::max(scale, std::abs(z));
        closure = std::max(closure, conjugate_closure_error(rep.values) / scale);
    }
    v.require(!invariants.spectra.empty(), "spectra collected");
    v.require(closure <= 1e-10, "conjugate closure " + num(closure));

    v.detail << " " << invariants.runs << " runs, min rho " << num(invariants.min_rho) << ", max load residual "
             << num(invariants.max_load_residual) << ", RK4 order " << num(order) << ", conjugate closure "
             << num(closure);
}

} // namespace

int main() {
    criterion(1, "projection", projection);
    criterion(2, "Jacobian fidelity", jacobians);
    criterion(3, "eigenvalue ordering", eigen_ordering);
    criterion(4, "oscillation dichotomy", oscillation_dichotomy);
    criterion(5, "frequency restoration", frequency_restoration);
    criterion(6, "congestion management", congestion);
    criterion(7, "oracle equivalence", oracle_equivalence);
    criterion(8, "robustness sweep", robustness);
    criterion(9, "invariants", invariant_suite);
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
