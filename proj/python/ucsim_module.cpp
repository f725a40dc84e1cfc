#include "ucsim/error.hpp"
#include "ucsim/oracle.hpp"
#include "ucsim/scenario.hpp"

#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace ucsim;

namespace {

py::dict run_dict(const RunResult& r) {
    py::dict d;
    d["times"] = Vector(Eigen::Map<const Vector>(r.times.data(), static_cast<Eigen::Index>(r.times.size())));
    d["names"] = r.names;
    Matrix series(static_cast<Eigen::Index>(r.times.size()), static_cast<Eigen::Index>(r.series.size()));
    for (std::size_t s = 0; s < r.series.size(); ++s)
        for (std::size_t k = 0; k < r.times.size(); ++k)
            series(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(s)) = r.series[s][k];
    d["series"] = series;
    d["settled"] = r.settled;
    d["settling_time"] = r.settling_time;
    d["final_max_omega"] = r.final_max_omega;
    d["aborted"] = r.aborted;
    d["error"] = r.error;
    if (r.oscillation) {
        d["oscillating"] = r.oscillation->oscillating;
        d["oscillation_ratio"] = r.oscillation->ratio;
    }
    if (r.monitor) {
        d["overshoot"] = r.monitor->overshoot;
        d["monitor_settling_time"] = r.monitor->settling_time;
    }
    d["final_p"] = r.final_snapshot.p;
    d["final_flows"] = r.final_snapshot.flows;
    return d;
}

py::dict dispatch_dict(const DispatchSolution& s) {
    py::dict d;
    d["status"] = std::string(to_string(s.status));
    d["message"] = s.message;
    d["p"] = s.p;
    d["theta"] = s.theta;
    d["flows"] = s.flows;
    d["objective"] = s.objective;
    d["balance_multiplier"] = s.balance_multiplier;
    d["active"] = s.active;
    d["iterations"] = s.iterations;
    return d;
}

} // namespace

PYBIND11_MODULE(ucsim, m) {
    m.doc() = "Primal-dual frequency and congestion control simulator";

    // Translators run newest first, so subclasses are registered after the base.
    auto& base = py::register_exception<Error>(m, "Error");
    py::register_exception<ParseError>(m, "ParseError", base);
    py::register_exception<ValidationError>(m, "ValidationError", base);
    auto& numeric = py::register_exception<NumericError>(m, "NumericError", base);
    py::register_exception<ConvergenceError>(m, "ConvergenceError", numeric);
    py::register_exception<NotSettledError>(m, "NotSettledError", base);

    m.def("project", &project, py::arg("x"), py::arg("y"), "x if y > 0 or x > 0, otherwise 0");
    m.def("control_command", &control_command, py::arg("alpha"), py::arg("omega"), py::arg("lam"), py::arg("lo"),
          py::arg("hi"));

    m.def(
        "run",
        [](const std::filesystem::path& scenario) {
            const Scenario sc = load_scenario(scenario);
            py::gil_scoped_release release;
            RunResult r = run_scenario(sc);
            py::gil_scoped_acquire acquire;
            return run_dict(r);
        },
        py::arg("scenario"), "Simulate a scenario file; returns sampled outputs and run metrics.");

    m.def(
        "eigen",
        [](const std::filesystem::path& scenario) {
            py::list out;
            for (const auto& e : run_eigen_study(load_scenario(scenario))) {
                py::dict d;
                d["controller"] = std::string(to_string(e.kind));
                d["turbine"] = std::string(to_string(e.turbine));
                d["dimension"] = e.dimension;
                d["abscissa"] = e.report.abscissa;
                d["classification"] = std::string(to_string(e.report.classification));
                d["eigenvalues"] = e.report.values;
                d["error"] = e.error;
                out.append(d);
            }
            return out;
        },
        py::arg("scenario"));

    m.def(
        "sweep",
        [](const std::filesystem::path& scenario, const std::vector<double>& factors) {
            const Scenario sc = load_scenario(scenario);
            py::list out;
            for (const auto& r : run_robustness_sweep(sc, factors.empty() ? sc.sweep_factors : factors)) {
                py::dict d;
                d["factor"] = r.factor;
                d["settled"] = r.settled;
                d["settling_time"] = r.settling_time;
                d["monitor_settling_time"] = r.monitor_settling_time;
                d["overshoot"] = r.overshoot;
                d["oscillating"] = r.oscillating;
                d["error"] = r.error;
                out.append(d);
            }
            return out;
        },
        py::arg("scenario"), py::arg("factors") = std::vector<double>{});

    m.def(
        "dispatch",
        [](const std::filesystem::path& grid_path, const Vector& injection, const Vector& alpha, bool area_control) {
            return dispatch_dict(solve_dispatch({load_grid(grid_path), injection, alpha, area_control}));
        },
        py::arg("grid"), py::arg("injection"), py::arg("alpha"), py::arg("area_control") = false,
        "Solve the dispatch problem for a grid file and a total injection vector.");

    m.def(
        "verify",
        [](const std::filesystem::path& scenario) {
            const VerifyOutcome v = run_verification(load_scenario(scenario));
            py::dict d;
            d["dispatch"] = dispatch_dict(v.solution);
            d["error"] = v.error;
            d["pass"] = v.report.has_value() && v.report->pass;
            if (v.report) {
                d["max_p_error"] = v.report->max_p_error;
                d["max_flow_error"] = v.report->max_flow_error;
                d["max_omega"] = v.report->max_omega;
            }
            return d;
        },
        py::arg("scenario"));
}
