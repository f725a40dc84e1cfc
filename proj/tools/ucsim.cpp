// ucsim: time-domain runs, eigen-studies, robustness sweeps and oracle checks.
//
// Exit codes: 0 completed, 2 invalid input, 3 numerical abort.

#include "ucsim/csv.hpp"
#include "ucsim/error.hpp"
#include "ucsim/scenario.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <iostream>

namespace {

constexpr int exit_ok = 0;
constexpr int exit_invalid = 2;
constexpr int exit_numeric = 3;

std::string num(double v) { return ucsim::format_number(v); }

int cmd_run(const std::string& file, std::string output) {
    const ucsim::Scenario sc = ucsim::load_scenario(file);
    const ucsim::RunResult r = ucsim::run_scenario(sc);
    if (output.empty()) output = sc.name + ".csv";
    std::string csv = ucsim::to_csv(r.table());
    if (r.aborted) csv += "# aborted: " + r.error + "\n";
    ucsim::write_file_atomic(output, csv);

    std::cout << "scenario " << sc.name << " (" << ucsim::to_string(sc.controller.kind) << ", "
              << ucsim::to_string(sc.turbine) << ")\n";
    std::cout << "output " << output << " rows=" << r.times.size() << "\n";
    std::cout << "settled=" << (r.settled ? "true" : "false") << " settling_time=" << num(r.settling_time)
              << " final_max_omega=" << num(r.final_max_omega) << "\n";
    if (r.monitor) std::cout << "monitor " << sc.monitor << " overshoot=" << num(r.monitor->overshoot)
                             << " settling_time=" << num(r.monitor->settling_time) << "\n";
    if (r.oscillation) std::cout << "oscillation " << sc.oscillation.signal << " oscillating="
                                 << (r.oscillation->oscillating ? "true" : "false") << " ratio=" << num(r.oscillation->ratio)
                                 << " amplitude=" << num(r.oscillation->amplitude) << "\n";
    if (r.aborted) {
        std::cerr << "error: " << r.error << "\n";
        return exit_numeric;
    }
    return exit_ok;
}

int cmd_eigen(const std::string& file, const std::string& out_dir) {
    const ucsim::Scenario sc = ucsim::load_scenario(file);
    const auto entries = ucsim::run_eigen_study(sc, out_dir);
    const std::string summary = ucsim::eigen_summary(entries);
    ucsim::write_file_atomic(std::filesystem::path(out_dir) / (sc.name + "_summary.csv"), summary);
    std::cout << summary;
    return exit_ok;
}

int cmd_sweep(const std::string& file, std::vector<double> factors, std::string output) {
    const ucsim::Scenario sc = ucsim::load_scenario(file);
    if (factors.empty()) factors = sc.sweep_factors;
    const auto rows = ucsim::run_robustness_sweep(sc, factors);
    const std::string csv = ucsim::to_csv(ucsim::sweep_table(rows));
    if (output.empty()) output = sc.name + "_sweep.csv";
    ucsim::write_file_atomic(output, csv);
    std::cout << csv;
    for (const auto& r : rows)
        if (!r.error.empty()) std::cerr << "factor " << num(r.factor) << ": " << r.error << "\n";
    return exit_ok;
}

int cmd_verify(const std::string& file, std::string output) {
    const ucsim::Scenario sc = ucsim::load_scenario(file);
    const ucsim::VerifyOutcome v = ucsim::run_verification(sc);
    if (output.empty()) output = sc.name + "_dispatch.txt";
    ucsim::write_file_atomic(output, ucsim::write_dispatch(sc.grid, v.solution));
    std::cout << "dispatch " << ucsim::to_string(v.solution.status) << " objective=" << num(v.solution.objective) << "\n";
    for (const auto& a : v.solution.active) std::cout << "active " << a << "\n";
    if (v.run.aborted) {
        std::cerr << "error: " << v.error << "\n";
        return exit_numeric;
    }
    if (!v.report) {
        std::cout << "verify FAIL " << v.error << "\n";
        return exit_ok;
    }
    const auto& r = *v.report;
    std::cout << "max_p_error=" << num(r.max_p_error) << " max_flow_error=" << num(r.max_flow_error)
              << " max_omega=" << num(r.max_omega) << " max_multiplier_error=" << num(r.max_multiplier_error) << "\n";
    std::cout << "verify " << (r.pass ? "PASS" : "FAIL") << " tolerance=" << num(r.tolerance) << "\n";
    return exit_ok;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Unified and decoupled frequency/congestion control simulator"};
    app.require_subcommand(1);

    std::string scenario, output, out_dir = ".";
    std::vector<double> factors;

    auto* run = app.add_subcommand("run", "Integrate a scenario and write the requested series as CSV");
    run->add_option("scenario", scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    run->add_option("-o,--output", output, "CSV path (default <name>.csv)");

    auto* eigen = app.add_subcommand("eigen", "Linearize each variant and write its spectrum");
    eigen->add_option("scenario", scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    eigen->add_option("-d,--out-dir", out_dir, "Directory for the CSV files");

    auto* sweep = app.add_subcommand("sweep", "Robustness sweep over emulator time-constant errors");
    sweep->add_option("scenario", scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    sweep->add_option("--factors", factors, "Multipliers on the emulator constants")->delimiter(',');
    sweep->add_option("-o,--output", output, "CSV path (default <name>_sweep.csv)");

    auto* verify = app.add_subcommand("verify", "Compare the simulated equilibrium with the dispatch optimum");
    verify->add_option("scenario", scenario, "Scenario file")->required()->check(CLI::ExistingFile);
    verify->add_option("-o,--output", output, "Dispatch solution path (default <name>_dispatch.txt)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? exit_ok : exit_invalid;
    }

    try {
        if (*run) return cmd_run(scenario, output);
        if (*eigen) return cmd_eigen(scenario, out_dir);
        if (*sweep) return cmd_sweep(scenario, factors, output);
        if (*verify) return cmd_verify(scenario, output);
    } catch (const ucsim::NumericError& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return exit_numeric;
    } catch (const ucsim::Error& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return exit_invalid;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "invalid input: " << e.what() << "\n";
        return exit_invalid;
    }
    return exit_invalid;
}
