#pragma once

#include "ucsim/closed_loop.hpp"
#include "ucsim/grid.hpp"

#include <filesystem>
#include <string>

namespace testing {

inline std::filesystem::path data_dir() { return UCSIM_TEST_DATA_DIR; }
inline std::filesystem::path grid_file(const std::string& name) { return data_dir() / "grids" / (name + ".grid"); }
inline std::filesystem::path scenario_file(const std::string& name) { return data_dir() / "scenarios" / (name + ".scn"); }

inline ucsim::GridModel two_bus() { return ucsim::load_grid(grid_file("two_bus")); }
inline ucsim::GridModel ne39() { return ucsim::load_grid(grid_file("ne39")); }

// Three buses in two areas; gives the area multiplier and tie-line code paths something to do.
inline ucsim::GridModel three_bus_areas() {
    return ucsim::parse_grid(R"(
reference = 1
[bus]
id=1 kind=gen M=8 D=1 Tt=0.3 Tg=0.1 pmin=-2 pmax=2 alpha=5 injection=0.6
id=2 kind=load D=1.5 pmin=-1 pmax=1 alpha=5 injection=-0.9
id=3 kind=gen M=6 D=1 Tt=0.4 Tg=0.2 pmin=-2 pmax=2 alpha=5 injection=0.3
[line]
from=1 to=2 B=12 Pmin=-2 Pmax=2
from=2 to=3 B=9 Pmin=-2 Pmax=2
from=1 to=3 B=7 Pmin=-2 Pmax=2
[area]
id=1 schedule=0.1 buses=1,2
id=2 schedule=-0.1 buses=3
)",
                             "three_bus");
}

inline double rel_inf_error(const ucsim::Matrix& a, const ucsim::Matrix& b) {
    const double scale = a.cwiseAbs().rowwise().sum().maxCoeff();
    return (a - b).cwiseAbs().rowwise().sum().maxCoeff() / (scale > 0.0 ? scale : 1.0);
}

} // namespace testing

#include "ucsim/stability.hpp"

#include <random>

namespace testing {

// Pre-disturbance equilibrium pushed off in every coordinate. Multipliers are made strictly
// positive so each projection sits on a smooth branch; angle offsets stay small enough that
// no command lands on a clipping kink.
inline ucsim::Vector perturbed_state(const ucsim::ClosedLoop& sys, unsigned seed) {
    using ucsim::Vector;
    const auto& L = sys.layout();
    Vector x = sys.initial_state();
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> pos(0.01, 0.1);
    auto jitter = [&](Eigen::Index at, Eigen::Index count, double size) {
        for (Eigen::Index i = 0; i < count; ++i) x[at + i] += size * u(rng);
    };
    jitter(L.theta, L.n, 2e-3);
    jitter(L.omega, L.g, 5e-3);
    jitter(L.mech, L.g, 0.05);
    jitter(L.valve, L.g, 0.05);
    jitter(L.lambda, L.n, 5e-3);
    jitter(L.phi, L.n, 2e-3);
    for (Eigen::Index l = 0; l < L.m; ++l) {
        x[L.rho_upper + l] = pos(rng);
        x[L.rho_lower + l] = pos(rng);
    }
    jitter(L.pi, L.areas, 0.01);
    jitter(L.emu_mech, L.g, 0.05);
    jitter(L.emu_valve, L.g, 0.05);
    jitter(L.agc, L.agc_areas, 0.05);
    return x;
}

// Relative infinity-norm gap between the analytic Jacobian at x and central differences.
inline double jacobian_mismatch(const ucsim::ClosedLoop& sys, const ucsim::Vector& x, bool at_equilibrium) {
    ucsim::LinearizeOptions opts;
    opts.require_equilibrium = at_equilibrium;
    const ucsim::LinearModel model = ucsim::linearize(sys, x, nullptr, opts);
    const ucsim::Matrix fd =
        ucsim::finite_difference_jacobian(ucsim::reduced_rhs(sys, model), ucsim::reduce_state(model, x), 1e-6);
    return rel_inf_error(model.a, fd);
}

inline ucsim::ControllerConfig with_kind(const ucsim::GridModel& g, ucsim::ControllerKind kind, bool areas) {
    ucsim::ControllerConfig cfg = ucsim::ControllerConfig::defaults(g, kind);
    cfg.area_control = areas;
    return cfg;
}

} // namespace testing

namespace testing {
inline ucsim::GridModel four_bus_grid() { return ucsim::load_grid(grid_file("four_bus")); }
} // namespace testing
