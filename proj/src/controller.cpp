#include "ucsim/controller.hpp"

#include "ucsim/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ucsim {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

void check_size(const Vector& v, std::size_t n, const char* what) {
    if (static_cast<std::size_t>(v.size()) != n)
        throw ValidationError(std::string("controller config: ") + what + " has " + std::to_string(v.size()) +
                              " entries, expected " + std::to_string(n));
}

void check_positive(const Vector& v, const char* what) {
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (!(v[i] > 0.0) || !std::isfinite(v[i]))
            throw ValidationError(std::string("controller config: ") + what + " must be finite and > 0");
}

// Area index per bus for the AGC integrators; every bus maps to area 0 when none are declared.
std::vector<int> agc_area_of(const GridModel& grid) {
    std::vector<int> owner(grid.bus_count(), grid.area_count() == 0 ? 0 : -1);
    for (std::size_t k = 0; k < grid.area_count(); ++k)
        for (std::size_t b : grid.areas()[k].buses) owner[b] = static_cast<int>(k);
    return owner;
}

} // namespace

std::string_view to_string(ControllerKind kind) {
    switch (kind) {
    case ControllerKind::unified: return "uc";
    case ControllerKind::decoupled: return "duc";
    case ControllerKind::agc: return "agc";
    case ControllerKind::droop: return "droop";
    }
    return "?";
}

ControllerKind parse_controller_kind(std::string_view name) {
    if (name == "uc" || name == "unified") return ControllerKind::unified;
    if (name == "duc" || name == "decoupled") return ControllerKind::decoupled;
    if (name == "agc") return ControllerKind::agc;
    if (name == "droop") return ControllerKind::droop;
    throw ValidationError("unknown controller kind '" + std::string(name) + "'");
}

ControllerConfig ControllerConfig::defaults(const GridModel& grid, ControllerKind kind) {
    const auto n = ix(grid.bus_count());
    const auto m = ix(grid.line_count());
    const auto g = ix(grid.generator_count());
    ControllerConfig c;
    c.kind = kind;
    c.k_lambda = Vector::Ones(n);
    c.k_phi = Vector::Ones(n);
    c.k_rho_upper = Vector::Ones(m);
    c.k_rho_lower = Vector::Ones(m);
    c.k_pi = Vector::Ones(ix(grid.area_count()));
    c.alpha.resize(n);
    for (std::size_t i = 0; i < grid.bus_count(); ++i) c.alpha[ix(i)] = grid.bus(i).alpha;
    c.emulator_turbine_time.resize(g);
    c.emulator_governor_time.resize(g);
    for (std::size_t k = 0; k < grid.generator_count(); ++k) {
        const Bus& b = grid.bus(grid.generators()[k]);
        c.emulator_turbine_time[ix(k)] = b.turbine_time;
        c.emulator_governor_time[ix(k)] = b.governor_time;
    }
    c.participation = Vector::Zero(g);
    const auto owner = agc_area_of(grid);
    const std::size_t areas = agc_area_count(grid);
    std::vector<int> count(areas, 0);
    for (std::size_t gi : grid.generators())
        if (owner[gi] >= 0) ++count[static_cast<std::size_t>(owner[gi])];
    for (std::size_t k = 0; k < grid.generator_count(); ++k) {
        int a = owner[grid.generators()[k]];
        if (a >= 0) c.participation[ix(k)] = 1.0 / count[static_cast<std::size_t>(a)];
    }
    return c;
}

void ControllerConfig::validate(const GridModel& grid) const {
    check_size(k_lambda, grid.bus_count(), "k_lambda");
    check_size(k_phi, grid.bus_count(), "k_phi");
    check_size(alpha, grid.bus_count(), "alpha");
    check_size(k_rho_upper, grid.line_count(), "k_rho_upper");
    check_size(k_rho_lower, grid.line_count(), "k_rho_lower");
    check_size(k_pi, grid.area_count(), "k_pi");
    check_size(emulator_turbine_time, grid.generator_count(), "emulator turbine time");
    check_size(emulator_governor_time, grid.generator_count(), "emulator governor time");
    check_size(participation, grid.generator_count(), "participation");
    check_positive(k_lambda, "k_lambda");
    check_positive(k_phi, "k_phi");
    check_positive(k_rho_upper, "k_rho_upper");
    check_positive(k_rho_lower, "k_rho_lower");
    check_positive(k_pi, "k_pi");
    check_positive(alpha, "alpha");
    check_positive(emulator_turbine_time, "emulator turbine time");
    check_positive(emulator_governor_time, "emulator governor time");
    if (!(agc_gain > 0.0) || !std::isfinite(agc_gain)) throw ValidationError("controller config: agc_gain must be > 0");
    if (kind == ControllerKind::agc) {
        const auto owner = agc_area_of(grid);
        std::vector<double> sum(agc_area_count(grid), 0.0);
        std::vector<bool> has_gen(sum.size(), false);
        for (std::size_t k = 0; k < grid.generator_count(); ++k) {
            if (participation[ix(k)] < 0.0) throw ValidationError("controller config: participation factors must be >= 0");
            int a = owner[grid.generators()[k]];
            if (a < 0) continue;
            sum[static_cast<std::size_t>(a)] += participation[ix(k)];
            has_gen[static_cast<std::size_t>(a)] = true;
        }
        for (std::size_t a = 0; a < sum.size(); ++a)
            if (has_gen[a] && std::abs(sum[a] - 1.0) > 1e-9)
                throw ValidationError("controller config: participation factors of an area must sum to 1");
    }
}

Vector ControllerConfig::effective_alpha(const GridModel& grid) const {
    Vector a = alpha;
    if (!load_side_control)
        for (std::size_t i : grid.loads()) a[ix(i)] = 0.0;
    return a;
}

ControllerState ControllerState::initial(const GridModel& grid, const Vector& theta, const Vector& command) {
    const auto n = ix(grid.bus_count());
    const auto m = ix(grid.line_count());
    const auto g = ix(grid.generator_count());
    ControllerState s;
    s.lambda = Vector::Zero(n);
    s.phi = theta;
    s.rho_upper = Vector::Zero(m);
    s.rho_lower = Vector::Zero(m);
    s.pi = Vector::Zero(ix(grid.area_count()));
    s.emu_mech.resize(g);
    for (std::size_t k = 0; k < grid.generator_count(); ++k) s.emu_mech[ix(k)] = command[ix(grid.generators()[k])];
    s.emu_valve = s.emu_mech;
    s.agc = Vector::Zero(ix(agc_area_count(grid)));
    return s;
}

Vector virtual_flows(const GridModel& grid, const Vector& phi) { return line_flows(grid, phi); }

double control_command(double alpha, double omega, double lambda, double lo, double hi) noexcept {
    return std::clamp(-alpha * (omega + lambda), lo, hi);
}

Vector primal_dual_commands(const GridModel& grid, const ControllerConfig& cfg, const Vector& omega, const Vector& lambda) {
    Vector p(ix(grid.bus_count()));
    for (std::size_t i = 0; i < grid.bus_count(); ++i) {
        const Bus& b = grid.bus(i);
        if (!b.is_generator() && !cfg.load_side_control) {
            p[ix(i)] = 0.0;
            continue;
        }
        p[ix(i)] = control_command(cfg.alpha[ix(i)], omega[ix(i)], lambda[ix(i)], b.p_min, b.p_max);
    }
    return p;
}

namespace {

// Shared part of both primal-dual controllers: phi, rho and pi dynamics plus
// the lambda bracket without the decoupling terms.
ControllerDerivative primal_dual_common(const GridModel& grid, const ControllerConfig& cfg, const Measurements& meas,
                                        const ControllerState& st, const Vector& virt) {
    const std::size_t n = grid.bus_count();
    const std::size_t m = grid.line_count();
    ControllerDerivative d;

    const Vector virt_out = bus_outflows(grid, virt);
    const Vector phys_out = bus_outflows(grid, meas.flows);

    d.lambda.resize(ix(n));
    for (std::size_t i = 0; i < n; ++i) {
        const Bus& b = grid.bus(i);
        double bracket = b.damping * meas.omega[ix(i)] + phys_out[ix(i)] - virt_out[ix(i)];
        if (b.is_generator()) bracket += meas.net_power[ix(grid.generator_slot(i))];
        d.lambda[ix(i)] = cfg.k_lambda[ix(i)] * bracket;
    }

    // Line quantity lambda_i - lambda_j - rho+ + rho- - sum_k sign * pi_k, weighted by B.
    Vector line_term(ix(m));
    for (std::size_t l = 0; l < m; ++l) {
        double y = st.lambda[ix(grid.from_index(l))] - st.lambda[ix(grid.to_index(l))];
        if (cfg.congestion_management) y += -st.rho_upper[ix(l)] + st.rho_lower[ix(l)];
        line_term[ix(l)] = y;
    }
    if (cfg.area_control) {
        for (std::size_t k = 0; k < grid.area_count(); ++k)
            for (const TieLine& tie : grid.areas()[k].ties) line_term[ix(tie.line)] -= tie.sign * st.pi[ix(k)];
    }
    for (std::size_t l = 0; l < m; ++l) line_term[ix(l)] *= grid.line(l).susceptance;
    d.phi = bus_outflows(grid, line_term).cwiseProduct(cfg.k_phi);

    d.rho_upper = Vector::Zero(ix(m));
    d.rho_lower = Vector::Zero(ix(m));
    if (cfg.congestion_management) {
        for (std::size_t l = 0; l < m; ++l) {
            const Line& line = grid.line(l);
            d.rho_upper[ix(l)] = cfg.k_rho_upper[ix(l)] * project(virt[ix(l)] - line.flow_max, st.rho_upper[ix(l)]);
            d.rho_lower[ix(l)] = cfg.k_rho_lower[ix(l)] * project(line.flow_min - virt[ix(l)], st.rho_lower[ix(l)]);
        }
    }

    d.pi = Vector::Zero(ix(grid.area_count()));
    if (cfg.area_control) {
        for (std::size_t k = 0; k < grid.area_count(); ++k) {
            const Area& a = grid.areas()[k];
            double exported = 0.0;
            for (const TieLine& tie : a.ties) exported += tie.sign * virt[ix(tie.line)];
            d.pi[ix(k)] = cfg.k_pi[ix(k)] * (exported - a.schedule);
        }
    }

    d.emu_mech = Vector::Zero(ix(grid.generator_count()));
    d.emu_valve = Vector::Zero(ix(grid.generator_count()));
    d.agc = Vector::Zero(st.agc.size());
    return d;
}

} // namespace

ControllerDerivative uc_rhs(const GridModel& grid, const ControllerConfig& cfg, const Measurements& meas,
                            const ControllerState& state) {
    const Vector virt = virtual_flows(grid, state.phi);
    return primal_dual_common(grid, cfg, meas, state, virt);
}

ControllerDerivative duc_rhs(const GridModel& grid, const ControllerConfig& cfg, const Measurements& meas,
                             const ControllerState& state) {
    const Vector virt = virtual_flows(grid, state.phi);
    ControllerDerivative d = primal_dual_common(grid, cfg, meas, state, virt);
    const Vector alpha = cfg.effective_alpha(grid);

    for (std::size_t i = 0; i < grid.bus_count(); ++i) {
        const auto ii = ix(i);
        const std::size_t slot = grid.generator_slot(i);
        double extra = -alpha[ii] * state.lambda[ii];
        extra -= grid.bus(i).is_generator() ? state.emu_mech[ix(slot)] : meas.command[ii];
        d.lambda[ii] += cfg.k_lambda[ii] * extra;
    }
    for (std::size_t k = 0; k < grid.generator_count(); ++k) {
        const auto kk = ix(k);
        d.emu_mech[kk] = (-state.emu_mech[kk] + state.emu_valve[kk]) / cfg.emulator_turbine_time[kk];
        d.emu_valve[kk] = (-state.emu_valve[kk] + meas.command[ix(grid.generators()[k])]) / cfg.emulator_governor_time[kk];
    }
    return d;
}

Vector estimate_disturbance(const GridModel& grid, const Measurements& meas, EstimateSide side) {
    const Vector out = bus_outflows(grid, meas.flows);
    if (side == EstimateSide::load) {
        Vector r(ix(grid.load_count()));
        for (std::size_t k = 0; k < grid.load_count(); ++k) {
            const auto i = ix(grid.loads()[k]);
            r[ix(k)] = grid.bus(grid.loads()[k]).damping * meas.omega[i] + out[i] - meas.command[i];
        }
        return r;
    }
    Vector r(ix(grid.generator_count()));
    for (std::size_t k = 0; k < grid.generator_count(); ++k) {
        const auto i = ix(grid.generators()[k]);
        r[ix(k)] = meas.net_power[ix(k)] + grid.bus(grid.generators()[k]).damping * meas.omega[i] + out[i];
    }
    return r;
}

std::size_t agc_area_count(const GridModel& grid) { return std::max<std::size_t>(grid.area_count(), 1); }

Vector agc_bias(const GridModel& grid, const ControllerConfig& cfg) {
    Vector b(ix(grid.bus_count()));
    for (std::size_t i = 0; i < grid.bus_count(); ++i)
        b[ix(i)] = grid.bus(i).damping + (grid.bus(i).is_generator() ? cfg.alpha[ix(i)] : 0.0);
    return b;
}

AgcOutput agc_rhs(const GridModel& grid, const ControllerConfig& cfg, const Vector& omega, const Vector& flows,
                  const Vector& agc_state) {
    const auto owner = agc_area_of(grid);
    const Vector bias = agc_bias(grid, cfg);
    AgcOutput out;
    out.integral_rate = Vector::Zero(ix(agc_area_count(grid)));
    for (std::size_t i = 0; i < grid.bus_count(); ++i)
        if (owner[i] >= 0) out.integral_rate[owner[i]] += bias[ix(i)] * omega[ix(i)];
    if (cfg.area_control) {
        for (std::size_t k = 0; k < grid.area_count(); ++k) {
            const Area& a = grid.areas()[k];
            double exported = 0.0;
            for (const TieLine& tie : a.ties) exported += tie.sign * flows[ix(tie.line)];
            out.integral_rate[ix(k)] += exported - a.schedule;
        }
    }
    out.integral_rate *= -cfg.agc_gain;

    out.command = Vector::Zero(ix(grid.bus_count()));
    for (std::size_t k = 0; k < grid.generator_count(); ++k) {
        const std::size_t i = grid.generators()[k];
        const Bus& b = grid.bus(i);
        double p = -cfg.alpha[ix(i)] * omega[ix(i)];
        if (owner[i] >= 0) p += cfg.participation[ix(k)] * agc_state[owner[i]];
        out.command[ix(i)] = std::clamp(p, b.p_min, b.p_max);
    }
    return out;
}

Vector droop_commands(const GridModel& grid, const ControllerConfig& cfg, const Vector& omega) {
    Vector p = Vector::Zero(ix(grid.bus_count()));
    for (std::size_t i : grid.generators()) {
        const Bus& b = grid.bus(i);
        p[ix(i)] = std::clamp(-cfg.alpha[ix(i)] * omega[ix(i)], b.p_min, b.p_max);
    }
    return p;
}

} // namespace ucsim
