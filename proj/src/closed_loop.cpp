#include "ucsim/closed_loop.hpp"

#include "ucsim/error.hpp"

#include <algorithm>
#include <cmath>

namespace ucsim {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

} // namespace

StateLayout StateLayout::make(const GridModel& grid) {
    StateLayout L;
    L.n = ix(grid.bus_count());
    L.g = ix(grid.generator_count());
    L.m = ix(grid.line_count());
    L.areas = ix(grid.area_count());
    L.agc_areas = ix(agc_area_count(grid));
    Eigen::Index o = 0;
    L.theta = o; o += L.n;
    L.omega = o; o += L.g;
    L.mech = o; o += L.g;
    L.valve = o; o += L.g;
    L.lambda = o; o += L.n;
    L.phi = o; o += L.n;
    L.rho_upper = o; o += L.m;
    L.rho_lower = o; o += L.m;
    L.pi = o; o += L.areas;
    L.emu_mech = o; o += L.g;
    L.emu_valve = o; o += L.g;
    L.agc = o; o += L.agc_areas;
    L.size = o;
    return L;
}

ClosedLoop::ClosedLoop(GridModel grid, ControllerConfig config, TurbineModel turbine, Disturbance disturbance)
    : grid_(std::move(grid)), config_(std::move(config)), turbine_(turbine), disturbance_(std::move(disturbance)),
      layout_(StateLayout::make(grid_)) {
    config_.validate(grid_);
    for (std::size_t i : grid_.loads())
        if (!(grid_.bus(i).damping > 0.0))
            throw ValidationError("bus " + std::to_string(grid_.bus(i).id) +
                                  ": load bus needs D > 0 to solve its power balance");
    for (const auto& s : disturbance_.steps())
        if (s.bus >= grid_.bus_count()) throw ValidationError("disturbance refers to an unknown bus");
    alpha_eff_ = config_.effective_alpha(grid_);
}

Vector ClosedLoop::pack(const ClosedLoopState& s) const {
    const StateLayout& L = layout_;
    Vector x(L.size);
    x.segment(L.theta, L.n) = s.plant.theta;
    for (std::size_t k = 0; k < grid_.generator_count(); ++k) x[L.omega + ix(k)] = s.plant.omega[ix(grid_.generators()[k])];
    x.segment(L.mech, L.g) = s.plant.mech_power;
    x.segment(L.valve, L.g) = s.plant.valve;
    x.segment(L.lambda, L.n) = s.control.lambda;
    x.segment(L.phi, L.n) = s.control.phi;
    x.segment(L.rho_upper, L.m) = s.control.rho_upper;
    x.segment(L.rho_lower, L.m) = s.control.rho_lower;
    x.segment(L.pi, L.areas) = s.control.pi;
    x.segment(L.emu_mech, L.g) = s.control.emu_mech;
    x.segment(L.emu_valve, L.g) = s.control.emu_valve;
    x.segment(L.agc, L.agc_areas) = s.control.agc;
    return x;
}

ClosedLoopState ClosedLoop::unpack(const Vector& x, double t) const {
    Evaluation e = evaluate(t, x);
    return {std::move(e.plant), std::move(e.control)};
}

Vector ClosedLoop::initial_state() const {
    const Vector r0 = disturbance_.injection_at(grid_, -1.0);
    EquilibriumSolution eq = solve_equilibrium(grid_, r0);
    ClosedLoopState s;
    s.plant = PhysicalState::zeros(grid_);
    s.plant.theta = eq.angles;
    const Vector p0 = Vector::Zero(ix(grid_.bus_count()));
    s.control = ControllerState::initial(grid_, eq.angles, p0);
    return pack(s);
}

std::pair<Vector, Vector> ClosedLoop::resolve_loads(const Vector& theta, const Vector& lambda,
                                                    const Vector& injection) const {
    const Vector out = bus_outflows(grid_, line_flows(grid_, theta));
    const bool controlled = config_.uses_primal_dual();
    Vector w(ix(grid_.load_count())), p(ix(grid_.load_count()));
    for (std::size_t k = 0; k < grid_.load_count(); ++k) {
        const std::size_t i = grid_.loads()[k];
        const Bus& b = grid_.bus(i);
        const double a = controlled ? alpha_eff_[ix(i)] : 0.0;
        const double base = -out[ix(i)] + injection[ix(i)];
        double cmd = 0.0;
        double omega = base / b.damping;
        if (a > 0.0) {
            // D w = base + clip(-a (w + lambda)); monotone in w, so try the unclipped branch first.
            omega = (base - a * lambda[ix(i)]) / (b.damping + a);
            cmd = -a * (omega + lambda[ix(i)]);
            if (cmd > b.p_max || cmd < b.p_min) {
                cmd = std::clamp(cmd, b.p_min, b.p_max);
                omega = (base + cmd) / b.damping;
            }
        } else if (controlled) {
            cmd = std::clamp(0.0, b.p_min, b.p_max);
            omega = (base + cmd) / b.damping;
        }
        w[ix(k)] = omega;
        p[ix(k)] = cmd;
    }
    return {w, p};
}

Evaluation ClosedLoop::evaluate_at(const Vector& injection, const Vector& x) const {
    const StateLayout& L = layout_;
    const auto& gens = grid_.generators();
    if (x.size() != L.size) throw ValidationError("closed-loop state has the wrong dimension");
    Evaluation e;
    e.injection = injection;

    PhysicalState& ps = e.plant;
    ps.theta = x.segment(L.theta, L.n);
    ps.omega = Vector::Zero(L.n);
    for (std::size_t k = 0; k < gens.size(); ++k) ps.omega[ix(gens[k])] = x[L.omega + ix(k)];
    ps.mech_power = x.segment(L.mech, L.g);
    ps.valve = x.segment(L.valve, L.g);

    ControllerState& cs = e.control;
    cs.lambda = x.segment(L.lambda, L.n);
    cs.phi = x.segment(L.phi, L.n);
    cs.rho_upper = x.segment(L.rho_upper, L.m);
    cs.rho_lower = x.segment(L.rho_lower, L.m);
    cs.pi = x.segment(L.pi, L.areas);
    cs.emu_mech = x.segment(L.emu_mech, L.g);
    cs.emu_valve = x.segment(L.emu_valve, L.g);
    cs.agc = x.segment(L.agc, L.agc_areas);

    auto [w_load, p_load] = resolve_loads(ps.theta, cs.lambda, e.injection);
    for (std::size_t k = 0; k < grid_.load_count(); ++k) ps.omega[ix(grid_.loads()[k])] = w_load[ix(k)];

    e.flows = line_flows(grid_, ps.theta);
    e.command = Vector::Zero(L.n);
    Vector agc_rate = Vector::Zero(L.agc_areas);
    switch (config_.kind) {
    case ControllerKind::unified:
    case ControllerKind::decoupled:
        for (std::size_t i : gens) {
            const Bus& b = grid_.bus(i);
            e.command[ix(i)] = control_command(config_.alpha[ix(i)], ps.omega[ix(i)], cs.lambda[ix(i)], b.p_min, b.p_max);
        }
        break;
    case ControllerKind::agc: {
        AgcOutput out = agc_rhs(grid_, config_, ps.omega, e.flows, cs.agc);
        e.command = out.command;
        agc_rate = out.integral_rate;
        break;
    }
    case ControllerKind::droop:
        e.command = droop_commands(grid_, config_, ps.omega);
        break;
    }
    for (std::size_t k = 0; k < grid_.load_count(); ++k) e.command[ix(grid_.loads()[k])] = p_load[ix(k)];

    const Vector outflow = bus_outflows(grid_, e.flows);
    Measurements& meas = e.measurements;
    meas.omega = ps.omega;
    meas.flows = e.flows;
    meas.net_power = generator_net_power(grid_, ps, outflow, e.injection);
    meas.command = e.command;

    PhysicalDerivative pd = physical_rhs(grid_, ps, e.command, e.injection, turbine_);

    Vector& d = e.derivative;
    d = Vector::Zero(L.size);
    d.segment(L.theta, L.n) = pd.theta;
    for (std::size_t k = 0; k < gens.size(); ++k) d[L.omega + ix(k)] = pd.omega[ix(gens[k])];
    d.segment(L.mech, L.g) = pd.mech_power;
    d.segment(L.valve, L.g) = pd.valve;

    if (config_.uses_primal_dual()) {
        ControllerDerivative cd = config_.kind == ControllerKind::unified ? uc_rhs(grid_, config_, meas, cs)
                                                                          : duc_rhs(grid_, config_, meas, cs);
        d.segment(L.lambda, L.n) = cd.lambda;
        d.segment(L.phi, L.n) = cd.phi;
        d.segment(L.rho_upper, L.m) = cd.rho_upper;
        d.segment(L.rho_lower, L.m) = cd.rho_lower;
        d.segment(L.pi, L.areas) = cd.pi;
        d.segment(L.emu_mech, L.g) = cd.emu_mech;
        d.segment(L.emu_valve, L.g) = cd.emu_valve;
        e.virtual_flows = virtual_flows(grid_, cs.phi);
    } else {
        d.segment(L.agc, L.agc_areas) = agc_rate;
        e.virtual_flows = line_flows(grid_, cs.phi);
    }
    return e;
}

Vector ClosedLoop::step(double t, double h, const Vector& x, const Vector* k1_in) const {
    if (!(h > 0.0)) throw ValidationError("step size must be positive");
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (!std::isfinite(x[i])) throw NumericError("non-finite state at t = " + std::to_string(t) + " s: " + label(i));
    const Vector r = disturbance_.injection_at(grid_, t + 0.5 * h);
    auto f = [&](const Vector& y) { return evaluate_at(r, y).derivative; };
    const Vector k1 = k1_in ? *k1_in : f(x);
    const Vector k2 = f(x + 0.5 * h * k1);
    const Vector k3 = f(x + 0.5 * h * k2);
    const Vector k4 = f(x + h * k3);
    Vector next = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);

    const StateLayout& L = layout_;
    for (Eigen::Index l = 0; l < L.m; ++l) {
        next[L.rho_upper + l] = std::max(next[L.rho_upper + l], 0.0);
        next[L.rho_lower + l] = std::max(next[L.rho_lower + l], 0.0);
    }
    for (Eigen::Index i = 0; i < next.size(); ++i)
        if (!std::isfinite(next[i]))
            throw NumericError("non-finite state at t = " + std::to_string(t + h) + " s: " + label(i));
    return next;
}

std::string ClosedLoop::label(Eigen::Index index) const {
    const StateLayout& L = layout_;
    auto bus_id = [&](Eigen::Index i) { return std::to_string(grid_.bus(static_cast<std::size_t>(i)).id); };
    auto gen_id = [&](Eigen::Index k) { return std::to_string(grid_.bus(grid_.generators()[static_cast<std::size_t>(k)]).id); };
    auto line_id = [&](Eigen::Index l) { return grid_.line_name(static_cast<std::size_t>(l)); };
    if (index < 0 || index >= L.size) return "out-of-range";
    if (index < L.omega) return "theta[" + bus_id(index - L.theta) + "]";
    if (index < L.mech) return "omega[" + gen_id(index - L.omega) + "]";
    if (index < L.valve) return "pm[" + gen_id(index - L.mech) + "]";
    if (index < L.lambda) return "v[" + gen_id(index - L.valve) + "]";
    if (index < L.phi) return "lambda[" + bus_id(index - L.lambda) + "]";
    if (index < L.rho_upper) return "phi[" + bus_id(index - L.phi) + "]";
    if (index < L.rho_lower) return "rho_upper[" + line_id(index - L.rho_upper) + "]";
    if (index < L.pi) return "rho_lower[" + line_id(index - L.rho_lower) + "]";
    if (index < L.emu_mech) return "pi[" + std::to_string(grid_.areas()[static_cast<std::size_t>(index - L.pi)].id) + "]";
    if (index < L.emu_valve) return "pm_est[" + gen_id(index - L.emu_mech) + "]";
    if (index < L.agc) return "v_est[" + gen_id(index - L.emu_valve) + "]";
    return "agc[" + std::to_string(index - L.agc) + "]";
}

std::pair<PhysicalState, ControllerState> step(const ClosedLoop& system, const PhysicalState& plant,
                                               const ControllerState& control, double t, double h) {
    Vector x = system.pack({plant, control});
    Vector next = system.step(t, h, x);
    ClosedLoopState s = system.unpack(next, t + h);
    return {std::move(s.plant), std::move(s.control)};
}

} // namespace ucsim
