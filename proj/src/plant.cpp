#include "ucsim/plant.hpp"

#include "ucsim/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace ucsim {

std::string_view to_string(TurbineModel kind) {
    return kind == TurbineModel::second_order ? "second_order" : "first_order";
}

TurbineModel parse_turbine_model(std::string_view name) {
    if (name == "second_order" || name == "2") return TurbineModel::second_order;
    if (name == "first_order" || name == "1") return TurbineModel::first_order;
    throw ValidationError("unknown turbine model '" + std::string(name) + "'");
}

PhysicalState PhysicalState::zeros(const GridModel& grid) {
    const auto n = static_cast<Eigen::Index>(grid.bus_count());
    const auto g = static_cast<Eigen::Index>(grid.generator_count());
    return {Vector::Zero(n), Vector::Zero(n), Vector::Zero(g), Vector::Zero(g)};
}

Disturbance::Disturbance(std::vector<DisturbanceStep> steps) : steps_(std::move(steps)) {
    for (const auto& s : steps_) {
        if (!(s.time >= 0.0) || !std::isfinite(s.time)) throw ValidationError("disturbance time must be finite and >= 0");
        if (!std::isfinite(s.delta)) throw ValidationError("disturbance size must be finite");
    }
    // Times must be nondecreasing per bus in file order.
    for (std::size_t i = 0; i < steps_.size(); ++i)
        for (std::size_t j = i + 1; j < steps_.size(); ++j)
            if (steps_[i].bus == steps_[j].bus && steps_[j].time < steps_[i].time)
                throw ValidationError("disturbance times for a bus must be nondecreasing");
}

Vector Disturbance::injection_at(const GridModel& grid, double t) const {
    Vector r = grid.nominal_injections();
    for (const auto& s : steps_)
        if (s.time <= t) r[static_cast<Eigen::Index>(s.bus)] += s.delta;
    return r;
}

Vector Disturbance::final_delta(const GridModel& grid) const {
    Vector r = Vector::Zero(static_cast<Eigen::Index>(grid.bus_count()));
    for (const auto& s : steps_) r[static_cast<Eigen::Index>(s.bus)] += s.delta;
    return r;
}

std::vector<double> Disturbance::event_times() const {
    std::vector<double> t;
    for (const auto& s : steps_) t.push_back(s.time);
    std::sort(t.begin(), t.end());
    t.erase(std::unique(t.begin(), t.end()), t.end());
    return t;
}

Vector generator_net_power(const GridModel& grid, const PhysicalState& state, const Vector& outflow,
                           const Vector& injection) {
    const auto& gens = grid.generators();
    Vector net(static_cast<Eigen::Index>(gens.size()));
    for (std::size_t k = 0; k < gens.size(); ++k) {
        const auto i = static_cast<Eigen::Index>(gens[k]);
        const auto kk = static_cast<Eigen::Index>(k);
        net[kk] = -grid.bus(gens[k]).damping * state.omega[i] - outflow[i] + state.mech_power[kk] + injection[i];
    }
    return net;
}

PhysicalDerivative physical_rhs(const GridModel& grid, const PhysicalState& state, const Vector& command,
                                const Vector& injection, TurbineModel kind) {
    const auto n = static_cast<Eigen::Index>(grid.bus_count());
    const auto& gens = grid.generators();
    const Vector outflow = bus_outflows(grid, line_flows(grid, state.theta));
    const Vector net = generator_net_power(grid, state, outflow, injection);

    PhysicalDerivative d;
    d.theta = state.omega;
    d.omega = Vector::Zero(n);
    d.mech_power.resize(static_cast<Eigen::Index>(gens.size()));
    d.valve.resize(static_cast<Eigen::Index>(gens.size()));
    for (std::size_t k = 0; k < gens.size(); ++k) {
        const Bus& b = grid.bus(gens[k]);
        const auto i = static_cast<Eigen::Index>(gens[k]);
        const auto kk = static_cast<Eigen::Index>(k);
        d.omega[i] = net[kk] / b.inertia;
        if (kind == TurbineModel::second_order) {
            d.mech_power[kk] = (-state.mech_power[kk] + state.valve[kk]) / b.turbine_time;
            d.valve[kk] = (-state.valve[kk] + command[i]) / b.governor_time;
        } else {
            d.mech_power[kk] = (-state.mech_power[kk] + command[i]) / b.turbine_time;
            d.valve[kk] = 0.0;
        }
    }
    return d;
}

Vector solve_load_buses(const GridModel& grid, const Vector& theta, const Vector& command, const Vector& injection) {
    const auto& loads = grid.loads();
    const Vector outflow = bus_outflows(grid, line_flows(grid, theta));
    Vector w(static_cast<Eigen::Index>(loads.size()));
    for (std::size_t k = 0; k < loads.size(); ++k) {
        const Bus& b = grid.bus(loads[k]);
        if (!(b.damping > 0.0))
            throw ValidationError("bus " + std::to_string(b.id) + ": load bus needs D > 0 to solve its power balance");
        const auto i = static_cast<Eigen::Index>(loads[k]);
        w[static_cast<Eigen::Index>(k)] = (-outflow[i] + command[i] + injection[i]) / b.damping;
    }
    return w;
}

double load_balance_residual(const GridModel& grid, const PhysicalState& state, const Vector& command,
                             const Vector& injection) {
    const Vector outflow = bus_outflows(grid, line_flows(grid, state.theta));
    double worst = 0.0;
    for (std::size_t i : grid.loads()) {
        const auto ii = static_cast<Eigen::Index>(i);
        double res = -grid.bus(i).damping * state.omega[ii] - outflow[ii] + command[ii] + injection[ii];
        worst = std::max(worst, std::abs(res));
    }
    return worst;
}

} // namespace ucsim
