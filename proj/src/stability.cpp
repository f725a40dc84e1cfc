#include "ucsim/stability.hpp"

#include "ucsim/error.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <limits>

namespace ucsim {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

// Area owner per bus for the AGC integrators (all buses share integrator 0 without areas).
std::vector<int> agc_owner(const GridModel& grid) {
    std::vector<int> owner(grid.bus_count(), grid.area_count() == 0 ? 0 : -1);
    for (std::size_t k = 0; k < grid.area_count(); ++k)
        for (std::size_t b : grid.areas()[k].buses) owner[b] = static_cast<int>(k);
    return owner;
}

// Unclipped command per bus; NaN where the bus has no command.
Vector raw_commands(const ClosedLoop& sys, const Evaluation& e) {
    const GridModel& grid = sys.grid();
    const ControllerConfig& cfg = sys.config();
    const Vector alpha = cfg.effective_alpha(grid);
    const auto owner = agc_owner(grid);
    Vector u = Vector::Constant(ix(grid.bus_count()), std::numeric_limits<double>::quiet_NaN());
    for (std::size_t i = 0; i < grid.bus_count(); ++i) {
        const double w = e.plant.omega[ix(i)];
        const bool gen = grid.bus(i).is_generator();
        switch (cfg.kind) {
        case ControllerKind::unified:
        case ControllerKind::decoupled:
            if (alpha[ix(i)] > 0.0) u[ix(i)] = -alpha[ix(i)] * (w + e.control.lambda[ix(i)]);
            break;
        case ControllerKind::agc:
            if (gen) {
                u[ix(i)] = -cfg.alpha[ix(i)] * w;
                if (owner[i] >= 0)
                    u[ix(i)] += cfg.participation[ix(grid.generator_slot(i))] * e.control.agc[owner[i]];
            }
            break;
        case ControllerKind::droop:
            if (gen) u[ix(i)] = -cfg.alpha[ix(i)] * w;
            break;
        }
    }
    return u;
}

// Weighted Laplacian C diag(B cos(x_f - x_t)) C^T.
Matrix laplacian(const GridModel& grid, const Vector& angle) {
    const auto n = ix(grid.bus_count());
    Matrix lap = Matrix::Zero(n, n);
    for (std::size_t l = 0; l < grid.line_count(); ++l) {
        const auto f = ix(grid.from_index(l)), t = ix(grid.to_index(l));
        const double w = grid.line(l).susceptance * std::cos(angle[f] - angle[t]);
        lap(f, f) += w;
        lap(t, t) += w;
        lap(f, t) -= w;
        lap(t, f) -= w;
    }
    return lap;
}

struct Assembly {
    const ClosedLoop& sys;
    const ActiveSet& act;
    const Evaluation& e;
    StateLayout L;
    Eigen::Index ext; // first algebraic (load omega) index
    std::vector<Eigen::Index> load_slot;
    Matrix j;

    Assembly(const ClosedLoop& s, const ActiveSet& a, const Evaluation& ev)
        : sys(s), act(a), e(ev), L(s.layout()), ext(s.layout().size),
          load_slot(s.grid().bus_count(), -1) {
        const GridModel& grid = sys.grid();
        for (std::size_t k = 0; k < grid.load_count(); ++k) load_slot[grid.loads()[k]] = ix(k);
        const auto dim = ext + ix(grid.load_count());
        j = Matrix::Zero(dim, dim);
    }

    Eigen::Index omega_col(std::size_t bus) const {
        const GridModel& grid = sys.grid();
        if (grid.bus(bus).is_generator()) return L.omega + ix(grid.generator_slot(bus));
        return ext + load_slot[bus];
    }

    // Adds scale * d(command_bus)/d(state) to row r.
    void add_command(Eigen::Index r, std::size_t bus, double scale) {
        const GridModel& grid = sys.grid();
        const ControllerConfig& cfg = sys.config();
        if (!act.command_free[bus]) return;
        const auto b = ix(bus);
        switch (cfg.kind) {
        case ControllerKind::unified:
        case ControllerKind::decoupled: {
            const double a = cfg.effective_alpha(grid)[b];
            if (a <= 0.0) return;
            j(r, omega_col(bus)) += -a * scale;
            j(r, L.lambda + b) += -a * scale;
            return;
        }
        case ControllerKind::agc: {
            if (!grid.bus(bus).is_generator()) return;
            j(r, omega_col(bus)) += -cfg.alpha[b] * scale;
            const int owner = agc_owner(grid)[bus];
            if (owner >= 0) j(r, L.agc + owner) += cfg.participation[ix(grid.generator_slot(bus))] * scale;
            return;
        }
        case ControllerKind::droop:
            if (grid.bus(bus).is_generator()) j(r, omega_col(bus)) += -cfg.alpha[b] * scale;
            return;
        }
    }

    void build() {
        const GridModel& grid = sys.grid();
        const ControllerConfig& cfg = sys.config();
        const auto n = ix(grid.bus_count());
        const Matrix lap_theta = laplacian(grid, e.plant.theta);
        const Matrix lap_phi = laplacian(grid, e.control.phi);
        const bool second = sys.turbine() == TurbineModel::second_order;

        for (std::size_t i = 0; i < grid.bus_count(); ++i) j(L.theta + ix(i), omega_col(i)) = 1.0;

        for (std::size_t k = 0; k < grid.generator_count(); ++k) {
            const std::size_t i = grid.generators()[k];
            const Bus& b = grid.bus(i);
            const auto kk = ix(k);
            const Eigen::Index rw = L.omega + kk;
            j.block(rw, L.theta, 1, n) = -lap_theta.row(ix(i)) / b.inertia;
            j(rw, rw) += -b.damping / b.inertia;
            j(rw, L.mech + kk) += 1.0 / b.inertia;
            const Eigen::Index rm = L.mech + kk;
            j(rm, rm) = -1.0 / b.turbine_time;
            if (second) {
                j(rm, L.valve + kk) = 1.0 / b.turbine_time;
                const Eigen::Index rv = L.valve + kk;
                j(rv, rv) = -1.0 / b.governor_time;
                add_command(rv, i, 1.0 / b.governor_time);
            } else {
                add_command(rm, i, 1.0 / b.turbine_time);
            }
        }

        for (std::size_t k = 0; k < grid.load_count(); ++k) {
            const std::size_t i = grid.loads()[k];
            const Eigen::Index r = ext + ix(k);
            j.block(r, L.theta, 1, n) = -lap_theta.row(ix(i));
            j(r, r) += -grid.bus(i).damping;
            add_command(r, i, 1.0);
        }

        if (cfg.uses_primal_dual()) build_primal_dual(lap_theta, lap_phi);
        if (cfg.kind == ControllerKind::agc) build_agc(lap_theta);
    }

    void build_primal_dual(const Matrix& lap_theta, const Matrix& lap_phi) {
        const GridModel& grid = sys.grid();
        const ControllerConfig& cfg = sys.config();
        const auto n = ix(grid.bus_count());
        const bool duc = cfg.kind == ControllerKind::decoupled;
        const Vector alpha = cfg.effective_alpha(grid);

        for (std::size_t i = 0; i < grid.bus_count(); ++i) {
            const auto ii = ix(i);
            const Eigen::Index r = L.lambda + ii;
            const double k = cfg.k_lambda[ii];
            // Generator bracket reduces to p^M + r - sum P^; loads keep D w + sum P - sum P^.
            j.block(r, L.phi, 1, n) = -k * lap_phi.row(ii);
            if (grid.bus(i).is_generator()) {
                const auto slot = ix(grid.generator_slot(i));
                j(r, L.mech + slot) += k;
                if (duc) {
                    j(r, r) += -k * alpha[ii];
                    j(r, L.emu_mech + slot) += -k;
                }
            } else {
                j.block(r, L.theta, 1, n) += k * lap_theta.row(ii);
                j(r, omega_col(i)) += k * grid.bus(i).damping;
                if (duc) {
                    j(r, r) += -k * alpha[ii];
                    add_command(r, i, -k);
                }
            }
        }

        for (std::size_t l = 0; l < grid.line_count(); ++l) {
            const auto f = grid.from_index(l), t = grid.to_index(l);
            const double bl = grid.line(l).susceptance;
            // y_l contributions, then phi_i += K_phi_i * c_il * B_l * y_l.
            std::vector<std::pair<Eigen::Index, double>> y = {{L.lambda + ix(f), 1.0}, {L.lambda + ix(t), -1.0}};
            if (cfg.congestion_management) {
                y.emplace_back(L.rho_upper + ix(l), -1.0);
                y.emplace_back(L.rho_lower + ix(l), 1.0);
            }
            if (cfg.area_control)
                for (std::size_t a = 0; a < grid.area_count(); ++a)
                    for (const TieLine& tie : grid.areas()[a].ties)
                        if (tie.line == l) y.emplace_back(L.pi + ix(a), -static_cast<double>(tie.sign));
            for (const auto& [col, v] : y) {
                j(L.phi + ix(f), col) += cfg.k_phi[ix(f)] * bl * v;
                j(L.phi + ix(t), col) -= cfg.k_phi[ix(t)] * bl * v;
            }

            const double g = bl * std::cos(e.control.phi[ix(f)] - e.control.phi[ix(t)]);
            if (cfg.congestion_management) {
                if (act.rho_upper[l]) {
                    j(L.rho_upper + ix(l), L.phi + ix(f)) += cfg.k_rho_upper[ix(l)] * g;
                    j(L.rho_upper + ix(l), L.phi + ix(t)) -= cfg.k_rho_upper[ix(l)] * g;
                }
                if (act.rho_lower[l]) {
                    j(L.rho_lower + ix(l), L.phi + ix(f)) -= cfg.k_rho_lower[ix(l)] * g;
                    j(L.rho_lower + ix(l), L.phi + ix(t)) += cfg.k_rho_lower[ix(l)] * g;
                }
            }
        }

        if (cfg.area_control) {
            for (std::size_t a = 0; a < grid.area_count(); ++a)
                for (const TieLine& tie : grid.areas()[a].ties) {
                    const auto f = ix(grid.from_index(tie.line)), t = ix(grid.to_index(tie.line));
                    const double g = grid.line(tie.line).susceptance * std::cos(e.control.phi[f] - e.control.phi[t]);
                    j(L.pi + ix(a), L.phi + f) += cfg.k_pi[ix(a)] * tie.sign * g;
                    j(L.pi + ix(a), L.phi + t) -= cfg.k_pi[ix(a)] * tie.sign * g;
                }
        }

        if (duc) {
            for (std::size_t k = 0; k < grid.generator_count(); ++k) {
                const auto kk = ix(k);
                const double tt = cfg.emulator_turbine_time[kk], tg = cfg.emulator_governor_time[kk];
                j(L.emu_mech + kk, L.emu_mech + kk) = -1.0 / tt;
                j(L.emu_mech + kk, L.emu_valve + kk) = 1.0 / tt;
                j(L.emu_valve + kk, L.emu_valve + kk) = -1.0 / tg;
                add_command(L.emu_valve + kk, grid.generators()[k], 1.0 / tg);
            }
        }
    }

    void build_agc(const Matrix& lap_theta) {
        const GridModel& grid = sys.grid();
        const ControllerConfig& cfg = sys.config();
        const auto owner = agc_owner(grid);
        const Vector bias = agc_bias(grid, cfg);
        for (std::size_t i = 0; i < grid.bus_count(); ++i)
            if (owner[i] >= 0) j(L.agc + owner[i], omega_col(i)) += -cfg.agc_gain * bias[ix(i)];
        if (!cfg.area_control) return;
        (void)lap_theta;
        for (std::size_t a = 0; a < grid.area_count(); ++a)
            for (const TieLine& tie : grid.areas()[a].ties) {
                const auto f = ix(grid.from_index(tie.line)), t = ix(grid.to_index(tie.line));
                const double g = grid.line(tie.line).susceptance * std::cos(e.plant.theta[f] - e.plant.theta[t]);
                j(L.agc + ix(a), L.theta + f) += -cfg.agc_gain * tie.sign * g;
                j(L.agc + ix(a), L.theta + t) -= -cfg.agc_gain * tie.sign * g;
            }
    }
};

} // namespace

ActiveSet ActiveSet::at(const ClosedLoop& system, const Vector& x, double t) {
    const GridModel& grid = system.grid();
    const ControllerConfig& cfg = system.config();
    const Evaluation e = system.evaluate(t, x);
    ActiveSet s;
    s.rho_upper.assign(grid.line_count(), false);
    s.rho_lower.assign(grid.line_count(), false);
    if (cfg.uses_primal_dual() && cfg.congestion_management) {
        for (std::size_t l = 0; l < grid.line_count(); ++l) {
            const Line& line = grid.line(l);
            const double vf = e.virtual_flows[ix(l)];
            s.rho_upper[l] = e.control.rho_upper[ix(l)] > 0.0 || vf - line.flow_max >= 0.0;
            s.rho_lower[l] = e.control.rho_lower[ix(l)] > 0.0 || line.flow_min - vf >= 0.0;
        }
    }
    const Vector u = raw_commands(system, e);
    s.command_free.assign(grid.bus_count(), false);
    for (std::size_t i = 0; i < grid.bus_count(); ++i) {
        const Bus& b = grid.bus(i);
        s.command_free[i] = !std::isnan(u[ix(i)]) && u[ix(i)] > b.p_min && u[ix(i)] < b.p_max;
    }
    return s;
}

LinearModel linearize(const ClosedLoop& system, const Vector& equilibrium, const ActiveSet* active,
                      const LinearizeOptions& options) {
    const GridModel& grid = system.grid();
    const ControllerConfig& cfg = system.config();
    const StateLayout& L = system.layout();
    if (equilibrium.size() != L.size) throw ValidationError("linearize: state has the wrong dimension");

    const ActiveSet own = active ? ActiveSet{} : ActiveSet::at(system, equilibrium, options.time);
    const ActiveSet& act = active ? *active : own;
    if (act.rho_upper.size() != grid.line_count() || act.rho_lower.size() != grid.line_count() ||
        act.command_free.size() != grid.bus_count())
        throw ValidationError("linearize: active set does not match the grid");

    const Evaluation e = system.evaluate(options.time, equilibrium);

    LinearModel model;
    model.equilibrium = equilibrium;
    model.theta_reference = L.theta + ix(grid.reference());
    if (cfg.uses_primal_dual()) model.phi_reference = L.phi + ix(grid.reference());

    auto keep = [&](Eigen::Index start, Eigen::Index count, Eigen::Index skip = -1) {
        for (Eigen::Index i = start; i < start + count; ++i)
            if (i != skip) model.states.push_back(i);
    };
    keep(L.theta, L.n, model.theta_reference);
    keep(L.omega, L.g);
    keep(L.mech, L.g);
    if (system.turbine() == TurbineModel::second_order) keep(L.valve, L.g);
    if (cfg.uses_primal_dual()) {
        keep(L.lambda, L.n);
        keep(L.phi, L.n, model.phi_reference);
        if (cfg.congestion_management) {
            for (std::size_t l = 0; l < grid.line_count(); ++l)
                if (act.rho_upper[l]) model.states.push_back(L.rho_upper + ix(l));
            for (std::size_t l = 0; l < grid.line_count(); ++l)
                if (act.rho_lower[l]) model.states.push_back(L.rho_lower + ix(l));
        }
        if (cfg.area_control) keep(L.pi, L.areas);
        if (cfg.kind == ControllerKind::decoupled) {
            keep(L.emu_mech, L.g);
            keep(L.emu_valve, L.g);
        }
    }
    if (cfg.kind == ControllerKind::agc) keep(L.agc, L.agc_areas);
    for (auto s : model.states) {
        Eigen::Index ref = -1;
        if (s >= L.theta && s < L.theta + L.n) ref = model.theta_reference;
        else if (s >= L.phi && s < L.phi + L.n && model.phi_reference >= 0) ref = model.phi_reference;
        model.row_reference.push_back(ref);
    }

    // Residual in the reduced coordinates.
    const Vector z_dot = [&] {
        Vector r(ix(model.states.size()));
        for (std::size_t k = 0; k < model.states.size(); ++k) {
            const auto s = model.states[k];
            const auto ref = model.row_reference[k];
            r[ix(k)] = e.derivative[s] - (ref >= 0 ? e.derivative[ref] : 0.0);
        }
        return r;
    }();
    const double residual = z_dot.size() ? z_dot.cwiseAbs().maxCoeff() : 0.0;
    if (options.require_equilibrium && !(residual <= options.residual_tolerance))
        throw ValidationError("linearize: state is not an equilibrium (residual " + std::to_string(residual) + ")");

    Assembly as(system, act, e);
    as.build();

    // Eliminate the load balance: A = J_xx - J_xy J_yy^-1 J_yx with J_yy diagonal.
    const Eigen::Index nl = ix(grid.load_count());
    Matrix full = as.j.topLeftCorner(L.size, L.size);
    if (nl > 0) {
        Vector inv(nl);
        for (Eigen::Index k = 0; k < nl; ++k) {
            const double d = as.j(L.size + k, L.size + k);
            if (!(std::abs(d) > 1e-12))
                throw NumericError("linearize: singular load-bus elimination at bus " +
                                   std::to_string(grid.bus(grid.loads()[static_cast<std::size_t>(k)]).id));
            inv[k] = 1.0 / d;
        }
        full -= as.j.topRightCorner(L.size, nl) * inv.asDiagonal() * as.j.bottomLeftCorner(nl, L.size);
    }

    const auto dim = ix(model.states.size());
    model.a.resize(dim, dim);
    for (Eigen::Index r = 0; r < dim; ++r) {
        const auto s = model.states[static_cast<std::size_t>(r)];
        for (Eigen::Index c = 0; c < dim; ++c) {
            const auto col = model.states[static_cast<std::size_t>(c)];
            double v = full(s, col);
            const auto ref = model.row_reference[static_cast<std::size_t>(r)];
            if (ref >= 0) v -= full(ref, col);
            model.a(r, c) = v;
        }
        model.labels.push_back(system.label(s));
    }
    return model;
}

Vector reduce_state(const LinearModel& model, const Vector& x) {
    Vector z(ix(model.states.size()));
    for (std::size_t k = 0; k < model.states.size(); ++k) {
        const auto ref = model.row_reference[k];
        z[ix(k)] = x[model.states[k]] - (ref >= 0 ? x[ref] : 0.0);
    }
    return z;
}

std::function<Vector(const Vector&)> reduced_rhs(const ClosedLoop& system, const LinearModel& model, double t) {
    return [&system, model, t](const Vector& z) {
        // Grounded entries stay at their equilibrium values.
        Vector x = model.equilibrium;
        for (std::size_t k = 0; k < model.states.size(); ++k) {
            const auto ref = model.row_reference[k];
            x[model.states[k]] = z[ix(k)] + (ref >= 0 ? model.equilibrium[ref] : 0.0);
        }
        const Vector f = system.derivative(t, x);
        Vector r(ix(model.states.size()));
        for (std::size_t k = 0; k < model.states.size(); ++k) {
            const auto ref = model.row_reference[k];
            r[ix(k)] = f[model.states[k]] - (ref >= 0 ? f[ref] : 0.0);
        }
        return r;
    };
}

Matrix finite_difference_jacobian(const std::function<Vector(const Vector&)>& f, const Vector& z, double step) {
    const Vector f0 = f(z);
    Matrix jac(f0.size(), z.size());
    Vector zp = z, zm = z;
    for (Eigen::Index c = 0; c < z.size(); ++c) {
        zp[c] = z[c] + step;
        zm[c] = z[c] - step;
        jac.col(c) = (f(zp) - f(zm)) / (2.0 * step);
        zp[c] = zm[c] = z[c];
    }
    return jac;
}

std::string_view to_string(Stability s) {
    switch (s) {
    case Stability::stable: return "stable";
    case Stability::marginal: return "marginal";
    case Stability::unstable: return "unstable";
    }
    return "?";
}

EigenReport eigenvalues(const Matrix& a, double tolerance) {
    if (a.rows() != a.cols()) throw ValidationError("eigenvalues: matrix must be square");
    if (!a.allFinite()) throw NumericError("eigenvalues: matrix has non-finite entries");
    EigenReport rep;
    rep.tolerance = tolerance;
    rep.abscissa = -std::numeric_limits<double>::infinity();
    if (a.rows() > 0) {
        Eigen::EigenSolver<Matrix> solver(a, false);
        if (solver.info() != Eigen::Success) throw NumericError("eigenvalues: eigensolver did not converge");
        const auto& ev = solver.eigenvalues();
        for (Eigen::Index i = 0; i < ev.size(); ++i) rep.values.push_back(ev[i]);
    }
    std::sort(rep.values.begin(), rep.values.end(), [](const auto& x, const auto& y) {
        return x.real() != y.real() ? x.real() > y.real() : x.imag() > y.imag();
    });
    for (const auto& v : rep.values) {
        rep.abscissa = std::max(rep.abscissa, v.real());
        if (v.real() > tolerance) ++rep.unstable_count;
    }
    if (rep.abscissa > tolerance) rep.classification = Stability::unstable;
    else if (std::abs(rep.abscissa) <= tolerance) rep.classification = Stability::marginal;
    else rep.classification = Stability::stable;
    return rep;
}

double conjugate_closure_error(const std::vector<std::complex<double>>& values) {
    double worst = 0.0;
    for (const auto& v : values) {
        if (v.imag() == 0.0) continue;
        double best = std::numeric_limits<double>::infinity();
        for (const auto& w : values) best = std::min(best, std::abs(w - std::conj(v)));
        worst = std::max(worst, best);
    }
    return worst;
}

ControllerConfig scale_gains(const ControllerConfig& base, double factor, const GainScaling& which) {
    if (!(factor > 0.0) || !std::isfinite(factor)) throw ValidationError("gain scale must be positive");
    ControllerConfig c = base;
    if (which.lambda) c.k_lambda *= factor;
    if (which.phi) c.k_phi *= factor;
    if (which.rho) {
        c.k_rho_upper *= factor;
        c.k_rho_lower *= factor;
    }
    if (which.pi) c.k_pi *= factor;
    return c;
}

std::vector<SweepPoint> gain_sweep(const GridModel& grid, const ControllerConfig& base, TurbineModel turbine,
                                   const std::vector<double>& scales, const GainScaling& which) {
    std::vector<SweepPoint> out;
    for (double s : scales) {
        if (!(s > 0.0)) throw ValidationError("gain sweep: scales must be positive");
        SweepPoint p;
        p.scale = s;
        try {
            ClosedLoop sys(grid, scale_gains(base, s, which), turbine);
            const Vector x = sys.initial_state();
            p.abscissa = eigenvalues(linearize(sys, x)).abscissa;
        } catch (const Error& err) {
            p.abscissa = std::numeric_limits<double>::quiet_NaN();
            p.error = err.what();
        }
        out.push_back(std::move(p));
    }
    return out;
}

} // namespace ucsim
