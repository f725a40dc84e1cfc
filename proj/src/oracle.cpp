#include "ucsim/oracle.hpp"

#include "ucsim/csv.hpp"
#include "ucsim/error.hpp"
#include "ucsim/text_format.hpp"

#include <Eigen/LU>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace ucsim {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

enum class Bound { none, lower, upper };

struct WorkingSet {
    std::vector<Bound> flow;    // per line
    std::vector<Bound> control; // per bus (only for controllable buses)
};

// Newton on the equality-constrained KKT system for a fixed working set.

// When the areas cover every bus their exports sum to zero identically, so the last
// schedule is implied by the others and is left out of the Newton system.
std::size_t covered_bus_count(const GridModel& g) {
    std::size_t n = 0;
    for (const Area& a : g.areas()) n += a.buses.size();
    return n;
}

std::size_t independent_areas(const GridModel& g) {
    const std::size_t k = g.area_count();
    return k > 0 && covered_bus_count(g) == g.bus_count() ? k - 1 : k;
}

class KktNewton {
public:
    KktNewton(const DispatchProblem& pb, const WorkingSet& ws) : pb_(pb), g_(pb.grid), ws_(ws) {
        n_ = ix(g_.bus_count());
        m_ = ix(g_.line_count());
        for (std::size_t i = 0; i < g_.bus_count(); ++i)
            if (pb_.alpha[ix(i)] > 0.0 && ws_.control[i] == Bound::none) free_p_.push_back(i);
        for (std::size_t i = 0; i < g_.bus_count(); ++i)
            if (i != g_.reference()) angles_.push_back(i);
        for (std::size_t l = 0; l < g_.line_count(); ++l)
            if (ws_.flow[l] != Bound::none) active_lines_.push_back(l);
        areas_ = pb_.area_control ? ix(independent_areas(g_)) : 0;
        o_theta_ = ix(free_p_.size());
        o_mu_ = o_theta_ + ix(angles_.size());
        o_nu_ = o_mu_ + n_;
        o_pi_ = o_nu_ + ix(active_lines_.size());
        dim_ = o_pi_ + areas_;
    }

    // Unknown vector <-> (p, theta, mu, nu, pi).
    Vector pack(const Vector& p, const Vector& theta, const Vector& mu, const Vector& nu_line, const Vector& pi) const {
        Vector u(dim_);
        for (std::size_t k = 0; k < free_p_.size(); ++k) u[ix(k)] = p[ix(free_p_[k])];
        for (std::size_t k = 0; k < angles_.size(); ++k) u[o_theta_ + ix(k)] = theta[ix(angles_[k])];
        u.segment(o_mu_, n_) = mu;
        for (std::size_t k = 0; k < active_lines_.size(); ++k) u[o_nu_ + ix(k)] = nu_line[ix(active_lines_[k])];
        u.segment(o_pi_, areas_) = pi.head(areas_);
        return u;
    }

    void unpack(const Vector& u, Vector& p, Vector& theta, Vector& mu, Vector& nu_line, Vector& pi) const {
        for (std::size_t i = 0; i < g_.bus_count(); ++i) {
            const Bus& b = g_.bus(i);
            if (!(pb_.alpha[ix(i)] > 0.0)) p[ix(i)] = 0.0;
            else if (ws_.control[i] == Bound::lower) p[ix(i)] = b.p_min;
            else if (ws_.control[i] == Bound::upper) p[ix(i)] = b.p_max;
        }
        for (std::size_t k = 0; k < free_p_.size(); ++k) p[ix(free_p_[k])] = u[ix(k)];
        for (std::size_t k = 0; k < angles_.size(); ++k) theta[ix(angles_[k])] = u[o_theta_ + ix(k)];
        mu = u.segment(o_mu_, n_);
        nu_line.setZero();
        for (std::size_t k = 0; k < active_lines_.size(); ++k) nu_line[ix(active_lines_[k])] = u[o_nu_ + ix(k)];
        pi.head(areas_) = u.segment(o_pi_, areas_);
    }

    // Residual and Jacobian at (p, theta, mu, nu, pi); nu per line is signed by its bound side.
    void evaluate(const Vector& p, const Vector& theta, const Vector& mu, const Vector& nu_line, const Vector& pi,
                  Vector& res, Matrix& jac) const {
        res = Vector::Zero(dim_);
        jac = Matrix::Zero(dim_, dim_);
        const Vector flows = line_flows(g_, theta);
        const Vector out = bus_outflows(g_, flows);
        Vector cosw(m_), sinw(m_), w(m_);
        for (Eigen::Index l = 0; l < m_; ++l) {
            const auto f = ix(g_.from_index(static_cast<std::size_t>(l))), t = ix(g_.to_index(static_cast<std::size_t>(l)));
            const double b = g_.line(static_cast<std::size_t>(l)).susceptance;
            cosw[l] = b * std::cos(theta[f] - theta[t]);
            sinw[l] = b * std::sin(theta[f] - theta[t]);
            w[l] = -(mu[f] - mu[t]) + line_sign(static_cast<std::size_t>(l)) * nu_line[l];
        }
        for (Eigen::Index a = 0; a < areas_; ++a)
            for (const TieLine& tie : g_.areas()[static_cast<std::size_t>(a)].ties) w[ix(tie.line)] += tie.sign * pi[a];

        std::vector<Eigen::Index> theta_col(g_.bus_count(), -1);
        for (std::size_t k = 0; k < angles_.size(); ++k) theta_col[angles_[k]] = o_theta_ + ix(k);
        std::vector<Eigen::Index> p_col(g_.bus_count(), -1);
        for (std::size_t k = 0; k < free_p_.size(); ++k) p_col[free_p_[k]] = ix(k);
        std::vector<Eigen::Index> nu_col(g_.line_count(), -1);
        for (std::size_t k = 0; k < active_lines_.size(); ++k) nu_col[active_lines_[k]] = o_nu_ + ix(k);

        // p stationarity: alpha p + mu = 0.
        for (std::size_t k = 0; k < free_p_.size(); ++k) {
            const auto i = ix(free_p_[k]);
            res[ix(k)] = pb_.alpha[i] * p[i] + mu[i];
            jac(ix(k), ix(k)) = pb_.alpha[i];
            jac(ix(k), o_mu_ + i) = 1.0;
        }
        // theta stationarity: C diag(B cos) w = 0, rows for non-reference buses.
        for (std::size_t l = 0; l < g_.line_count(); ++l) {
            const auto ll = ix(l);
            const std::size_t f = g_.from_index(l), t = g_.to_index(l);
            const Eigen::Index rf = theta_col[f], rt = theta_col[t];
            const double grad = cosw[ll] * w[ll];
            if (rf >= 0) res[rf] += grad;
            if (rt >= 0) res[rt] -= grad;
            // d/dtheta: -B sin * w on (e_f - e_t)(e_f - e_t)^T
            const double h = -sinw[ll] * w[ll];
            auto add = [&](Eigen::Index r, Eigen::Index c, double v) {
                if (r >= 0 && c >= 0) jac(r, c) += v;
            };
            add(rf, rf, h); add(rf, rt, -h); add(rt, rf, -h); add(rt, rt, h);
            // d/dmu: w depends on -(mu_f - mu_t)
            auto addmu = [&](Eigen::Index r, double sgn) {
                if (r < 0) return;
                jac(r, o_mu_ + ix(f)) += -sgn * cosw[ll];
                jac(r, o_mu_ + ix(t)) += sgn * cosw[ll];
            };
            addmu(rf, 1.0); addmu(rt, -1.0);
            if (nu_col[l] >= 0) {
                if (rf >= 0) jac(rf, nu_col[l]) += cosw[ll] * line_sign(l);
                if (rt >= 0) jac(rt, nu_col[l]) -= cosw[ll] * line_sign(l);
            }
        }
        for (Eigen::Index a = 0; a < areas_; ++a)
            for (const TieLine& tie : g_.areas()[static_cast<std::size_t>(a)].ties) {
                const std::size_t f = g_.from_index(tie.line), t = g_.to_index(tie.line);
                const double v = cosw[ix(tie.line)] * tie.sign;
                if (theta_col[f] >= 0) jac(theta_col[f], o_pi_ + a) += v;
                if (theta_col[t] >= 0) jac(theta_col[t], o_pi_ + a) -= v;
            }

        // Balance p + r - C P = 0.
        for (std::size_t i = 0; i < g_.bus_count(); ++i) {
            const Eigen::Index r = o_mu_ + ix(i);
            res[r] = p[ix(i)] + pb_.injection[ix(i)] - out[ix(i)];
            if (p_col[i] >= 0) jac(r, p_col[i]) = 1.0;
        }
        for (std::size_t l = 0; l < g_.line_count(); ++l) {
            const std::size_t f = g_.from_index(l), t = g_.to_index(l);
            const double c = cosw[ix(l)];
            // out_f += P_l, out_t -= P_l; dP/dtheta_f = c, dP/dtheta_t = -c
            auto add = [&](std::size_t bus, double sgn) {
                const Eigen::Index r = o_mu_ + ix(bus);
                if (theta_col[f] >= 0) jac(r, theta_col[f]) -= sgn * c;
                if (theta_col[t] >= 0) jac(r, theta_col[t]) += sgn * c;
            };
            add(f, 1.0);
            add(t, -1.0);
        }
        // Active flow limits, written as sign * (P - bound) = 0.
        for (std::size_t k = 0; k < active_lines_.size(); ++k) {
            const std::size_t l = active_lines_[k];
            const Line& line = g_.line(l);
            const double bound = ws_.flow[l] == Bound::upper ? line.flow_max : line.flow_min;
            const double s = line_sign(l);
            const Eigen::Index r = o_nu_ + ix(k);
            res[r] = s * (flows[ix(l)] - bound);
            const std::size_t f = g_.from_index(l), t = g_.to_index(l);
            if (theta_col[f] >= 0) jac(r, theta_col[f]) += s * cosw[ix(l)];
            if (theta_col[t] >= 0) jac(r, theta_col[t]) -= s * cosw[ix(l)];
        }
        for (Eigen::Index a = 0; a < areas_; ++a) {
            const Area& area = g_.areas()[static_cast<std::size_t>(a)];
            const Eigen::Index r = o_pi_ + a;
            double exported = 0.0;
            for (const TieLine& tie : area.ties) {
                exported += tie.sign * flows[ix(tie.line)];
                const std::size_t f = g_.from_index(tie.line), t = g_.to_index(tie.line);
                if (theta_col[f] >= 0) jac(r, theta_col[f]) += tie.sign * cosw[ix(tie.line)];
                if (theta_col[t] >= 0) jac(r, theta_col[t]) -= tie.sign * cosw[ix(tie.line)];
            }
            res[r] = exported - area.schedule;
        }
    }

    double line_sign(std::size_t l) const { return ws_.flow[l] == Bound::lower ? -1.0 : 1.0; }
    Eigen::Index dim() const { return dim_; }

private:
    const DispatchProblem& pb_;
    const GridModel& g_;
    const WorkingSet& ws_;
    Eigen::Index n_ = 0, m_ = 0, areas_ = 0;
    std::vector<std::size_t> free_p_, angles_, active_lines_;
    Eigen::Index o_theta_ = 0, o_mu_ = 0, o_nu_ = 0, o_pi_ = 0, dim_ = 0;
};

struct Iterate {
    Vector p, theta, mu, nu, pi;
};

// Returns false when the Newton iteration fails (singular or no convergence).
bool newton_solve(const DispatchProblem& pb, const WorkingSet& ws, Iterate& it, const DispatchOptions& opt, int& count,
                  std::string& why) {
    KktNewton kkt(pb, ws);
    Vector u = kkt.pack(it.p, it.theta, it.mu, it.nu, it.pi);
    Vector res;
    Matrix jac;
    for (int k = 0; k < opt.max_newton; ++k) {
        kkt.unpack(u, it.p, it.theta, it.mu, it.nu, it.pi);
        kkt.evaluate(it.p, it.theta, it.mu, it.nu, it.pi, res, jac);
        ++count;
        if (!res.allFinite()) {
            why = "non-finite KKT residual";
            return false;
        }
        if (res.size() == 0 || res.cwiseAbs().maxCoeff() <= opt.tolerance) return true;
        Eigen::FullPivLU<Matrix> lu(jac);
        if (!lu.isInvertible()) {
            why = "singular KKT system (redundant active constraints)";
            return false;
        }
        u -= lu.solve(res);
    }
    kkt.unpack(u, it.p, it.theta, it.mu, it.nu, it.pi);
    kkt.evaluate(it.p, it.theta, it.mu, it.nu, it.pi, res, jac);
    if (res.cwiseAbs().maxCoeff() <= opt.tolerance) return true;
    why = "Newton iteration did not converge";
    return false;
}

std::string describe_flow(const GridModel& g, std::size_t l, Bound b) {
    return "line " + g.line_name(l) + (b == Bound::upper ? " at Pmax" : " at Pmin");
}

std::string describe_control(const GridModel& g, std::size_t i, Bound b) {
    return "bus " + std::to_string(g.bus(i).id) + (b == Bound::upper ? " at pmax" : " at pmin");
}

} // namespace

DispatchProblem DispatchProblem::from(const GridModel& grid, const ControllerConfig& config,
                                      const Disturbance& disturbance) {
    DispatchProblem pb{grid, grid.nominal_injections() + disturbance.final_delta(grid), config.effective_alpha(grid),
                       config.area_control};
    return pb;
}

std::string_view to_string(DispatchStatus s) {
    switch (s) {
    case DispatchStatus::optimal: return "optimal";
    case DispatchStatus::infeasible: return "infeasible";
    case DispatchStatus::not_converged: return "not-converged";
    }
    return "?";
}

DispatchSolution solve_dispatch(const DispatchProblem& pb, const DispatchOptions& opt) {
    const GridModel& g = pb.grid;
    const auto n = ix(g.bus_count());
    const auto m = ix(g.line_count());
    if (pb.injection.size() != n || pb.alpha.size() != n) throw ValidationError("dispatch: vector sizes do not match the grid");
    if (!pb.injection.allFinite() || !pb.alpha.allFinite()) throw ValidationError("dispatch: non-finite problem data");

    DispatchSolution sol;
    sol.p = Vector::Zero(n);
    sol.flow_upper_multiplier = Vector::Zero(m);
    sol.flow_lower_multiplier = Vector::Zero(m);
    sol.control_upper_multiplier = Vector::Zero(n);
    sol.control_lower_multiplier = Vector::Zero(n);
    sol.area_multiplier = Vector::Zero(ix(g.area_count()));

    // Aggregate balance check: sum p = -sum r must be reachable within the control limits.
    double lo = 0.0, hi = 0.0;
    for (std::size_t i = 0; i < g.bus_count(); ++i)
        if (pb.alpha[ix(i)] > 0.0) {
            lo += g.bus(i).p_min;
            hi += g.bus(i).p_max;
        }
    const double need = -pb.injection.sum();
    if (need < lo - opt.tolerance || need > hi + opt.tolerance) {
        sol.status = DispatchStatus::infeasible;
        sol.message = "power balance: total control " + format_number(need) + " outside [" + format_number(lo) + ", " +
                      format_number(hi) + "]";
        return sol;
    }

    if (pb.area_control && g.area_count() > 0 && covered_bus_count(g) == g.bus_count()) {
        double total = 0.0;
        for (const Area& a : g.areas()) total += a.schedule;
        if (std::abs(total) > opt.tolerance) {
            sol.status = DispatchStatus::infeasible;
            sol.message = "area schedules sum to " + format_number(total) + " but the areas cover the whole grid";
            return sol;
        }
    }

    Iterate it;
    it.p = Vector::Zero(n);
    it.theta = solve_equilibrium(g, g.nominal_injections()).angles;
    it.mu = Vector::Zero(n);
    it.nu = Vector::Zero(m);
    it.pi = Vector::Zero(ix(g.area_count()));

    WorkingSet ws{std::vector<Bound>(g.line_count(), Bound::none), std::vector<Bound>(g.bus_count(), Bound::none)};
    const double act_tol = 1e-9;

    for (int change = 0; change <= opt.max_active_set_changes; ++change) {
        std::string why;
        Iterate trial = it;
        if (!newton_solve(pb, ws, trial, opt, sol.iterations, why)) {
            sol.status = DispatchStatus::not_converged;
            sol.message = why;
            // Report the most violated constraint of the last good iterate.
            sol.p = it.p;
            sol.theta = it.theta;
            sol.flows = line_flows(g, it.theta);
            double worst = 0.0;
            std::string name;
            for (std::size_t l = 0; l < g.line_count(); ++l) {
                const double v = std::max(sol.flows[ix(l)] - g.line(l).flow_max, g.line(l).flow_min - sol.flows[ix(l)]);
                if (v > worst) {
                    worst = v;
                    name = "line " + g.line_name(l);
                }
            }
            if (!name.empty()) {
                sol.status = DispatchStatus::infeasible;
                sol.message += "; most violated: " + name + " by " + format_number(worst);
            }
            return sol;
        }
        it = trial;
        const Vector flows = line_flows(g, it.theta);

        // Primal: add the most violated inactive constraint.
        double worst = act_tol;
        int kind = 0;
        std::size_t which = 0;
        Bound side = Bound::none;
        for (std::size_t l = 0; l < g.line_count(); ++l) {
            if (ws.flow[l] != Bound::none) continue;
            const double up = flows[ix(l)] - g.line(l).flow_max, dn = g.line(l).flow_min - flows[ix(l)];
            if (up > worst) { worst = up; kind = 1; which = l; side = Bound::upper; }
            if (dn > worst) { worst = dn; kind = 1; which = l; side = Bound::lower; }
        }
        for (std::size_t i = 0; i < g.bus_count(); ++i) {
            if (!(pb.alpha[ix(i)] > 0.0) || ws.control[i] != Bound::none) continue;
            const double up = it.p[ix(i)] - g.bus(i).p_max, dn = g.bus(i).p_min - it.p[ix(i)];
            if (up > worst) { worst = up; kind = 2; which = i; side = Bound::upper; }
            if (dn > worst) { worst = dn; kind = 2; which = i; side = Bound::lower; }
        }
        if (kind == 1) { ws.flow[which] = side; it.nu[ix(which)] = 0.0; continue; }
        if (kind == 2) { ws.control[which] = side; continue; }

        // Dual: drop the most negative multiplier of the working set.
        double most = -act_tol;
        kind = 0;
        for (std::size_t l = 0; l < g.line_count(); ++l)
            if (ws.flow[l] != Bound::none && it.nu[ix(l)] < most) { most = it.nu[ix(l)]; kind = 1; which = l; }
        for (std::size_t i = 0; i < g.bus_count(); ++i) {
            if (ws.control[i] == Bound::none) continue;
            const double grad = pb.alpha[ix(i)] * it.p[ix(i)] + it.mu[ix(i)];
            const double eta = ws.control[i] == Bound::upper ? -grad : grad;
            if (eta < most) { most = eta; kind = 2; which = i; }
        }
        if (kind == 1) { ws.flow[which] = Bound::none; it.nu[ix(which)] = 0.0; continue; }
        if (kind == 2) { ws.control[which] = Bound::none; continue; }

        // Optimal for this working set.
        sol.p = it.p;
        sol.theta = it.theta;
        sol.flows = flows;
        sol.balance_multiplier = it.mu;
        sol.area_multiplier = it.pi;
        for (std::size_t l = 0; l < g.line_count(); ++l) {
            if (ws.flow[l] == Bound::upper) sol.flow_upper_multiplier[ix(l)] = it.nu[ix(l)];
            if (ws.flow[l] == Bound::lower) sol.flow_lower_multiplier[ix(l)] = it.nu[ix(l)];
            if (ws.flow[l] != Bound::none) sol.active.push_back(describe_flow(g, l, ws.flow[l]));
        }
        for (std::size_t i = 0; i < g.bus_count(); ++i) {
            const double grad = pb.alpha[ix(i)] * it.p[ix(i)] + it.mu[ix(i)];
            if (ws.control[i] == Bound::upper) sol.control_upper_multiplier[ix(i)] = -grad;
            if (ws.control[i] == Bound::lower) sol.control_lower_multiplier[ix(i)] = grad;
            if (ws.control[i] != Bound::none) sol.active.push_back(describe_control(g, i, ws.control[i]));
        }
        sol.objective = 0.0;
        for (std::size_t i = 0; i < g.bus_count(); ++i)
            if (pb.alpha[ix(i)] > 0.0) sol.objective += 0.5 * pb.alpha[ix(i)] * sol.p[ix(i)] * sol.p[ix(i)];

        for (std::size_t l = 0; l < g.line_count(); ++l) {
            const double d = sol.theta[ix(g.from_index(l))] - sol.theta[ix(g.to_index(l))];
            if (std::abs(d) >= std::numbers::pi / 2) {
                sol.status = DispatchStatus::not_converged;
                sol.message = "angle difference on line " + g.line_name(l) + " leaves (-pi/2, pi/2)";
                return sol;
            }
        }
        sol.status = DispatchStatus::optimal;
        return sol;
    }
    sol.status = DispatchStatus::not_converged;
    sol.message = "active-set iteration cap reached";
    return sol;
}

double KktResiduals::max() const {
    return std::max({stationarity, primal, bounds, dual, complementarity});
}

KktResiduals kkt_residuals(const DispatchProblem& pb, const DispatchSolution& s) {
    const GridModel& g = pb.grid;
    KktResiduals r;
    const Vector flows = line_flows(g, s.theta);
    const Vector out = bus_outflows(g, flows);
    for (std::size_t i = 0; i < g.bus_count(); ++i) {
        const auto ii = ix(i);
        r.primal = std::max(r.primal, std::abs(s.p[ii] + pb.injection[ii] - out[ii]));
        if (pb.alpha[ii] > 0.0) {
            const double st = pb.alpha[ii] * s.p[ii] + s.balance_multiplier[ii] + s.control_upper_multiplier[ii] -
                              s.control_lower_multiplier[ii];
            r.stationarity = std::max(r.stationarity, std::abs(st));
            r.bounds = std::max({r.bounds, s.p[ii] - g.bus(i).p_max, g.bus(i).p_min - s.p[ii]});
            r.complementarity = std::max({r.complementarity,
                                          std::abs(s.control_upper_multiplier[ii] * (s.p[ii] - g.bus(i).p_max)),
                                          std::abs(s.control_lower_multiplier[ii] * (g.bus(i).p_min - s.p[ii]))});
        } else {
            r.primal = std::max(r.primal, std::abs(s.p[ii]));
        }
        r.dual = std::max({r.dual, -s.control_upper_multiplier[ii], -s.control_lower_multiplier[ii]});
    }
    // Angle stationarity over every bus (the reference row holds automatically when the others do).
    Vector w(ix(g.line_count()));
    for (std::size_t l = 0; l < g.line_count(); ++l) {
        const auto f = ix(g.from_index(l)), t = ix(g.to_index(l));
        w[ix(l)] = -(s.balance_multiplier[f] - s.balance_multiplier[t]) + s.flow_upper_multiplier[ix(l)] -
                   s.flow_lower_multiplier[ix(l)];
    }
    if (pb.area_control)
        for (std::size_t a = 0; a < g.area_count(); ++a) {
            double exported = 0.0;
            for (const TieLine& tie : g.areas()[a].ties) {
                w[ix(tie.line)] += tie.sign * s.area_multiplier[ix(a)];
                exported += tie.sign * flows[ix(tie.line)];
            }
            r.primal = std::max(r.primal, std::abs(exported - g.areas()[a].schedule));
        }
    for (std::size_t l = 0; l < g.line_count(); ++l) {
        const auto f = ix(g.from_index(l)), t = ix(g.to_index(l));
        w[ix(l)] *= g.line(l).susceptance * std::cos(s.theta[f] - s.theta[t]);
    }
    r.stationarity = std::max(r.stationarity, bus_outflows(g, w).cwiseAbs().maxCoeff());
    for (std::size_t l = 0; l < g.line_count(); ++l) {
        const auto ll = ix(l);
        const Line& line = g.line(l);
        r.primal = std::max(r.primal, std::abs(s.flows[ll] - flows[ll]));
        r.bounds = std::max({r.bounds, flows[ll] - line.flow_max, line.flow_min - flows[ll]});
        r.dual = std::max({r.dual, -s.flow_upper_multiplier[ll], -s.flow_lower_multiplier[ll]});
        r.complementarity = std::max({r.complementarity, std::abs(s.flow_upper_multiplier[ll] * (flows[ll] - line.flow_max)),
                                      std::abs(s.flow_lower_multiplier[ll] * (line.flow_min - flows[ll]))});
    }
    r.bounds = std::max(r.bounds, 0.0);
    r.dual = std::max(r.dual, 0.0);
    return r;
}

double grid_search_objective(const DispatchProblem& pb, double resolution) {
    const GridModel& g = pb.grid;
    if (g.line_count() + 1 != g.bus_count()) throw ValidationError("grid search needs a radial grid");
    if (!(resolution > 0.0)) throw ValidationError("grid search resolution must be positive");
    std::vector<std::size_t> ctl;
    for (std::size_t i = 0; i < g.bus_count(); ++i)
        if (pb.alpha[ix(i)] > 0.0) ctl.push_back(i);
    if (ctl.empty() || ctl.size() > 3) throw ValidationError("grid search supports one to three controllable buses");

    // Tree flows from net injections: least squares is exact for a tree with balanced injections.
    Matrix c = Matrix::Zero(ix(g.bus_count()), ix(g.line_count()));
    for (std::size_t l = 0; l < g.line_count(); ++l) {
        c(ix(g.from_index(l)), ix(l)) = 1.0;
        c(ix(g.to_index(l)), ix(l)) = -1.0;
    }
    const Eigen::FullPivLU<Matrix> solver(c.transpose() * c);
    const double need = -pb.injection.sum();
    const double slack = 1e-9;

    double best = std::numeric_limits<double>::infinity();
    Vector p = Vector::Zero(ix(g.bus_count()));
    auto consider = [&] {
        const std::size_t last = ctl.back();
        double rest = need;
        for (std::size_t k = 0; k + 1 < ctl.size(); ++k) rest -= p[ix(ctl[k])];
        p[ix(last)] = rest;
        if (rest < g.bus(last).p_min - slack || rest > g.bus(last).p_max + slack) return;
        const Vector flows = solver.solve(c.transpose() * (p + pb.injection));
        for (std::size_t l = 0; l < g.line_count(); ++l) {
            const Line& line = g.line(l);
            if (flows[ix(l)] > line.flow_max + slack || flows[ix(l)] < line.flow_min - slack) return;
            if (std::abs(flows[ix(l)]) >= line.susceptance) return; // no angle realises it
        }
        double obj = 0.0;
        for (std::size_t i : ctl) obj += 0.5 * pb.alpha[ix(i)] * p[ix(i)] * p[ix(i)];
        best = std::min(best, obj);
    };
    auto steps = [&](std::size_t i) {
        return static_cast<long>(std::floor((g.bus(i).p_max - g.bus(i).p_min) / resolution + 1e-9));
    };
    auto value = [&](std::size_t i, long k) { return g.bus(i).p_min + static_cast<double>(k) * resolution; };
    if (ctl.size() == 1) consider();
    else if (ctl.size() == 2) {
        for (long a = 0; a <= steps(ctl[0]); ++a) {
            p[ix(ctl[0])] = value(ctl[0], a);
            consider();
        }
    } else {
        for (long a = 0; a <= steps(ctl[0]); ++a) {
            p[ix(ctl[0])] = value(ctl[0], a);
            for (long b = 0; b <= steps(ctl[1]); ++b) {
                p[ix(ctl[1])] = value(ctl[1], b);
                consider();
            }
        }
    }
    return best;
}

ComparisonReport verify_equilibrium(const EquilibriumSnapshot& sim, const DispatchProblem& pb,
                                    const DispatchSolution& sol, double tolerance) {
    if (!sim.settled) throw NotSettledError("simulation did not settle; equilibrium comparison is meaningless");
    if (sol.status != DispatchStatus::optimal) throw ValidationError("dispatch solution is not optimal: " + sol.message);
    ComparisonReport rep;
    rep.tolerance = tolerance;
    rep.max_p_error = (sim.p - sol.p).cwiseAbs().maxCoeff();
    rep.max_flow_error = sim.flows.size() ? (sim.flows - sol.flows).cwiseAbs().maxCoeff() : 0.0;
    rep.max_omega = sim.omega.cwiseAbs().maxCoeff();
    rep.max_multiplier_error = std::numeric_limits<double>::quiet_NaN();
    if (sim.lambda.size() == sol.balance_multiplier.size() && sim.lambda.size() > 0) {
        // Controller lambda corresponds to mu / alpha^2 at buses whose command is not at a limit.
        double worst = 0.0;
        for (std::size_t i = 0; i < pb.grid.bus_count(); ++i) {
            const auto ii = ix(i);
            const double a = pb.alpha[ii];
            if (!(a > 0.0) || sol.control_upper_multiplier[ii] > 0.0 || sol.control_lower_multiplier[ii] > 0.0) continue;
            if (sol.p[ii] <= pb.grid.bus(i).p_min || sol.p[ii] >= pb.grid.bus(i).p_max) continue;
            worst = std::max(worst, std::abs(sim.lambda[ii] - sol.balance_multiplier[ii] / (a * a)));
        }
        rep.max_multiplier_error = worst;
    }
    rep.pass = rep.max_p_error <= tolerance && rep.max_flow_error <= tolerance && rep.max_omega <= tolerance;
    return rep;
}

std::string write_dispatch(const GridModel& g, const DispatchSolution& s) {
    std::string out = "[dispatch]\n";
    out += "status = " + std::string(to_string(s.status)) + "\n";
    out += "objective = " + format_number(s.objective) + "\n";
    out += "iterations = " + std::to_string(s.iterations) + "\n";
    if (!s.message.empty()) out += "message = " + s.message + "\n";
    if (s.status == DispatchStatus::optimal) {
        out += "\n[bus]\n";
        for (std::size_t i = 0; i < g.bus_count(); ++i) {
            const auto ii = ix(i);
            out += "id=" + std::to_string(g.bus(i).id) + " p=" + format_number(s.p[ii]) + " theta=" + format_number(s.theta[ii]) +
                   " mu=" + format_number(s.balance_multiplier[ii]) + " eta_upper=" + format_number(s.control_upper_multiplier[ii]) +
                   " eta_lower=" + format_number(s.control_lower_multiplier[ii]) + "\n";
        }
        out += "\n[line]\n";
        for (std::size_t l = 0; l < g.line_count(); ++l) {
            const auto ll = ix(l);
            out += "from=" + std::to_string(g.line(l).from) + " to=" + std::to_string(g.line(l).to) +
                   " flow=" + format_number(s.flows[ll]) + " nu_upper=" + format_number(s.flow_upper_multiplier[ll]) +
                   " nu_lower=" + format_number(s.flow_lower_multiplier[ll]) + "\n";
        }
        if (g.area_count()) {
            out += "\n[area]\n";
            for (std::size_t a = 0; a < g.area_count(); ++a)
                out += "id=" + std::to_string(g.areas()[a].id) + " pi=" + format_number(s.area_multiplier[ix(a)]) + "\n";
        }
    }
    return out;
}

DispatchSolution parse_dispatch(const GridModel& g, std::string_view text, const std::string& source) {
    using namespace text;
    const Document doc = parse(text, source);
    const Section* head = doc.section("dispatch");
    if (!head) throw ParseError(source, 1, "missing [dispatch] section");
    check_keys(doc, *head, {"status", "objective", "iterations", "message"});
    DispatchSolution s;
    const Assignment* st = head->find("status");
    if (!st) throw ParseError(source, head->line, "missing status");
    if (st->value == "optimal") s.status = DispatchStatus::optimal;
    else if (st->value == "infeasible") s.status = DispatchStatus::infeasible;
    else if (st->value == "not-converged") s.status = DispatchStatus::not_converged;
    else throw ParseError(source, st->line, "unknown status '" + st->value + "'");
    if (auto a = head->find("objective")) s.objective = to_double(doc, a->line, a->key, a->value);
    if (auto a = head->find("iterations")) s.iterations = static_cast<int>(to_integer(doc, a->line, a->key, a->value));
    if (auto a = head->find("message")) s.message = a->value;

    const auto n = ix(g.bus_count()), m = ix(g.line_count());
    s.p = Vector::Zero(n);
    s.theta = Vector::Zero(n);
    s.balance_multiplier = Vector::Zero(n);
    s.control_upper_multiplier = Vector::Zero(n);
    s.control_lower_multiplier = Vector::Zero(n);
    s.flows = Vector::Zero(m);
    s.flow_upper_multiplier = Vector::Zero(m);
    s.flow_lower_multiplier = Vector::Zero(m);
    s.area_multiplier = Vector::Zero(ix(g.area_count()));
    if (const Section* sec = doc.section("bus"))
        for (const Record& r : sec->records) {
            check_keys(doc, r, {"id", "p", "theta", "mu", "eta_upper", "eta_lower"});
            const auto i = ix(g.bus_index(static_cast<int>(require_integer(doc, r, "id"))));
            s.p[i] = require_double(doc, r, "p");
            s.theta[i] = require_double(doc, r, "theta");
            s.balance_multiplier[i] = require_double(doc, r, "mu");
            s.control_upper_multiplier[i] = require_double(doc, r, "eta_upper");
            s.control_lower_multiplier[i] = require_double(doc, r, "eta_lower");
        }
    if (const Section* sec = doc.section("line"))
        for (const Record& r : sec->records) {
            check_keys(doc, r, {"from", "to", "flow", "nu_upper", "nu_lower"});
            const auto l = ix(g.line_index(static_cast<int>(require_integer(doc, r, "from")),
                                           static_cast<int>(require_integer(doc, r, "to"))));
            s.flows[l] = require_double(doc, r, "flow");
            s.flow_upper_multiplier[l] = require_double(doc, r, "nu_upper");
            s.flow_lower_multiplier[l] = require_double(doc, r, "nu_lower");
        }
    if (const Section* sec = doc.section("area"))
        for (const Record& r : sec->records) {
            check_keys(doc, r, {"id", "pi"});
            const int id = static_cast<int>(require_integer(doc, r, "id"));
            for (std::size_t a = 0; a < g.area_count(); ++a)
                if (g.areas()[a].id == id) s.area_multiplier[ix(a)] = require_double(doc, r, "pi");
        }
    return s;
}

} // namespace ucsim
