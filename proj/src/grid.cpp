#include "ucsim/grid.hpp"

#include "ucsim/error.hpp"
#include "ucsim/text_format.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <set>
#include <sstream>

namespace ucsim {

namespace {

std::string bus_label(const Bus& b) { return "bus " + std::to_string(b.id); }

std::string line_label(const Line& l) {
    return "line " + std::to_string(l.from) + "-" + std::to_string(l.to);
}

bool finite_all(std::initializer_list<double> xs) {
    return std::all_of(xs.begin(), xs.end(), [](double x) { return std::isfinite(x); });
}

std::string format_double(double x) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

} // namespace

GridModel GridModel::build(std::vector<Bus> buses, std::vector<Line> lines, std::vector<AreaSpec> areas,
                           double base_mva, std::optional<int> reference_id) {
    if (!(base_mva > 0.0)) throw ValidationError("base power must be positive");
    if (buses.empty()) throw ValidationError("grid has no buses");

    std::set<int> ids;
    for (const Bus& b : buses) {
        if (!ids.insert(b.id).second) throw ValidationError("duplicate " + bus_label(b));
        if (!finite_all({b.damping, b.p_min, b.p_max, b.alpha, b.injection}))
            throw ValidationError(bus_label(b) + ": non-finite parameter");
        if (b.damping < 0.0) throw ValidationError(bus_label(b) + ": damping D must be >= 0");
        if (!(b.alpha > 0.0)) throw ValidationError(bus_label(b) + ": alpha must be > 0");
        if (b.p_min > b.p_max) throw ValidationError(bus_label(b) + ": pmin > pmax");
        if (b.is_generator()) {
            if (!(b.inertia > 0.0)) throw ValidationError(bus_label(b) + ": inertia M must be > 0");
            if (!(b.turbine_time > 0.0)) throw ValidationError(bus_label(b) + ": turbine time constant must be > 0");
            if (!(b.governor_time > 0.0)) throw ValidationError(bus_label(b) + ": governor time constant must be > 0");
        }
    }

    std::set<std::pair<int, int>> pairs;
    for (const Line& l : lines) {
        if (!ids.count(l.from) || !ids.count(l.to))
            throw ValidationError(line_label(l) + ": endpoint is not a declared bus");
        if (l.from == l.to) throw ValidationError(line_label(l) + ": self-loop");
        if (!finite_all({l.susceptance, l.flow_min, l.flow_max}))
            throw ValidationError(line_label(l) + ": non-finite parameter");
        if (!(l.susceptance > 0.0)) throw ValidationError(line_label(l) + ": susceptance must be > 0");
        if (l.flow_min > l.flow_max) throw ValidationError(line_label(l) + ": flow min > flow max");
        auto key = std::minmax(l.from, l.to);
        if (!pairs.insert({key.first, key.second}).second)
            throw ValidationError(line_label(l) + ": parallel line (aggregate parallel lines before loading)");
    }

    GridModel g;
    g.buses_ = std::move(buses);
    g.lines_ = std::move(lines);
    g.area_specs_ = std::move(areas);
    g.base_mva_ = base_mva;
    g.reference_id_ = reference_id;
    g.index();
    return g;
}

void GridModel::index() {
    const std::size_t n = buses_.size();
    std::map<int, std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i) idx[buses_[i].id] = i;

    generators_.clear();
    loads_.clear();
    gen_slot_.assign(n, npos);
    for (std::size_t i = 0; i < n; ++i) {
        if (buses_[i].is_generator()) {
            gen_slot_[i] = generators_.size();
            generators_.push_back(i);
        } else {
            loads_.push_back(i);
        }
    }

    incidence_.assign(n, {});
    line_ends_.clear();
    for (std::size_t l = 0; l < lines_.size(); ++l) {
        std::size_t f = idx.at(lines_[l].from), t = idx.at(lines_[l].to);
        line_ends_.emplace_back(f, t);
        incidence_[f].push_back({l, 1.0});
        incidence_[t].push_back({l, -1.0});
    }

    // Connectivity by breadth-first search.
    std::vector<bool> seen(n, false);
    std::queue<std::size_t> q;
    q.push(0);
    seen[0] = true;
    std::size_t reached = 1;
    while (!q.empty()) {
        std::size_t u = q.front();
        q.pop();
        for (const auto& inc : incidence_[u]) {
            std::size_t v = line_ends_[inc.line].first == u ? line_ends_[inc.line].second : line_ends_[inc.line].first;
            if (!seen[v]) {
                seen[v] = true;
                ++reached;
                q.push(v);
            }
        }
    }
    if (reached != n) {
        for (std::size_t i = 0; i < n; ++i)
            if (!seen[i]) throw ValidationError("grid is disconnected: " + bus_label(buses_[i]) + " unreachable from " + bus_label(buses_[0]));
    }

    if (reference_id_) {
        auto it = idx.find(*reference_id_);
        if (it == idx.end()) throw ValidationError("reference bus " + std::to_string(*reference_id_) + " is not declared");
        reference_ = it->second;
    } else if (!generators_.empty()) {
        reference_ = *std::min_element(generators_.begin(), generators_.end(),
                                       [&](std::size_t a, std::size_t b) { return buses_[a].id < buses_[b].id; });
    } else {
        reference_ = std::min_element(buses_.begin(), buses_.end(), [](const Bus& a, const Bus& b) { return a.id < b.id; }) - buses_.begin();
    }

    areas_.clear();
    std::vector<int> owner(n, -1);
    for (const AreaSpec& spec : area_specs_) {
        Area a;
        a.id = spec.id;
        a.schedule = spec.schedule;
        if (!std::isfinite(spec.schedule)) throw ValidationError("area " + std::to_string(spec.id) + ": non-finite schedule");
        if (spec.buses.empty()) throw ValidationError("area " + std::to_string(spec.id) + ": no member buses");
        for (int id : spec.buses) {
            auto it = idx.find(id);
            if (it == idx.end())
                throw ValidationError("area " + std::to_string(spec.id) + ": bus " + std::to_string(id) + " is not declared");
            if (owner[it->second] != -1)
                throw ValidationError("bus " + std::to_string(id) + " belongs to more than one area");
            owner[it->second] = spec.id;
            a.buses.push_back(it->second);
        }
        for (std::size_t l = 0; l < lines_.size(); ++l) {
            bool f_in = std::find(a.buses.begin(), a.buses.end(), line_ends_[l].first) != a.buses.end();
            bool t_in = std::find(a.buses.begin(), a.buses.end(), line_ends_[l].second) != a.buses.end();
            if (f_in != t_in) a.ties.push_back({l, f_in ? 1.0 : -1.0});
        }
        areas_.push_back(std::move(a));
    }
}

std::optional<std::size_t> GridModel::find_bus(int id) const {
    for (std::size_t i = 0; i < buses_.size(); ++i)
        if (buses_[i].id == id) return i;
    return std::nullopt;
}

std::size_t GridModel::bus_index(int id) const {
    if (auto i = find_bus(id)) return *i;
    throw ValidationError("unknown bus " + std::to_string(id));
}

std::optional<std::size_t> GridModel::find_line(int from, int to) const {
    for (std::size_t l = 0; l < lines_.size(); ++l)
        if ((lines_[l].from == from && lines_[l].to == to) || (lines_[l].from == to && lines_[l].to == from)) return l;
    return std::nullopt;
}

std::size_t GridModel::line_index(int from, int to) const {
    if (auto l = find_line(from, to)) return *l;
    throw ValidationError("unknown line " + std::to_string(from) + "-" + std::to_string(to));
}

std::string GridModel::line_name(std::size_t line) const {
    const Line& l = lines_.at(line);
    return std::to_string(l.from) + "-" + std::to_string(l.to);
}

Vector GridModel::nominal_injections() const {
    Vector v(buses_.size());
    for (std::size_t i = 0; i < buses_.size(); ++i) v[i] = buses_[i].injection;
    return v;
}

Vector GridModel::susceptances() const {
    Vector v(lines_.size());
    for (std::size_t l = 0; l < lines_.size(); ++l) v[l] = lines_[l].susceptance;
    return v;
}

GridModel GridModel::with_line_limits(std::size_t line, double flow_min, double flow_max) const {
    auto lines = lines_;
    lines.at(line).flow_min = flow_min;
    lines.at(line).flow_max = flow_max;
    return build(buses_, std::move(lines), area_specs_, base_mva_, reference_id_);
}

GridModel GridModel::with_control_limits(std::size_t bus, double p_min, double p_max) const {
    auto buses = buses_;
    buses.at(bus).p_min = p_min;
    buses.at(bus).p_max = p_max;
    return build(std::move(buses), lines_, area_specs_, base_mva_, reference_id_);
}

GridModel GridModel::with_reference(std::size_t bus) const {
    return build(buses_, lines_, area_specs_, base_mva_, buses_.at(bus).id);
}

GridModel GridModel::all_generator_variant(double synthetic_inertia, double turbine_time, double governor_time) const {
    auto buses = buses_;
    for (Bus& b : buses) {
        if (b.is_generator()) continue;
        b.kind = BusKind::generator;
        b.inertia = synthetic_inertia;
        b.turbine_time = turbine_time;
        b.governor_time = governor_time;
    }
    return build(std::move(buses), lines_, area_specs_, base_mva_, reference_id_ ? reference_id_ : std::optional<int>(buses_[reference_].id));
}

// ---------------------------------------------------------------------------
// File format

GridModel parse_grid(std::string_view text, const std::string& source) {
    using namespace text;
    Document doc = parse(text, source);

    double base_mva = 100.0;
    std::optional<int> reference;
    const Section& pre = doc.sections.front();
    check_keys(doc, pre, {"base_mva", "reference", "name"});
    if (!pre.records.empty()) throw ParseError(source, pre.records.front().line, "record outside of a section");
    if (auto a = pre.find("base_mva")) base_mva = to_double(doc, a->line, a->key, a->value);
    if (auto a = pre.find("reference")) reference = static_cast<int>(to_integer(doc, a->line, a->key, a->value));

    std::vector<Bus> buses;
    std::vector<Line> lines;
    std::vector<AreaSpec> areas;

    for (const Section& sec : doc.sections) {
        if (sec.name.empty()) continue;
        if (!sec.assignments.empty())
            throw ParseError(source, sec.assignments.front().line, "assignments are not allowed in [" + sec.name + "]");
        if (sec.name == "bus") {
            for (const Record& r : sec.records) {
                check_keys(doc, r, {"id", "kind", "M", "D", "Tt", "Tg", "pmin", "pmax", "alpha", "injection"});
                Bus b;
                b.id = static_cast<int>(require_integer(doc, r, "id"));
                std::string kind = require_string(doc, r, "kind");
                if (kind == "gen" || kind == "generator") b.kind = BusKind::generator;
                else if (kind == "load") b.kind = BusKind::load;
                else throw ParseError(source, r.line, "kind must be 'gen' or 'load', got '" + kind + "'");
                b.damping = require_double(doc, r, "D");
                b.p_min = require_double(doc, r, "pmin");
                b.p_max = require_double(doc, r, "pmax");
                b.alpha = require_double(doc, r, "alpha");
                b.injection = optional_double(doc, r, "injection").value_or(0.0);
                if (b.is_generator()) {
                    b.inertia = require_double(doc, r, "M");
                    b.turbine_time = require_double(doc, r, "Tt");
                    b.governor_time = require_double(doc, r, "Tg");
                }
                buses.push_back(b);
            }
        } else if (sec.name == "line") {
            for (const Record& r : sec.records) {
                check_keys(doc, r, {"from", "to", "B", "Pmin", "Pmax"});
                Line l;
                l.from = static_cast<int>(require_integer(doc, r, "from"));
                l.to = static_cast<int>(require_integer(doc, r, "to"));
                l.susceptance = require_double(doc, r, "B");
                l.flow_min = require_double(doc, r, "Pmin");
                l.flow_max = require_double(doc, r, "Pmax");
                lines.push_back(l);
            }
        } else if (sec.name == "area") {
            for (const Record& r : sec.records) {
                check_keys(doc, r, {"id", "schedule", "buses"});
                AreaSpec a;
                a.id = static_cast<int>(require_integer(doc, r, "id"));
                a.schedule = require_double(doc, r, "schedule");
                for (const auto& item : split_list(require_string(doc, r, "buses")))
                    a.buses.push_back(static_cast<int>(to_integer(doc, r.line, "buses", item)));
                areas.push_back(std::move(a));
            }
        } else {
            throw ParseError(source, sec.line, "unknown section [" + sec.name + "]");
        }
    }
    return GridModel::build(std::move(buses), std::move(lines), std::move(areas), base_mva, reference);
}

GridModel load_grid(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError(path.string(), 0, "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_grid(ss.str(), path.string());
}

std::string write_grid(const GridModel& grid) {
    std::ostringstream out;
    out << "base_mva = " << format_double(grid.base_mva()) << "\n";
    out << "reference = " << grid.bus(grid.reference()).id << "\n\n[bus]\n";
    for (const Bus& b : grid.buses()) {
        out << "id=" << b.id << " kind=" << (b.is_generator() ? "gen" : "load");
        if (b.is_generator())
            out << " M=" << format_double(b.inertia) << " Tt=" << format_double(b.turbine_time)
                << " Tg=" << format_double(b.governor_time);
        out << " D=" << format_double(b.damping) << " pmin=" << format_double(b.p_min)
            << " pmax=" << format_double(b.p_max) << " alpha=" << format_double(b.alpha)
            << " injection=" << format_double(b.injection) << "\n";
    }
    out << "\n[line]\n";
    for (const Line& l : grid.lines())
        out << "from=" << l.from << " to=" << l.to << " B=" << format_double(l.susceptance)
            << " Pmin=" << format_double(l.flow_min) << " Pmax=" << format_double(l.flow_max) << "\n";
    if (grid.area_count() > 0) {
        out << "\n[area]\n";
        for (const Area& a : grid.areas()) {
            out << "id=" << a.id << " schedule=" << format_double(a.schedule) << " buses=";
            for (std::size_t k = 0; k < a.buses.size(); ++k) out << (k ? "," : "") << grid.bus(a.buses[k]).id;
            out << "\n";
        }
    }
    return out.str();
}

// ---------------------------------------------------------------------------
// Flows and the steady-state solve

Vector line_flows(const GridModel& grid, const Vector& theta) {
    Vector p(grid.line_count());
    for (std::size_t l = 0; l < grid.line_count(); ++l)
        p[l] = grid.line(l).susceptance * std::sin(theta[grid.from_index(l)] - theta[grid.to_index(l)]);
    return p;
}

Vector bus_outflows(const GridModel& grid, const Vector& line_values) {
    Vector out = Vector::Zero(grid.bus_count());
    for (std::size_t l = 0; l < grid.line_count(); ++l) {
        out[grid.from_index(l)] += line_values[l];
        out[grid.to_index(l)] -= line_values[l];
    }
    return out;
}

EquilibriumSolution solve_equilibrium(const GridModel& grid, const Vector& injections,
                                      std::optional<std::size_t> reference, const PowerFlowOptions& options) {
    const std::size_t n = grid.bus_count();
    if (static_cast<std::size_t>(injections.size()) != n)
        throw ValidationError("injection vector has " + std::to_string(injections.size()) + " entries, grid has " +
                              std::to_string(n) + " buses");
    const double imbalance = injections.sum();
    if (std::abs(imbalance) > options.balance_tolerance)
        throw ValidationError("injections do not balance: sum = " + format_double(imbalance) + " pu");

    const std::size_t ref = reference.value_or(grid.reference());
    std::vector<std::size_t> free;
    for (std::size_t i = 0; i < n; ++i)
        if (i != ref) free.push_back(i);
    const Eigen::Index nf = static_cast<Eigen::Index>(free.size());

    EquilibriumSolution sol;
    sol.angles = Vector::Zero(n);
    Vector mismatch(nf);
    Matrix jac(nf, nf);
    std::vector<Eigen::Index> pos(n, -1);
    for (Eigen::Index k = 0; k < nf; ++k) pos[free[k]] = k;

    for (int it = 0;; ++it) {
        Vector out = bus_outflows(grid, line_flows(grid, sol.angles));
        for (Eigen::Index k = 0; k < nf; ++k) mismatch[k] = injections[free[k]] - out[free[k]];
        sol.residual = nf > 0 ? mismatch.lpNorm<Eigen::Infinity>() : 0.0;
        sol.iterations = it;
        if (!std::isfinite(sol.residual)) throw NumericError("power flow diverged (non-finite mismatch)");
        if (sol.residual <= options.tolerance) break;
        if (it >= options.max_iterations)
            throw ConvergenceError("power flow did not converge in " + std::to_string(options.max_iterations) +
                                   " iterations (mismatch " + format_double(sol.residual) + " pu)");
        jac.setZero();
        for (std::size_t l = 0; l < grid.line_count(); ++l) {
            std::size_t f = grid.from_index(l), t = grid.to_index(l);
            double c = grid.line(l).susceptance * std::cos(sol.angles[f] - sol.angles[t]);
            Eigen::Index pf = pos[f], pt = pos[t];
            if (pf >= 0) jac(pf, pf) += c;
            if (pt >= 0) jac(pt, pt) += c;
            if (pf >= 0 && pt >= 0) {
                jac(pf, pt) -= c;
                jac(pt, pf) -= c;
            }
        }
        Eigen::PartialPivLU<Matrix> lu(jac);
        Vector step = lu.solve(mismatch);
        for (Eigen::Index k = 0; k < nf; ++k) sol.angles[free[k]] += step[k];
    }
    sol.flows = line_flows(grid, sol.angles);
    return sol;
}

} // namespace ucsim
