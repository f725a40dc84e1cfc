#include "ucsim/scenario.hpp"

#include "ucsim/error.hpp"
#include "ucsim/text_format.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

namespace ucsim {

namespace {

Eigen::Index ix(std::size_t i) { return static_cast<Eigen::Index>(i); }

bool is_multiple(double x, double h) {
    const double q = x / h;
    return std::abs(q - std::round(q)) <= 1e-6 * std::max(1.0, std::abs(q));
}

long steps_of(double x, double h) { return std::lround(x / h); }

std::pair<int, int> parse_line_ref(const text::Document& doc, int line, const std::string& value) {
    const auto dash = value.find('-');
    if (dash == std::string::npos || dash == 0 || dash + 1 == value.size())
        throw ParseError(doc.source, line, "expected a line reference 'from-to', got '" + value + "'");
    return {static_cast<int>(text::to_integer(doc, line, "line", value.substr(0, dash))),
            static_cast<int>(text::to_integer(doc, line, "line", value.substr(dash + 1)))};
}

std::size_t line_of(const GridModel& grid, const text::Document& doc, int line, const std::string& value) {
    auto [f, t] = parse_line_ref(doc, line, value);
    auto l = grid.find_line(f, t);
    if (!l) throw ParseError(doc.source, line, "unknown line " + value);
    return *l;
}

std::size_t bus_of(const GridModel& grid, const text::Document& doc, int line, long id) {
    auto b = grid.find_bus(static_cast<int>(id));
    if (!b) throw ParseError(doc.source, line, "unknown bus " + std::to_string(id));
    return *b;
}

const text::Section& section_or_empty(const text::Document& doc, std::string_view name) {
    static const text::Section empty;
    const text::Section* s = doc.section(name);
    return s ? *s : empty;
}

double assigned_double(const text::Document& doc, const text::Section& s, std::string_view key, double fallback) {
    const auto* a = s.find(key);
    return a ? text::to_double(doc, a->line, a->key, a->value) : fallback;
}

bool assigned_bool(const text::Document& doc, const text::Section& s, std::string_view key, bool fallback) {
    const auto* a = s.find(key);
    return a ? text::to_bool(doc, a->line, a->key, a->value) : fallback;
}

std::vector<double> assigned_list(const text::Document& doc, const text::Section& s, std::string_view key,
                                  std::vector<double> fallback) {
    const auto* a = s.find(key);
    if (!a) return fallback;
    std::vector<double> out;
    for (const auto& item : text::split_list(a->value)) out.push_back(text::to_double(doc, a->line, a->key, item));
    return out;
}

} // namespace

void Scenario::apply_emulator_factors() {
    for (std::size_t k = 0; k < grid.generator_count(); ++k) {
        const Bus& b = grid.bus(grid.generators()[k]);
        controller.emulator_turbine_time[ix(k)] = emulator_turbine_factor * b.turbine_time;
        controller.emulator_governor_time[ix(k)] = emulator_governor_factor * b.governor_time;
    }
}

void Scenario::validate() const {
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw ValidationError("scenario: horizon must be > 0");
    if (!(step > 0.0) || !std::isfinite(step)) throw ValidationError("scenario: step must be > 0");
    if (step > horizon / 100.0 * (1.0 + 1e-12)) throw ValidationError("scenario: step must be <= horizon / 100");
    if (!is_multiple(horizon, step)) throw ValidationError("scenario: horizon must be a multiple of step");
    if (record_interval < 0.01 - 1e-12) throw ValidationError("scenario: record_interval must be >= 0.01 s");
    if (!is_multiple(record_interval, step)) throw ValidationError("scenario: record_interval must be a multiple of step");
    if (!is_multiple(horizon, record_interval))
        throw ValidationError("scenario: horizon must be a multiple of record_interval");
    if (!(settling_tolerance > 0.0)) throw ValidationError("scenario: settling_tolerance must be > 0");
    if (!(emulator_turbine_factor > 0.0) || !(emulator_governor_factor > 0.0))
        throw ValidationError("scenario: emulator factors must be > 0");
    for (const auto& s : disturbance.steps()) {
        if (s.time < 0.0 || s.time > horizon) throw ValidationError("scenario: disturbance time outside [0, horizon]");
        if (!is_multiple(s.time, step)) throw ValidationError("scenario: disturbance times must lie on the step grid");
    }
    if (oscillation.window <= 0.0) throw ValidationError("scenario: oscillation window must be > 0");
    controller.validate(grid);
}

Scenario parse_scenario(std::string_view text_in, const std::filesystem::path& base_dir, const std::string& source) {
    using namespace text;
    const Document doc = parse(text_in, source);
    Scenario sc;

    const Section& head = section_or_empty(doc, "scenario");
    check_keys(doc, head, {"name", "grid", "horizon", "step", "record_interval", "turbine", "settling_tolerance",
                           "outputs", "monitor", "verify_tolerance"});
    const auto* grid_key = head.find("grid");
    if (!grid_key) throw ParseError(source, head.line, "[scenario] needs grid = <path>");
    sc.grid_path = base_dir / grid_key->value;
    sc.grid = load_grid(sc.grid_path);
    if (const auto* a = head.find("name")) sc.name = a->value;
    else sc.name = std::filesystem::path(source).stem().string();
    sc.horizon = assigned_double(doc, head, "horizon", sc.horizon);
    sc.step = assigned_double(doc, head, "step", sc.step);
    sc.record_interval = assigned_double(doc, head, "record_interval", std::max(0.01, sc.step));
    sc.settling_tolerance = assigned_double(doc, head, "settling_tolerance", sc.settling_tolerance);
    sc.verify_tolerance = assigned_double(doc, head, "verify_tolerance", sc.verify_tolerance);
    if (const auto* a = head.find("turbine")) {
        try {
            sc.turbine = parse_turbine_model(a->value);
        } catch (const ValidationError& e) {
            throw ParseError(source, a->line, e.what());
        }
    }
    if (const auto* a = head.find("outputs")) sc.outputs = split_list(a->value);
    if (const auto* a = head.find("monitor")) sc.monitor = a->value;

    // Overrides first: they change the grid the controller is sized against.
    const Section& ov = section_or_empty(doc, "overrides");
    check_keys(doc, ov, {});
    for (const Record& r : ov.records) {
        if (const auto* line = r.find("line")) {
            check_keys(doc, r, {"line", "Pmin", "Pmax"});
            const std::size_t l = line_of(sc.grid, doc, r.line, *line);
            const Line& cur = sc.grid.line(l);
            sc.grid = sc.grid.with_line_limits(l, optional_double(doc, r, "Pmin").value_or(cur.flow_min),
                                               optional_double(doc, r, "Pmax").value_or(cur.flow_max));
        } else if (r.has("bus")) {
            check_keys(doc, r, {"bus", "pmin", "pmax"});
            const std::size_t b = bus_of(sc.grid, doc, r.line, require_integer(doc, r, "bus"));
            const Bus& cur = sc.grid.bus(b);
            sc.grid = sc.grid.with_control_limits(b, optional_double(doc, r, "pmin").value_or(cur.p_min),
                                                  optional_double(doc, r, "pmax").value_or(cur.p_max));
        } else {
            throw ParseError(source, r.line, "override records need line= or bus=");
        }
    }

    const Section& ctl = section_or_empty(doc, "controller");
    check_keys(doc, ctl, {"kind", "k_lambda", "k_phi", "k_rho", "k_rho_upper", "k_rho_lower", "k_pi", "alpha",
                          "emulator_turbine_factor", "emulator_governor_factor", "area_control", "load_side_control",
                          "congestion_management", "agc_gain"});
    ControllerKind kind = ControllerKind::unified;
    if (const auto* a = ctl.find("kind")) {
        try {
            kind = parse_controller_kind(a->value);
        } catch (const ValidationError& e) {
            throw ParseError(source, a->line, e.what());
        }
    }
    ControllerConfig& cfg = sc.controller;
    cfg = ControllerConfig::defaults(sc.grid, kind);
    auto broadcast = [&](std::string_view key, Vector& v) {
        if (const auto* a = ctl.find(key)) v.setConstant(to_double(doc, a->line, a->key, a->value));
    };
    broadcast("k_lambda", cfg.k_lambda);
    broadcast("k_phi", cfg.k_phi);
    broadcast("k_rho", cfg.k_rho_upper);
    broadcast("k_rho", cfg.k_rho_lower);
    broadcast("k_rho_upper", cfg.k_rho_upper);
    broadcast("k_rho_lower", cfg.k_rho_lower);
    broadcast("k_pi", cfg.k_pi);
    broadcast("alpha", cfg.alpha);
    cfg.area_control = assigned_bool(doc, ctl, "area_control", cfg.area_control);
    cfg.load_side_control = assigned_bool(doc, ctl, "load_side_control", cfg.load_side_control);
    cfg.congestion_management = assigned_bool(doc, ctl, "congestion_management", cfg.congestion_management);
    cfg.agc_gain = assigned_double(doc, ctl, "agc_gain", cfg.agc_gain);
    sc.emulator_turbine_factor = assigned_double(doc, ctl, "emulator_turbine_factor", 1.0);
    sc.emulator_governor_factor = assigned_double(doc, ctl, "emulator_governor_factor", 1.0);
    for (const Record& r : ctl.records) {
        if (r.has("bus")) {
            check_keys(doc, r, {"bus", "k_lambda", "k_phi", "alpha", "participation"});
            const std::size_t b = bus_of(sc.grid, doc, r.line, require_integer(doc, r, "bus"));
            if (auto v = optional_double(doc, r, "k_lambda")) cfg.k_lambda[ix(b)] = *v;
            if (auto v = optional_double(doc, r, "k_phi")) cfg.k_phi[ix(b)] = *v;
            if (auto v = optional_double(doc, r, "alpha")) cfg.alpha[ix(b)] = *v;
            if (auto v = optional_double(doc, r, "participation")) {
                const std::size_t slot = sc.grid.generator_slot(b);
                if (slot == GridModel::npos) throw ParseError(source, r.line, "participation applies to generator buses only");
                cfg.participation[ix(slot)] = *v;
            }
        } else if (const auto* line = r.find("line")) {
            check_keys(doc, r, {"line", "k_rho", "k_rho_upper", "k_rho_lower"});
            const std::size_t l = line_of(sc.grid, doc, r.line, *line);
            if (auto v = optional_double(doc, r, "k_rho")) cfg.k_rho_upper[ix(l)] = cfg.k_rho_lower[ix(l)] = *v;
            if (auto v = optional_double(doc, r, "k_rho_upper")) cfg.k_rho_upper[ix(l)] = *v;
            if (auto v = optional_double(doc, r, "k_rho_lower")) cfg.k_rho_lower[ix(l)] = *v;
        } else if (r.has("area")) {
            check_keys(doc, r, {"area", "k_pi"});
            const long id = require_integer(doc, r, "area");
            bool found = false;
            for (std::size_t a = 0; a < sc.grid.area_count(); ++a)
                if (sc.grid.areas()[a].id == id) {
                    cfg.k_pi[ix(a)] = require_double(doc, r, "k_pi");
                    found = true;
                }
            if (!found) throw ParseError(source, r.line, "unknown area " + std::to_string(id));
        } else {
            throw ParseError(source, r.line, "controller records need bus=, line= or area=");
        }
    }
    sc.apply_emulator_factors();

    std::vector<DisturbanceStep> steps;
    const Section& dist = section_or_empty(doc, "disturbance");
    check_keys(doc, dist, {});
    for (const Record& r : dist.records) {
        check_keys(doc, r, {"time", "bus", "delta"});
        steps.push_back({optional_double(doc, r, "time").value_or(0.0), bus_of(sc.grid, doc, r.line, require_integer(doc, r, "bus")),
                         require_double(doc, r, "delta")});
    }
    sc.disturbance = Disturbance(std::move(steps));

    const Section& eig = section_or_empty(doc, "eigen");
    check_keys(doc, eig, {"all_generator", "synthetic_inertia", "synthetic_turbine_time", "synthetic_governor_time",
                          "lambda_scale", "phi_scale", "rho_scale", "variants"});
    EigenStudyOptions& eo = sc.eigen;
    eo.all_generator = assigned_bool(doc, eig, "all_generator", eo.all_generator);
    eo.synthetic_inertia = assigned_double(doc, eig, "synthetic_inertia", eo.synthetic_inertia);
    eo.synthetic_turbine_time = assigned_double(doc, eig, "synthetic_turbine_time", eo.synthetic_turbine_time);
    eo.synthetic_governor_time = assigned_double(doc, eig, "synthetic_governor_time", eo.synthetic_governor_time);
    eo.lambda_scale = assigned_double(doc, eig, "lambda_scale", eo.lambda_scale);
    eo.phi_scale = assigned_double(doc, eig, "phi_scale", eo.phi_scale);
    eo.rho_scale = assigned_double(doc, eig, "rho_scale", eo.rho_scale);
    if (const auto* a = eig.find("variants")) {
        for (const auto& item : split_list(a->value)) {
            const auto colon = item.find(':');
            if (colon == std::string::npos) throw ParseError(source, a->line, "variant must be kind:turbine, got '" + item + "'");
            try {
                eo.variants.emplace_back(parse_controller_kind(item.substr(0, colon)), parse_turbine_model(item.substr(colon + 1)));
            } catch (const ValidationError& e) {
                throw ParseError(source, a->line, e.what());
            }
        }
    } else {
        eo.variants = {{ControllerKind::unified, TurbineModel::first_order},
                       {ControllerKind::unified, TurbineModel::second_order},
                       {ControllerKind::decoupled, TurbineModel::second_order}};
    }

    const Section& osc = section_or_empty(doc, "oscillation");
    check_keys(doc, osc, {"signal", "window", "ratio", "amplitude_multiple"});
    if (const auto* a = osc.find("signal")) sc.oscillation.signal = a->value;
    sc.oscillation.window = assigned_double(doc, osc, "window", sc.oscillation.window);
    sc.oscillation.ratio = assigned_double(doc, osc, "ratio", sc.oscillation.ratio);
    sc.oscillation.amplitude_multiple = assigned_double(doc, osc, "amplitude_multiple", sc.oscillation.amplitude_multiple);

    const Section& sw = section_or_empty(doc, "sweep");
    check_keys(doc, sw, {"factors"});
    sc.sweep_factors = assigned_list(doc, sw, "factors", sc.sweep_factors);

    for (std::size_t a = 1; a < doc.sections.size(); ++a)
        for (std::size_t b = 1; b < a; ++b)
            if (doc.sections[a].name == doc.sections[b].name)
                throw ParseError(source, doc.sections[a].line, "duplicate section [" + doc.sections[a].name + "]");
    for (const auto& s : doc.sections)
        if (!s.name.empty() && s.name != "scenario" && s.name != "controller" && s.name != "disturbance" &&
            s.name != "overrides" && s.name != "eigen" && s.name != "oscillation" && s.name != "sweep")
            throw ParseError(source, s.line, "unknown section [" + s.name + "]");
    if (!doc.sections.front().assignments.empty() || !doc.sections.front().records.empty())
        throw ParseError(source, 1, "content before the first section header");

    sc.validate();
    return sc;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError(path.string(), 0, "cannot open scenario file");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_scenario(buf.str(), path.parent_path(), path.string());
}

// ---------------------------------------------------------------------------

std::vector<Selector> Selector::expand(const ClosedLoop& system, const std::string& spec) {
    const GridModel& grid = system.grid();
    const auto open = spec.find('[');
    if (open == std::string::npos || spec.back() != ']')
        throw ValidationError("output selector '" + spec + "' must look like name[index]");
    const std::string field = spec.substr(0, open);
    const std::string arg = spec.substr(open + 1, spec.size() - open - 2);

    static const std::vector<std::pair<std::string, Field>> names = {
        {"theta", Field::theta}, {"omega", Field::omega}, {"pm", Field::pm}, {"v", Field::valve},
        {"p", Field::command}, {"lambda", Field::lambda}, {"phi", Field::phi}, {"rho_upper", Field::rho_upper},
        {"rho_lower", Field::rho_lower}, {"flow", Field::flow}, {"vflow", Field::vflow}, {"pi", Field::pi},
        {"pm_est", Field::pm_est}, {"v_est", Field::v_est}, {"sigma", Field::sigma}, {"agc", Field::agc},
        {"estimate", Field::estimate}};
    auto it = std::find_if(names.begin(), names.end(), [&](const auto& p) { return p.first == field; });
    if (it == names.end()) throw ValidationError("unknown output quantity '" + field + "'");
    const Field f = it->second;

    enum class Domain { bus, generator, line, area, agc };
    Domain dom = Domain::bus;
    switch (f) {
    case Field::pm: case Field::valve: case Field::pm_est: case Field::v_est: case Field::sigma: dom = Domain::generator; break;
    case Field::rho_upper: case Field::rho_lower: case Field::flow: case Field::vflow: dom = Domain::line; break;
    case Field::pi: dom = Domain::area; break;
    case Field::agc: dom = Domain::agc; break;
    default: break;
    }

    auto make = [&](std::size_t index, const std::string& label) {
        Selector s;
        s.name_ = field + "[" + label + "]";
        s.field_ = f;
        s.index_ = index;
        s.system_ = &system;
        return s;
    };

    std::vector<Selector> out;
    if (arg == "*") {
        switch (dom) {
        case Domain::bus:
            for (std::size_t i = 0; i < grid.bus_count(); ++i) out.push_back(make(i, std::to_string(grid.bus(i).id)));
            break;
        case Domain::generator:
            for (std::size_t k = 0; k < grid.generator_count(); ++k)
                out.push_back(make(k, std::to_string(grid.bus(grid.generators()[k]).id)));
            break;
        case Domain::line:
            for (std::size_t l = 0; l < grid.line_count(); ++l) out.push_back(make(l, grid.line_name(l)));
            break;
        case Domain::area:
            for (std::size_t a = 0; a < grid.area_count(); ++a) out.push_back(make(a, std::to_string(grid.areas()[a].id)));
            break;
        case Domain::agc:
            for (std::size_t a = 0; a < agc_area_count(grid); ++a) out.push_back(make(a, std::to_string(a)));
            break;
        }
        return out;
    }

    auto integer = [&](const std::string& s) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ValidationError("bad index in output selector '" + spec + "'");
        }
    };
    switch (dom) {
    case Domain::bus: {
        auto b = grid.find_bus(integer(arg));
        if (!b) throw ValidationError("output selector '" + spec + "': unknown bus");
        out.push_back(make(*b, arg));
        break;
    }
    case Domain::generator: {
        auto b = grid.find_bus(integer(arg));
        if (!b || grid.generator_slot(*b) == GridModel::npos)
            throw ValidationError("output selector '" + spec + "': not a generator bus");
        out.push_back(make(grid.generator_slot(*b), arg));
        break;
    }
    case Domain::line: {
        const auto dash = arg.find('-');
        if (dash == std::string::npos) throw ValidationError("output selector '" + spec + "': expected from-to");
        auto l = grid.find_line(integer(arg.substr(0, dash)), integer(arg.substr(dash + 1)));
        if (!l) throw ValidationError("output selector '" + spec + "': unknown line");
        out.push_back(make(*l, arg));
        break;
    }
    case Domain::area: {
        const int id = integer(arg);
        for (std::size_t a = 0; a < grid.area_count(); ++a)
            if (grid.areas()[a].id == id) out.push_back(make(a, arg));
        if (out.empty()) throw ValidationError("output selector '" + spec + "': unknown area");
        break;
    }
    case Domain::agc: {
        const int k = integer(arg);
        if (k < 0 || static_cast<std::size_t>(k) >= agc_area_count(grid))
            throw ValidationError("output selector '" + spec + "': AGC index out of range");
        out.push_back(make(static_cast<std::size_t>(k), arg));
        break;
    }
    }
    return out;
}

double Selector::operator()(const Evaluation& e) const {
    const auto i = ix(index_);
    switch (field_) {
    case Field::theta: return e.plant.theta[i];
    case Field::omega: return e.plant.omega[i];
    case Field::pm: return e.plant.mech_power[i];
    case Field::valve: return e.plant.valve[i];
    case Field::command: return e.command[i];
    case Field::lambda: return e.control.lambda[i];
    case Field::phi: return e.control.phi[i];
    case Field::rho_upper: return e.control.rho_upper[i];
    case Field::rho_lower: return e.control.rho_lower[i];
    case Field::flow: return e.flows[i];
    case Field::vflow: return e.virtual_flows[i];
    case Field::pi: return e.control.pi[i];
    case Field::pm_est: return e.control.emu_mech[i];
    case Field::v_est: return e.control.emu_valve[i];
    case Field::sigma: return e.plant.mech_power[i] - e.control.emu_mech[i];
    case Field::agc: return e.control.agc[i];
    case Field::estimate: {
        const GridModel& grid = system_->grid();
        if (grid.bus(index_).is_generator())
            return estimate_disturbance(grid, e.measurements, EstimateSide::generator)[ix(grid.generator_slot(index_))];
        const auto& loads = grid.loads();
        const auto k = std::find(loads.begin(), loads.end(), index_) - loads.begin();
        return estimate_disturbance(grid, e.measurements, EstimateSide::load)[k];
    }
    }
    return std::numeric_limits<double>::quiet_NaN();
}

OscillationResult detect_oscillation(const std::vector<double>& times, const std::vector<double>& values, double window,
                                     double tolerance, double ratio, double amplitude_multiple) {
    if (times.size() != values.size()) throw ValidationError("oscillation check: times and values differ in length");
    if (!(window > 0.0)) throw ValidationError("oscillation check: window must be > 0");
    if (times.size() < 3 || times.back() - times.front() < 2.0 * window)
        throw ValidationError("oscillation check: series shorter than two windows");
    const double end = times.back();
    double lo1 = std::numeric_limits<double>::infinity(), hi1 = -lo1, lo0 = lo1, hi0 = -lo1;
    for (std::size_t k = 0; k < times.size(); ++k) {
        const double t = times[k], v = values[k];
        if (t > end - window) {
            lo1 = std::min(lo1, v);
            hi1 = std::max(hi1, v);
        } else if (t > end - 2.0 * window) {
            lo0 = std::min(lo0, v);
            hi0 = std::max(hi0, v);
        }
    }
    OscillationResult r;
    r.amplitude = hi1 - lo1;
    const double before = hi0 - lo0;
    r.ratio = before > 0.0 ? r.amplitude / before : (r.amplitude > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    r.oscillating = r.ratio > ratio && r.amplitude > amplitude_multiple * tolerance;
    return r;
}

StepMetrics step_metrics(const std::vector<double>& times, const std::vector<double>& values, double band) {
    StepMetrics m;
    if (values.empty()) return m;
    const double final = values.back();
    double peak = 0.0;
    for (double v : values) peak = std::max(peak, std::abs(v - final));
    if (peak == 0.0) return m;
    // Direction of the initial departure: first sample that moves away by 10% of the peak.
    double dir = 0.0;
    std::size_t start = 0;
    for (std::size_t k = 0; k < values.size(); ++k)
        if (std::abs(values[k] - final) >= 0.1 * peak) {
            dir = values[k] > final ? 1.0 : -1.0;
            start = k;
            break;
        }
    for (std::size_t k = start; k < values.size(); ++k) m.overshoot = std::max(m.overshoot, -dir * (values[k] - final));
    for (std::size_t k = values.size(); k-- > 0;)
        if (std::abs(values[k] - final) > band) {
            m.settling_time = k + 1 < times.size() ? times[k + 1] : times[k];
            break;
        }
    return m;
}

Table RunResult::table() const {
    Table t;
    t.header.push_back("t");
    for (const auto& n : names) t.header.push_back(n);
    for (std::size_t k = 0; k < times.size(); ++k) {
        std::vector<double> row{times[k]};
        for (const auto& s : series) row.push_back(s[k]);
        t.rows.push_back(std::move(row));
    }
    return t;
}

const std::vector<double>* RunResult::find(const std::string& name) const {
    for (std::size_t k = 0; k < names.size(); ++k)
        if (names[k] == name) return &series[k];
    return nullptr;
}

RunResult run_scenario(const Scenario& sc, const StepObserver& observer) {
    sc.validate();
    const ClosedLoop sys(sc.grid, sc.controller, sc.turbine, sc.disturbance);

    std::vector<Selector> outputs;
    for (const auto& spec : sc.outputs)
        for (auto& s : Selector::expand(sys, spec)) outputs.push_back(std::move(s));
    std::optional<Selector> monitor, osc;
    if (!sc.monitor.empty()) {
        auto v = Selector::expand(sys, sc.monitor);
        if (v.size() != 1) throw ValidationError("monitor must select exactly one signal");
        monitor = v.front();
    }
    if (!sc.oscillation.signal.empty()) {
        auto v = Selector::expand(sys, sc.oscillation.signal);
        if (v.size() != 1) throw ValidationError("oscillation signal must select exactly one signal");
        osc = v.front();
    }

    RunResult res;
    for (const auto& s : outputs) res.names.push_back(s.name());
    res.series.resize(outputs.size());

    const long n_steps = steps_of(sc.horizon, sc.step);
    const long decimation = steps_of(sc.record_interval, sc.step);
    const double tail_start = 0.9 * sc.horizon;
    const double tol = sc.settling_tolerance;
    const bool primal_dual = sc.controller.uses_primal_dual();

    std::vector<double> tail_lo(outputs.size() + sc.grid.bus_count(), std::numeric_limits<double>::infinity());
    std::vector<double> tail_hi(tail_lo.size(), -std::numeric_limits<double>::infinity());
    std::vector<double> full_t, monitor_v, osc_v;
    double last_outside = -1.0;
    bool ever_outside = false;

    Vector x = sys.initial_state();
    res.min_rho = std::numeric_limits<double>::infinity();

    auto observe = [&](long k, const Evaluation& e) {
        const double t = static_cast<double>(k) * sc.step;
        const double wmax = e.plant.omega.cwiseAbs().maxCoeff();
        if (wmax > tol) {
            last_outside = t;
            ever_outside = true;
        }
        res.final_max_omega = wmax;
        res.max_load_residual = std::max(res.max_load_residual, load_balance_residual(sc.grid, e.plant, e.command, e.injection));
        if (primal_dual && e.control.rho_upper.size() > 0)
            res.min_rho = std::min({res.min_rho, e.control.rho_upper.minCoeff(), e.control.rho_lower.minCoeff()});
        if (t >= tail_start - 1e-12) {
            for (std::size_t s = 0; s < outputs.size(); ++s) {
                const double v = outputs[s](e);
                tail_lo[s] = std::min(tail_lo[s], v);
                tail_hi[s] = std::max(tail_hi[s], v);
            }
            for (std::size_t i = 0; i < sc.grid.bus_count(); ++i) {
                const double v = e.plant.omega[ix(i)];
                tail_lo[outputs.size() + i] = std::min(tail_lo[outputs.size() + i], v);
                tail_hi[outputs.size() + i] = std::max(tail_hi[outputs.size() + i], v);
            }
        }
        if (monitor || osc) full_t.push_back(t);
        if (monitor) monitor_v.push_back((*monitor)(e));
        if (osc) osc_v.push_back((*osc)(e));
        if (k % decimation == 0) {
            res.times.push_back(t);
            for (std::size_t s = 0; s < outputs.size(); ++s) res.series[s].push_back(outputs[s](e));
        }
        if (observer) observer(t, x, e);
    };

    Evaluation e = sys.evaluate(0.0, x);
    observe(0, e);
    long k = 0;
    try {
        for (k = 1; k <= n_steps; ++k) {
            const double t = static_cast<double>(k - 1) * sc.step;
            const bool same_r = (sc.disturbance.injection_at(sc.grid, t) -
                                 sc.disturbance.injection_at(sc.grid, t + 0.5 * sc.step)).cwiseAbs().maxCoeff() == 0.0;
            x = sys.step(t, sc.step, x, same_r ? &e.derivative : nullptr);
            e = sys.evaluate(static_cast<double>(k) * sc.step, x);
            observe(k, e);
        }
    } catch (const NumericError& err) {
        res.aborted = true;
        res.error = err.what();
    }

    if (!primal_dual || sc.grid.line_count() == 0) res.min_rho = 0.0;
    res.final_state = x;
    res.final_snapshot.p = e.command;
    res.final_snapshot.flows = e.flows;
    res.final_snapshot.omega = e.plant.omega;
    if (primal_dual) res.final_snapshot.lambda = e.control.lambda;

    bool drift_ok = true;
    for (std::size_t s = 0; s < tail_lo.size(); ++s)
        if (tail_hi[s] - tail_lo[s] > tol) drift_ok = false;
    res.settled = !res.aborted && res.final_max_omega <= tol && drift_ok;
    res.final_snapshot.settled = res.settled;
    if (res.aborted || res.final_max_omega > tol) res.settling_time = std::numeric_limits<double>::infinity();
    else res.settling_time = ever_outside ? last_outside + sc.step : 0.0;

    if (monitor && !res.aborted) res.monitor = step_metrics(full_t, monitor_v, tol);
    if (osc && !res.aborted)
        res.oscillation = detect_oscillation(full_t, osc_v, sc.oscillation.window, tol, sc.oscillation.ratio,
                                             sc.oscillation.amplitude_multiple);
    return res;
}

std::vector<SweepSummary> run_robustness_sweep(const Scenario& base, const std::vector<double>& factors) {
    if (base.controller.kind != ControllerKind::decoupled)
        throw ValidationError("robustness sweep needs the decoupled controller");
    if (base.turbine != TurbineModel::second_order)
        throw ValidationError("robustness sweep needs the second-order turbine model");
    std::vector<SweepSummary> out;
    for (double f : factors) {
        SweepSummary row;
        row.factor = f;
        try {
            Scenario sc = base;
            sc.emulator_turbine_factor = f;
            sc.emulator_governor_factor = f;
            sc.apply_emulator_factors();
            const RunResult r = run_scenario(sc);
            if (r.aborted) row.error = r.error;
            row.settled = r.settled;
            row.settling_time = r.settling_time;
            if (r.monitor) {
                row.monitor_settling_time = r.monitor->settling_time;
                row.overshoot = r.monitor->overshoot;
            }
            if (r.oscillation) {
                row.oscillating = r.oscillation->oscillating;
                row.ratio = r.oscillation->ratio;
            }
        } catch (const Error& err) {
            row.error = err.what();
        }
        out.push_back(std::move(row));
    }
    return out;
}

Table sweep_table(const std::vector<SweepSummary>& rows) {
    Table t;
    t.header = {"factor", "settled", "settling_time", "monitor_settling_time", "overshoot", "oscillating", "ratio", "failed"};
    for (const auto& r : rows)
        t.rows.push_back({r.factor, r.settled ? 1.0 : 0.0, r.settling_time, r.monitor_settling_time, r.overshoot,
                          r.oscillating ? 1.0 : 0.0, r.ratio, r.error.empty() ? 0.0 : 1.0});
    return t;
}

ClosedLoop eigen_system(const Scenario& sc, ControllerKind kind, TurbineModel turbine) {
    const EigenStudyOptions& eo = sc.eigen;
    GridModel grid = eo.all_generator ? sc.grid.all_generator_variant(eo.synthetic_inertia, eo.synthetic_turbine_time,
                                                                      eo.synthetic_governor_time)
                                      : sc.grid;
    const ControllerConfig& base = sc.controller;
    ControllerConfig cfg = ControllerConfig::defaults(grid, kind);
    cfg.k_lambda = base.k_lambda * eo.lambda_scale;
    cfg.k_phi = base.k_phi * eo.phi_scale;
    cfg.k_rho_upper = base.k_rho_upper * eo.rho_scale;
    cfg.k_rho_lower = base.k_rho_lower * eo.rho_scale;
    cfg.k_pi = base.k_pi;
    cfg.alpha = base.alpha;
    cfg.area_control = base.area_control;
    cfg.congestion_management = base.congestion_management;
    cfg.load_side_control = base.load_side_control;
    cfg.agc_gain = base.agc_gain;
    for (std::size_t k = 0; k < grid.generator_count(); ++k) {
        const Bus& b = grid.bus(grid.generators()[k]);
        cfg.emulator_turbine_time[ix(k)] = sc.emulator_turbine_factor * b.turbine_time;
        cfg.emulator_governor_time[ix(k)] = sc.emulator_governor_factor * b.governor_time;
    }
    return ClosedLoop(std::move(grid), std::move(cfg), turbine);
}

std::vector<EigenStudyEntry> run_eigen_study(const Scenario& sc, const std::filesystem::path& out_dir) {
    std::vector<EigenStudyEntry> out;
    for (const auto& [kind, turbine] : sc.eigen.variants) {
        EigenStudyEntry entry{kind, turbine, {}, {}, 0, {}};
        try {
            const ClosedLoop sys = eigen_system(sc, kind, turbine);
            const LinearModel model = linearize(sys, sys.initial_state());
            entry.dimension = model.dimension();
            entry.report = eigenvalues(model);
            entry.file = sc.name + "_" + std::string(to_string(kind)) + "_" + std::string(to_string(turbine)) + ".csv";
            if (!out_dir.empty()) write_file_atomic(out_dir / entry.file, to_csv(eigen_table(entry.report.values)));
        } catch (const Error& err) {
            entry.error = err.what();
            entry.file.clear();
        }
        out.push_back(std::move(entry));
    }
    return out;
}

std::string eigen_summary(const std::vector<EigenStudyEntry>& entries) {
    std::string s = "controller,turbine,dimension,abscissa,classification,unstable,file,error\n";
    for (const auto& e : entries) {
        s += std::string(to_string(e.kind)) + "," + std::string(to_string(e.turbine)) + "," + std::to_string(e.dimension) + ",";
        if (e.error.empty())
            s += format_number(e.report.abscissa) + "," + std::string(to_string(e.report.classification)) + "," +
                 std::to_string(e.report.unstable_count) + "," + e.file + ",";
        else {
            std::string msg = e.error;
            std::replace(msg.begin(), msg.end(), ',', ';');
            s += "nan,failed,0,," + msg;
        }
        s += "\n";
    }
    return s;
}

VerifyOutcome run_verification(const Scenario& sc) {
    VerifyOutcome v{run_scenario(sc), DispatchProblem::from(sc.grid, sc.controller, sc.disturbance), {}, std::nullopt, {}};
    v.solution = solve_dispatch(v.problem);
    if (v.run.aborted) {
        v.error = "simulation aborted: " + v.run.error;
        return v;
    }
    if (v.solution.status != DispatchStatus::optimal) {
        v.error = "dispatch " + std::string(to_string(v.solution.status)) + ": " + v.solution.message;
        return v;
    }
    try {
        v.report = verify_equilibrium(v.run.final_snapshot, v.problem, v.solution, sc.verify_tolerance);
    } catch (const NotSettledError& err) {
        v.error = err.what();
    }
    return v;
}

} // namespace ucsim
