#pragma once

// Network data model: buses, lossless lines, control areas, and the
// steady-state power-flow solve used to initialise every run.
//
// Units: powers in per-unit on `base_mva`, angles in radians, time constants
// in seconds, frequency deviation in per-unit of nominal.

#include <Eigen/Dense>

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ucsim {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

enum class BusKind { generator, load };

struct Bus {
    int id = 0;
    BusKind kind = BusKind::load;
    double inertia = 0.0;       // M_i, generator only
    double damping = 0.0;       // D_i
    double turbine_time = 0.0;  // T^t_i, generator only
    double governor_time = 0.0; // T^g_i, generator only
    double p_min = 0.0;         // control limits on p_i
    double p_max = 0.0;
    double alpha = 1.0;         // disutility coefficient
    double injection = 0.0;     // scheduled (pre-disturbance) net injection

    bool is_generator() const noexcept { return kind == BusKind::generator; }
};

struct Line {
    int from = 0;
    int to = 0;
    double susceptance = 0.0;
    double flow_min = 0.0;
    double flow_max = 0.0;
};

/// A line crossing an area boundary. `sign` is +1 when the from-bus lies in
/// the area, so that `sign * P_line` is the export from the area.
struct TieLine {
    std::size_t line = 0;
    double sign = 1.0;
};

struct AreaSpec {
    int id = 0;
    std::vector<int> buses; // member bus ids
    double schedule = 0.0;  // scheduled net export P_k^area
};

struct Area {
    int id = 0;
    std::vector<std::size_t> buses; // member bus indices
    std::vector<TieLine> ties;
    double schedule = 0.0;
};

/// One incident line seen from a bus; `sign` is +1 at the from-end.
struct Incidence {
    std::size_t line = 0;
    double sign = 1.0;
};

/// Immutable, validated grid description.
class GridModel {
public:
    /// Empty grid (no buses); only useful as a placeholder to assign into.
    GridModel() = default;

    /// Validates every invariant; throws ValidationError naming the offending entity.
    static GridModel build(std::vector<Bus> buses, std::vector<Line> lines, std::vector<AreaSpec> areas = {},
                           double base_mva = 100.0, std::optional<int> reference_id = std::nullopt);

    const std::vector<Bus>& buses() const noexcept { return buses_; }
    const std::vector<Line>& lines() const noexcept { return lines_; }
    const std::vector<Area>& areas() const noexcept { return areas_; }
    const Bus& bus(std::size_t index) const { return buses_.at(index); }
    const Line& line(std::size_t index) const { return lines_.at(index); }

    std::size_t bus_count() const noexcept { return buses_.size(); }
    std::size_t line_count() const noexcept { return lines_.size(); }
    std::size_t area_count() const noexcept { return areas_.size(); }
    std::size_t generator_count() const noexcept { return generators_.size(); }
    std::size_t load_count() const noexcept { return loads_.size(); }
    double base_mva() const noexcept { return base_mva_; }

    /// Bus indices of generators / loads, in bus order.
    const std::vector<std::size_t>& generators() const noexcept { return generators_; }
    const std::vector<std::size_t>& loads() const noexcept { return loads_; }
    /// Position of a generator bus within generators(); npos for loads.
    std::size_t generator_slot(std::size_t bus) const { return gen_slot_.at(bus); }
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);

    std::size_t reference() const noexcept { return reference_; }
    std::size_t bus_index(int id) const;
    std::optional<std::size_t> find_bus(int id) const;
    std::size_t line_index(int from, int to) const;
    std::optional<std::size_t> find_line(int from, int to) const;
    std::string line_name(std::size_t line) const;

    const std::vector<Incidence>& incident(std::size_t bus) const { return incidence_.at(bus); }
    std::size_t from_index(std::size_t line) const { return line_ends_.at(line).first; }
    std::size_t to_index(std::size_t line) const { return line_ends_.at(line).second; }

    Vector nominal_injections() const;
    Vector susceptances() const;

    /// Copies with modified data; the result is re-validated.
    GridModel with_line_limits(std::size_t line, double flow_min, double flow_max) const;
    GridModel with_control_limits(std::size_t bus, double p_min, double p_max) const;
    GridModel with_reference(std::size_t bus) const;

    /// Every load bus converted into a generator with the given synthetic
    /// inertia and turbine/governor constants (used for all-generator eigen-studies).
    GridModel all_generator_variant(double synthetic_inertia, double turbine_time, double governor_time) const;

private:
    void index();

    std::vector<Bus> buses_;
    std::vector<Line> lines_;
    std::vector<AreaSpec> area_specs_;
    std::vector<Area> areas_;
    double base_mva_ = 100.0;
    std::optional<int> reference_id_;

    std::size_t reference_ = 0;
    std::vector<std::size_t> generators_;
    std::vector<std::size_t> loads_;
    std::vector<std::size_t> gen_slot_;
    std::vector<std::vector<Incidence>> incidence_;
    std::vector<std::pair<std::size_t, std::size_t>> line_ends_;
};

/// Parse a grid file (sections [bus], [line], [area]; see data/grids/*.grid).
GridModel parse_grid(std::string_view text, const std::string& source = "<grid>");
GridModel load_grid(const std::filesystem::path& path);
/// Serialise to the same text format; parse_grid(write_grid(g)) reproduces g.
std::string write_grid(const GridModel& grid);

/// P_ij = B_ij sin(theta_i - theta_j) for every line, oriented from -> to.
Vector line_flows(const GridModel& grid, const Vector& theta);

/// Net outflow per bus, sum over incident lines of the oriented line values.
Vector bus_outflows(const GridModel& grid, const Vector& line_values);

struct EquilibriumSolution {
    Vector angles;
    Vector flows;
    int iterations = 0;
    double residual = 0.0; // infinity norm of the bus balance mismatch
};

struct PowerFlowOptions {
    double tolerance = 1e-9;
    int max_iterations = 50;
    double balance_tolerance = 1e-8;
};

/// Newton solve of the lossless steady state: injection_i = sum_j B_ij sin(theta_i - theta_j).
/// Flat start, reference bus pinned at theta = 0.
EquilibriumSolution solve_equilibrium(const GridModel& grid, const Vector& injections,
                                      std::optional<std::size_t> reference = std::nullopt,
                                      const PowerFlowOptions& options = {});

} // namespace ucsim
