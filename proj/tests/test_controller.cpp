#include "doctest.h"
#include "support.hpp"

#include "ucsim/closed_loop.hpp"
#include "ucsim/controller.hpp"
#include "ucsim/error.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <random>

using namespace ucsim;

TEST_CASE("projection examples") {
    CHECK(project(5.0, -1.0) == 5.0);
    CHECK(project(-3.0, 0.0) == 0.0);
    CHECK(project(-3.0, 2.0) == -3.0);
}

TEST_CASE("projection over every sign combination") {
    const double values[] = {-2.5, -0.0, 0.0, 1.5, -std::numeric_limits<double>::denorm_min(),
                             std::numeric_limits<double>::denorm_min()};
    for (double x : values)
        for (double y : values) {
            const double expect = (y > 0.0 || x > 0.0) ? x : 0.0;
            CAPTURE(x);
            CAPTURE(y);
            CHECK(project(x, y) == expect);
        }
}

TEST_CASE("virtual flows") {
    const GridModel g = testing::two_bus();
    Vector phi(2);
    phi << 0.4, 0.4;
    CHECK(virtual_flows(g, phi)[0] == 0.0);
    phi << std::numbers::pi / 6, 0.0;
    CHECK(virtual_flows(g, phi)[0] == doctest::Approx(5.0).epsilon(1e-14));

    const GridModel ne = testing::ne39();
    const auto pf = solve_equilibrium(ne, ne.nominal_injections());
    CHECK((virtual_flows(ne, pf.angles) - pf.flows).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("control command") {
    CHECK(control_command(20, 0.0, 0.0, -1, 1) == 0.0);
    CHECK(control_command(20, 0.01, 0.02, -1, 1) == doctest::Approx(-0.6));
    CHECK(control_command(20, 0.03, 0.03, -1, 1) == -1.0); // -1.2 clipped
    CHECK(control_command(20, -0.03, -0.03, -1, 1) == 1.0);
}

static Measurements blank(const GridModel& g) {
    const auto n = static_cast<Eigen::Index>(g.bus_count());
    return {Vector::Zero(n), Vector::Zero(static_cast<Eigen::Index>(g.line_count())),
            Vector::Zero(static_cast<Eigen::Index>(g.generator_count())), Vector::Zero(n)};
}

TEST_CASE("lambda rate on a single bus") {
    const GridModel g = parse_grid("[bus]\nid=1 kind=gen M=3 D=2 Tt=0.3 Tg=0.1 pmin=-1 pmax=1 alpha=1\n");
    ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::unified);
    Measurements meas = blank(g);
    meas.omega << 0.01;
    const auto st = ControllerState::initial(g, Vector::Zero(1), Vector::Zero(1));
    CHECK(uc_rhs(g, cfg, meas, st).lambda[0] == doctest::Approx(0.02));
}

TEST_CASE("decoupled lambda vanishes when every term does") {
    const GridModel g = testing::two_bus();
    ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::decoupled);
    const auto pf = solve_equilibrium(g, Vector::Zero(2));
    const auto st = ControllerState::initial(g, pf.angles, Vector::Zero(2));
    Measurements meas = blank(g);
    meas.flows = line_flows(g, pf.angles);
    const auto d = duc_rhs(g, cfg, meas, st);
    CHECK(d.lambda.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decoupled load lambda depends on the plant only through the estimate") {
    const GridModel g = testing::ne39();
    ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::decoupled);
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    Vector theta(39), lambda(39);
    for (auto& v : theta) v = u(rng);
    for (auto& v : lambda) v = u(rng);
    auto st = ControllerState::initial(g, theta, Vector::Zero(39));
    st.lambda = lambda;
    Measurements a = blank(g);
    for (auto& v : a.omega) v = u(rng);
    a.flows = line_flows(g, theta);
    a.command = primal_dual_commands(g, cfg, a.omega, st.lambda);

    // Move one load's frequency and compensate through its command so D w + sum P - p is unchanged.
    Measurements b = a;
    const std::size_t load = g.loads()[5];
    const auto li = static_cast<Eigen::Index>(load);
    b.omega[li] += 0.02;
    b.command[li] += g.bus(load).damping * 0.02;

    const Vector ra = estimate_disturbance(g, a, EstimateSide::load);
    const Vector rb = estimate_disturbance(g, b, EstimateSide::load);
    REQUIRE((ra - rb).cwiseAbs().maxCoeff() < 1e-13);
    const auto da = duc_rhs(g, cfg, a, st);
    const auto db = duc_rhs(g, cfg, b, st);
    CHECK(da.lambda[li] == doctest::Approx(db.lambda[li]).epsilon(1e-13));
    // The undecoupled law does see the change.
    CHECK(uc_rhs(g, cfg, a, st).lambda[li] != doctest::Approx(uc_rhs(g, cfg, b, st).lambda[li]));
}

TEST_CASE("disturbance estimates") {
    const GridModel g = testing::ne39();
    ClosedLoop sys(g, ControllerConfig::defaults(g, ControllerKind::decoupled), TurbineModel::second_order,
                   Disturbance({{0.0, g.bus_index(38), -7.35}}));
    const Vector x0 = sys.initial_state();
    const Evaluation e0 = sys.evaluate(-1.0, x0);
    const Vector r_load = estimate_disturbance(g, e0.measurements, EstimateSide::load);
    for (std::size_t k = 0; k < g.load_count(); ++k)
        CHECK(r_load[static_cast<Eigen::Index>(k)] ==
              doctest::Approx(g.bus(g.loads()[k]).injection).epsilon(1e-12).scale(1.0));

    // Mid-transient, the generator-side estimate is the lumped r + p^M, by the swing equation.
    Vector x = x0;
    for (int k = 0; k < 300; ++k) x = sys.step(k * 1e-3, 1e-3, x);
    const Evaluation e = sys.evaluate(0.3, x);
    const Vector r_gen = estimate_disturbance(g, e.measurements, EstimateSide::generator);
    const std::size_t slot = g.generator_slot(g.bus_index(38));
    const auto i38 = static_cast<Eigen::Index>(g.bus_index(38));
    const auto s38 = static_cast<Eigen::Index>(slot);
    CHECK(r_gen[s38] - e.plant.mech_power[s38] ==
          doctest::Approx(g.bus(g.bus_index(38)).injection - 7.35).epsilon(1e-12));
    CHECK(e.injection[i38] == doctest::Approx(g.bus(g.bus_index(38)).injection - 7.35));
}

TEST_CASE("load estimate recovers a load step after the transient") {
    const GridModel g = testing::two_bus();
    ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::decoupled);
    cfg.k_phi.setConstant(0.2);
    ClosedLoop sys(g, cfg, TurbineModel::second_order, Disturbance({{0.0, 1, -0.3}}));
    Vector x = sys.initial_state();
    for (int k = 0; k < 60000; ++k) x = sys.step(k * 1e-3, 1e-3, x);
    const Evaluation e = sys.evaluate(60.0, x);
    CHECK(e.plant.omega.cwiseAbs().maxCoeff() < 1e-8);
    CHECK(estimate_disturbance(g, e.measurements, EstimateSide::load)[0] == doctest::Approx(-0.3).epsilon(1e-6));
}

TEST_CASE("decoupled equilibrium identity") {
    const GridModel g = testing::two_bus();
    ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::decoupled);
    cfg.k_phi.setConstant(0.2);
    ClosedLoop sys(g, cfg, TurbineModel::second_order, Disturbance({{0.0, 1, -0.3}}));
    Vector x = sys.initial_state();
    for (int k = 0; k < 60000; ++k) x = sys.step(k * 1e-3, 1e-3, x);
    const Evaluation e = sys.evaluate(60.0, x);
    CHECK(e.derivative.cwiseAbs().maxCoeff() < 1e-8);
    const double lambda = e.control.lambda[0];
    CHECK(-g.bus(0).alpha * lambda - e.control.emu_mech[0] == doctest::Approx(0.0).scale(1.0).epsilon(1e-8));
}

TEST_CASE("emulator tracks the turbine when the constants match") {
    const GridModel g = testing::ne39();
    ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::decoupled);
    cfg.k_lambda.setConstant(0.0477);
    cfg.k_phi.setConstant(37.6991);
    cfg.k_rho_upper.setConstant(0.0013);
    cfg.k_rho_lower.setConstant(0.0013);
    cfg.load_side_control = false;
    ClosedLoop sys(g, cfg, TurbineModel::second_order, Disturbance({{0.0, g.bus_index(38), -7.35}}));
    const auto& L = sys.layout();
    Vector x = sys.initial_state();
    double worst = 0.0;
    for (int k = 0; k < 20000; ++k) {
        x = sys.step(k * 1e-3, 1e-3, x);
        worst = std::max(worst, (x.segment(L.mech, L.g) - x.segment(L.emu_mech, L.g)).cwiseAbs().maxCoeff());
    }
    CHECK(worst <= 1e-6);
}

TEST_CASE("AGC droop and integral") {
    const GridModel g = testing::ne39();
    ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::agc);
    cfg.alpha.setConstant(20.0); // R = 0.05
    const auto n = static_cast<Eigen::Index>(g.bus_count());
    const Vector flows = Vector::Zero(static_cast<Eigen::Index>(g.line_count()));

    const AgcOutput zero = agc_rhs(g, cfg, Vector::Zero(n), flows, Vector::Zero(1));
    CHECK(zero.command.cwiseAbs().maxCoeff() == 0.0);
    CHECK(zero.integral_rate.cwiseAbs().maxCoeff() == 0.0);

    const AgcOutput low = agc_rhs(g, cfg, Vector::Constant(n, -0.01), flows, Vector::Zero(1));
    for (std::size_t i : g.generators()) CHECK(low.command[static_cast<Eigen::Index>(i)] == doctest::Approx(0.2));
    for (std::size_t i : g.loads()) CHECK(low.command[static_cast<Eigen::Index>(i)] == 0.0);
    CHECK(low.integral_rate[0] > 0.0);

    const AgcOutput shifted = agc_rhs(g, cfg, Vector::Zero(n), flows, Vector::Constant(1, 1.0));
    CHECK(shifted.command.sum() == doctest::Approx(1.0));
}

TEST_CASE("controller config validation") {
    const GridModel g = testing::two_bus();
    ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::unified);
    cfg.k_lambda.resize(3);
    CHECK_THROWS_AS(cfg.validate(g), ValidationError);
    cfg = ControllerConfig::defaults(g, ControllerKind::decoupled);
    cfg.emulator_turbine_time[0] = 0.0;
    CHECK_THROWS_AS(cfg.validate(g), ValidationError);
    CHECK_THROWS_AS(parse_controller_kind("pid"), ValidationError);
}
