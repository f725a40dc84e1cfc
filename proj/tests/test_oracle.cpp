#include "doctest.h"
#include "support.hpp"

#include "ucsim/error.hpp"
#include "ucsim/oracle.hpp"

#include <cmath>

using namespace ucsim;

static DispatchProblem two_bus_problem(double r1, double r2, double alpha = 1.0) {
    DispatchProblem pr;
    pr.grid = testing::two_bus();
    pr.injection.resize(2);
    pr.injection << r1, r2;
    pr.alpha = Vector::Constant(2, alpha);
    return pr;
}

TEST_CASE("no disturbance, nothing to do") {
    const auto sol = solve_dispatch(two_bus_problem(0.0, 0.0));
    REQUIRE(sol.status == DispatchStatus::optimal);
    CHECK(sol.p.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(sol.flows.cwiseAbs().maxCoeff() < 1e-12);
    CHECK(sol.objective == doctest::Approx(0.0).scale(1.0));
}

TEST_CASE("equal marginal disutility splits the shortfall") {
    const DispatchProblem pr = two_bus_problem(-0.5, 0.0);
    const auto sol = solve_dispatch(pr);
    REQUIRE(sol.status == DispatchStatus::optimal);
    CHECK(sol.p[0] == doctest::Approx(0.25).epsilon(1e-10));
    CHECK(sol.p[1] == doctest::Approx(0.25).epsilon(1e-10));
    CHECK(sol.balance_multiplier[0] == doctest::Approx(-0.25).epsilon(1e-10));
    CHECK(kkt_residuals(pr, sol).max() < 1e-9);
    CHECK(sol.active.empty());
}

TEST_CASE("binding line limit lands on the facet found by grid search") {
    DispatchProblem pr = two_bus_problem(-0.5, 0.0);
    pr.grid = pr.grid.with_line_limits(0, -0.1, 0.1);
    const auto sol = solve_dispatch(pr);
    REQUIRE(sol.status == DispatchStatus::optimal);
    CHECK(sol.flows[0] == doctest::Approx(-0.1).epsilon(1e-10));
    CHECK(sol.flow_lower_multiplier[0] > 0.0);
    CHECK(sol.objective == doctest::Approx(0.085).epsilon(1e-10));
    CHECK(std::abs(grid_search_objective(pr, 1e-3) - sol.objective) <= 1e-6);
    CHECK(kkt_residuals(pr, sol).max() < 1e-9);
}

TEST_CASE("control limits bind") {
    DispatchProblem pr = two_bus_problem(-0.5, 0.0);
    pr.grid = pr.grid.with_control_limits(1, -0.1, 0.1);
    const auto sol = solve_dispatch(pr);
    REQUIRE(sol.status == DispatchStatus::optimal);
    CHECK(sol.p[1] == doctest::Approx(0.1));
    CHECK(sol.p[0] == doctest::Approx(0.4));
    CHECK(sol.control_upper_multiplier[1] > 0.0);
    CHECK(std::abs(grid_search_objective(pr, 1e-3) - sol.objective) <= 1e-6);
}

TEST_CASE("infeasible shortfall is reported") {
    DispatchProblem pr = two_bus_problem(-5.0, 0.0);
    const auto sol = solve_dispatch(pr);
    CHECK(sol.status == DispatchStatus::infeasible);
    CHECK_FALSE(sol.message.empty());
}

TEST_CASE("fixed buses carry no control") {
    DispatchProblem pr = two_bus_problem(-0.5, 0.0);
    pr.alpha[1] = 0.0;
    const auto sol = solve_dispatch(pr);
    REQUIRE(sol.status == DispatchStatus::optimal);
    CHECK(sol.p[1] == 0.0);
    CHECK(sol.p[0] == doctest::Approx(0.5));
}

TEST_CASE("four-bus radial instances agree with brute force") {
    const GridModel base = testing::four_bus_grid();
    DispatchProblem pr;
    pr.grid = base;
    pr.injection = base.nominal_injections();
    pr.injection[1] -= 1.0;
    pr.alpha = Vector::Constant(4, 20.0);
    pr.alpha[1] = 0.0; // keeps the search at three controllable buses

    for (int variant = 0; variant < 3; ++variant) {
        CAPTURE(variant);
        DispatchProblem q = pr;
        if (variant == 1) q.grid = base.with_line_limits(0, -3, 1.1);
        if (variant == 2) q.grid = base.with_control_limits(3, -2, 0.1);
        const auto sol = solve_dispatch(q);
        REQUIRE(sol.status == DispatchStatus::optimal);
        CHECK(kkt_residuals(q, sol).max() < 1e-9);
        // Optima off the search lattice: the lattice error is below alpha * n * (res / 2)^2.
        CHECK(std::abs(grid_search_objective(q, 1e-3) - sol.objective) <= 20.0 * 3 * 0.25e-6);
    }
}

TEST_CASE("meshed grid with area schedules satisfies KKT") {
    DispatchProblem pr;
    pr.grid = testing::three_bus_areas();
    pr.injection = pr.grid.nominal_injections();
    pr.injection[1] -= 0.4;
    pr.alpha = Vector::Constant(3, 5.0);
    pr.area_control = true;
    const auto sol = solve_dispatch(pr);
    REQUIRE(sol.status == DispatchStatus::optimal);
    CHECK(kkt_residuals(pr, sol).max() < 1e-9);
    const Area& a = pr.grid.areas()[0];
    double exported = 0.0;
    for (const TieLine& t : a.ties) exported += t.sign * sol.flows[static_cast<Eigen::Index>(t.line)];
    CHECK(exported == doctest::Approx(a.schedule).epsilon(1e-9));
}

TEST_CASE("39-bus dispatch satisfies KKT") {
    const GridModel g = testing::ne39();
    ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::unified);
    cfg.alpha.setConstant(20.0);
    const auto pr = DispatchProblem::from(g, cfg, Disturbance({{0.0, g.bus_index(38), -7.35}}));
    const auto sol = solve_dispatch(pr);
    REQUIRE(sol.status == DispatchStatus::optimal);
    CHECK(kkt_residuals(pr, sol).max() < 1e-8);
    CHECK(sol.p.sum() == doctest::Approx(7.35).epsilon(1e-9));
}

TEST_CASE("dispatch text round-trips") {
    DispatchProblem pr = two_bus_problem(-0.5, 0.0);
    pr.grid = pr.grid.with_line_limits(0, -0.1, 0.1);
    const auto sol = solve_dispatch(pr);
    const std::string text = write_dispatch(pr.grid, sol);
    const auto back = parse_dispatch(pr.grid, text);
    CHECK(back.status == sol.status);
    CHECK(back.objective == sol.objective);
    CHECK(back.iterations == sol.iterations);
    CHECK(back.p == sol.p);
    CHECK(back.theta == sol.theta);
    CHECK(back.flows == sol.flows);
    CHECK(back.flow_lower_multiplier == sol.flow_lower_multiplier);
    CHECK(back.balance_multiplier == sol.balance_multiplier);
    CHECK(write_dispatch(pr.grid, back) == text);
    CHECK_THROWS_AS(parse_dispatch(pr.grid, "[bus]\nid=9 p=0\n"), Error);
}

TEST_CASE("comparison needs a settled run") {
    const DispatchProblem pr = two_bus_problem(-0.5, 0.0);
    const auto sol = solve_dispatch(pr);
    EquilibriumSnapshot snap{sol.p, sol.flows, Vector::Zero(2), Vector::Zero(2), false};
    CHECK_THROWS_AS(verify_equilibrium(snap, pr, sol), NotSettledError);
    snap.settled = true;
    snap.lambda = sol.balance_multiplier / 1.0; // alpha = 1
    const auto rep = verify_equilibrium(snap, pr, sol);
    CHECK(rep.pass);
    CHECK(rep.max_multiplier_error < 1e-12);
    snap.p[0] += 0.01;
    CHECK_FALSE(verify_equilibrium(snap, pr, sol).pass);
}
