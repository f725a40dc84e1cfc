#include "doctest.h"
#include "support.hpp"

#include "ucsim/error.hpp"
#include "ucsim/stability.hpp"

#include <algorithm>
#include <cmath>

using namespace ucsim;

namespace {

const ControllerKind kinds[] = {ControllerKind::unified, ControllerKind::decoupled, ControllerKind::agc,
                                ControllerKind::droop};
const TurbineModel turbines[] = {TurbineModel::first_order, TurbineModel::second_order};

} // namespace

TEST_CASE("analytic Jacobian matches differences away from equilibrium") {
    struct Case {
        const char* name;
        GridModel grid;
        bool areas;
    };
    const Case cases[] = {{"two_bus", testing::two_bus(), false},
                          {"three_bus_areas", testing::three_bus_areas(), true},
                          {"ne39", testing::ne39(), false}};
    for (const Case& c : cases)
        for (auto kind : kinds)
            for (auto turbine : turbines) {
                CAPTURE(c.name);
                CAPTURE(to_string(kind));
                CAPTURE(to_string(turbine));
                ClosedLoop sys(c.grid, testing::with_kind(c.grid, kind, c.areas), turbine);
                CHECK(testing::jacobian_mismatch(sys, testing::perturbed_state(sys, 11), false) <= 1e-6);
            }
}

TEST_CASE("Jacobian with opted-out loads and saturated commands") {
    const GridModel g = testing::ne39();
    ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::unified);
    cfg.load_side_control = false;
    ClosedLoop sys(g, cfg, TurbineModel::second_order);
    Vector x = testing::perturbed_state(sys, 5);
    x[sys.layout().lambda + 3] = 1.0; // drives the command at bus 4 into its lower limit
    CHECK(testing::jacobian_mismatch(sys, x, false) <= 1e-6);
    cfg.load_side_control = true;
    ClosedLoop sys2(g, cfg, TurbineModel::second_order);
    CHECK(testing::jacobian_mismatch(sys2, x, false) <= 1e-6);
}

TEST_CASE("linearize refuses a non-equilibrium") {
    const GridModel g = testing::two_bus();
    ClosedLoop sys(g, ControllerConfig::defaults(g, ControllerKind::unified), TurbineModel::second_order);
    CHECK_THROWS_AS(linearize(sys, testing::perturbed_state(sys, 1)), ValidationError);
    CHECK_NOTHROW(linearize(sys, sys.initial_state()));
}

TEST_CASE("lone generator under UC matches the hand-derived matrix") {
    const double M = 4, D = 1.5, Tt = 0.5, Tg = 0.25, alpha = 3, K = 0.7;
    const GridModel g = parse_grid("[bus]\nid=1 kind=gen M=4 D=1.5 Tt=0.5 Tg=0.25 pmin=-1 pmax=1 alpha=3\n");
    ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::unified);
    cfg.k_lambda.setConstant(K);
    ClosedLoop sys(g, cfg, TurbineModel::second_order);
    const LinearModel model = linearize(sys, sys.initial_state());
    REQUIRE(model.dimension() == 4);
    CHECK(model.labels == std::vector<std::string>{"omega[1]", "pm[1]", "v[1]", "lambda[1]"});
    Matrix expect(4, 4);
    // clang-format off
    expect << -D / M,     1 / M,   0,       0,
               0,        -1 / Tt,  1 / Tt,  0,
              -alpha / Tg, 0,     -1 / Tg, -alpha / Tg,
               0,         K,       0,       0;
    // clang-format on
    CHECK((model.a - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("equilibrium Jacobians for every combination on the two-bus grid") {
    const GridModel g = testing::two_bus();
    for (auto kind : kinds)
        for (auto turbine : turbines) {
            CAPTURE(to_string(kind));
            CAPTURE(to_string(turbine));
            ClosedLoop sys(g, ControllerConfig::defaults(g, kind), turbine);
            CHECK(testing::jacobian_mismatch(sys, sys.initial_state(), true) <= 1e-6);
        }
}

TEST_CASE("decoupled loop is block triangular in estimation-error coordinates") {
    const GridModel g = testing::ne39();
    ControllerConfig cfg = ControllerConfig::defaults(g, ControllerKind::decoupled);
    ClosedLoop sys(g, cfg, TurbineModel::second_order);
    const LinearModel model = linearize(sys, sys.initial_state());
    const auto& L = sys.layout();

    // Replace the emulator states by their errors: sigma = pM - pM_est, delta = v - v_est.
    const auto dim = model.dimension();
    auto row_of = [&](Eigen::Index flat) {
        auto it = std::find(model.states.begin(), model.states.end(), flat);
        REQUIRE(it != model.states.end());
        return static_cast<Eigen::Index>(it - model.states.begin());
    };
    Matrix s = Matrix::Identity(dim, dim);
    for (Eigen::Index k = 0; k < L.g; ++k) {
        s(row_of(L.emu_mech + k), row_of(L.mech + k)) = -1.0;
        s(row_of(L.emu_valve + k), row_of(L.valve + k)) = -1.0;
    }
    const Matrix a = s * model.a * s.inverse();

    enum Group { plant, control, error };
    std::vector<Group> group(static_cast<std::size_t>(dim));
    for (Eigen::Index r = 0; r < dim; ++r) {
        const auto flat = model.states[static_cast<std::size_t>(r)];
        group[static_cast<std::size_t>(r)] = flat < L.lambda ? plant : flat < L.emu_mech ? control : error;
    }
    double leak = 0.0;
    for (Eigen::Index r = 0; r < dim; ++r)
        for (Eigen::Index c = 0; c < dim; ++c) {
            const Group gr = group[static_cast<std::size_t>(r)];
            const Group gc = group[static_cast<std::size_t>(c)];
            const bool must_vanish = (gr != plant && gc == plant) || (gr == error && gc == control);
            if (must_vanish) leak = std::max(leak, std::abs(a(r, c)));
        }
    CHECK(leak < 1e-9 * a.cwiseAbs().maxCoeff());
}

TEST_CASE("eigenvalues of small matrices") {
    Matrix d(2, 2);
    d << -1, 0, 0, -2;
    const EigenReport a = eigenvalues(d);
    REQUIRE(a.values.size() == 2);
    CHECK(a.values[0].real() == doctest::Approx(-1));
    CHECK(a.values[1].real() == doctest::Approx(-2));
    CHECK(a.classification == Stability::stable);
    CHECK(a.abscissa == doctest::Approx(-1));

    Matrix rot(2, 2);
    rot << 0, 1, -1, 0;
    const EigenReport b = eigenvalues(rot);
    CHECK(b.classification == Stability::marginal);
    CHECK(std::abs(b.values[0].imag()) == doctest::Approx(1));
    CHECK(conjugate_closure_error(b.values) < 1e-15);

    Matrix up(1, 1);
    up << 0.5;
    CHECK(eigenvalues(up).classification == Stability::unstable);
    CHECK(eigenvalues(Matrix(0, 0)).abscissa == -std::numeric_limits<double>::infinity());
}

TEST_CASE("vanishing gains leave the droop-controlled plant spectrum") {
    const GridModel g = testing::two_bus();
    ControllerConfig droop = ControllerConfig::defaults(g, ControllerKind::droop);
    ClosedLoop plant(g, droop, TurbineModel::second_order);
    const EigenReport base = eigenvalues(linearize(plant, plant.initial_state()));

    ControllerConfig uc = ControllerConfig::defaults(g, ControllerKind::unified);
    uc.load_side_control = false; // the droop baseline leaves loads alone
    const ControllerConfig tiny = scale_gains(uc, 1e-9);
    ClosedLoop sys(g, tiny, TurbineModel::second_order);
    const EigenReport rep = eigenvalues(linearize(sys, sys.initial_state()));

    std::vector<std::complex<double>> moving;
    for (auto v : rep.values)
        if (std::abs(v) > 1e-3) moving.push_back(v);
    REQUIRE(moving.size() == base.values.size());
    for (std::size_t k = 0; k < moving.size(); ++k) CHECK(std::abs(moving[k] - base.values[k]) < 1e-6);
    CHECK(base.abscissa < 0.0);

    const auto sweep = gain_sweep(g, uc, TurbineModel::second_order, {1e-9, 1e-6, 1e-3});
    REQUIRE(sweep.size() == 3);
    for (const auto& p : sweep) {
        CHECK(p.error.empty());
        CHECK(p.abscissa <= 1e-8);
    }
}

TEST_CASE("frozen congestion multipliers change the model size") {
    const GridModel g = testing::two_bus();
    ClosedLoop sys(g, ControllerConfig::defaults(g, ControllerKind::unified), TurbineModel::second_order);
    ActiveSet act = ActiveSet::at(sys, sys.initial_state());
    CHECK(std::none_of(act.rho_upper.begin(), act.rho_upper.end(), [](bool b) { return b; }));
    const auto small = linearize(sys, sys.initial_state(), &act).dimension();
    act.rho_upper[0] = true;
    CHECK(linearize(sys, sys.initial_state(), &act).dimension() == small + 1);
}
