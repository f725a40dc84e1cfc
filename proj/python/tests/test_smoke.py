from pathlib import Path

import numpy as np
import pytest

import ucsim

DATA = Path(__file__).resolve().parents[2] / "data"


def test_projection():
    assert ucsim.project(5.0, -1.0) == 5.0
    assert ucsim.project(-3.0, 0.0) == 0.0
    assert ucsim.project(-3.0, 2.0) == -3.0
    assert ucsim.control_command(20.0, 0.01, 0.02, -1.0, 1.0) == pytest.approx(-0.6)


def test_dispatch_two_bus():
    sol = ucsim.dispatch(DATA / "grids" / "two_bus.grid", np.array([-0.5, 0.0]), np.ones(2))
    assert sol["status"] == "optimal"
    np.testing.assert_allclose(sol["p"], [0.25, 0.25], atol=1e-10)


def test_eigen_study():
    rows = ucsim.eigen(DATA / "scenarios" / "eigen_ne39.scn")
    signs = {(r["controller"], r["turbine"]): r["abscissa"] > 0 for r in rows}
    assert signs == {("uc", "first_order"): False, ("uc", "second_order"): True, ("duc", "second_order"): False}
    assert all(np.iscomplexobj(r["eigenvalues"]) for r in rows)


def test_verify_four_bus():
    out = ucsim.verify(DATA / "scenarios" / "oracle_congested_uc.scn")
    assert out["pass"], out["error"]
    assert out["max_p_error"] < 1e-3


def test_run_returns_series():
    out = ucsim.run(DATA / "scenarios" / "oracle_uncongested_duc.scn")
    assert out["settled"]
    assert out["series"].shape == (len(out["times"]), len(out["names"]))
    assert "p[2]" in out["names"]


def test_errors_are_typed():
    with pytest.raises(ucsim.ParseError):
        ucsim.run(DATA / "scenarios" / "does_not_exist.scn")
    with pytest.raises(ucsim.Error):
        ucsim.dispatch(DATA / "grids" / "two_bus.grid", np.zeros(3), np.ones(3))
