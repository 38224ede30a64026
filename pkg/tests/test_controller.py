import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import one_der, random_params
from voltsense.controller import (
    ControlProblem,
    InfeasibleControl,
    InvalidProblem,
    hinge_objective,
    solve_control,
    validate_problem,
)
from voltsense.lindistflow import build_sensitivities
from voltsense.network import DerFleet, random_radial_tree


def single_line_problem(q_max=0.2, gamma=1000.0, u_lo=0.9025):
    return ControlProblem(np.array([[0.4]]), np.array([[0.8]]), np.array([0.15]), np.array([0.1]),
                          1.0, one_der(q_max), np.array([u_lo]), np.array([1.1025]), gamma)


def grid_optimum(prob, step=1e-5):
    q = np.arange(0.0, prob.ders.q_max[0] + step / 2, step)
    u = prob.u0 + prob.R[0, 0] * (0 - prob.p_d[0]) + prob.X[0, 0] * (q - prob.q_d[0])
    pen = np.maximum(prob.u_lo[0] - u, 0) + np.maximum(u - prob.u_hi[0], 0)
    return float(np.min(q + prob.gamma * pen))


def test_zero_injection_inside_band():
    n = 3
    R = X = np.eye(n) * 0.1
    prob = ControlProblem.with_band(R, X, np.zeros(n), np.zeros(n), 1.0, one_der(0.1, n, 2))
    sp = solve_control(prob)
    assert sp.objective_value == 0.0
    assert np.all(sp.q_g == 0) and np.all(sp.p_g == 0)
    assert np.all(sp.slack_lo == 0) and np.all(sp.slack_hi == 0)


def test_single_line_reaches_band():
    sp = solve_control(single_line_problem())
    assert sp.q_g[0] == pytest.approx(0.053125, abs=1e-9)
    assert sp.u_pred[0] == pytest.approx(0.9025, abs=1e-9)
    assert sp.slack_lo[0] == pytest.approx(0.0, abs=1e-9)
    assert sp.duality_gap <= 1e-7 * (1 + abs(sp.objective_value))


def test_single_line_saturates():
    sp = solve_control(single_line_problem(q_max=0.03))
    assert sp.q_g[0] == 0.03
    assert sp.slack_lo[0] == pytest.approx(0.0185, abs=1e-9)


@pytest.mark.parametrize("q_max", [0.2, 0.03, 0.05313, 0.001])
@pytest.mark.parametrize("gamma", [0.5, 1.0, 1000.0])
def test_matches_grid_search(q_max, gamma):
    prob = single_line_problem(q_max=q_max, gamma=gamma)
    assert solve_control(prob).objective_value == pytest.approx(grid_optimum(prob), abs=1e-4)


def test_validation_errors(ieee37):
    prob = single_line_problem(gamma=-1.0)
    assert any("gamma" in e for e in validate_problem(prob))
    with pytest.raises(InvalidProblem):
        solve_control(prob)
    assert any("u_lo >= u_hi" in e for e in validate_problem(single_line_problem(u_lo=1.2)))

    bad = ControlProblem(np.array([[np.nan]]), np.array([[0.8]]), np.array([0.1]), np.array([0.1]),
                         1.0, one_der(0.1), np.array([0.9]), np.array([1.1]))
    assert any("non-finite" in e for e in validate_problem(bad))

    topo, params, loads, ders = ieee37
    S = build_sensitivities(topo, params)
    ok = ControlProblem.with_band(S.R, S.X, loads.p_d0, loads.q_d0, 1.0, ders)
    assert validate_problem(ok) == []


def test_hinge_equivalence_on_feeder(ieee37):
    topo, params, loads, ders = ieee37
    S = build_sensitivities(topo, params)
    for scale in (0.5, 1.0, 1.5):
        prob = ControlProblem.with_band(S.R, S.X, scale * loads.p_d0, scale * loads.q_d0, 1.0, ders)
        sp = solve_control(prob)
        assert sp.objective_value == pytest.approx(hinge_objective(prob, sp.p_g, sp.q_g), abs=1e-12)
        np.testing.assert_allclose(sp.slack_lo, np.maximum(prob.u_lo - sp.u_pred, 0))


def test_penalty_monotone_in_gamma(ieee37):
    topo, params, loads, ders = ieee37
    S = build_sensitivities(topo, params)
    prev = np.inf
    for gamma in (0.1, 1.0, 5.0, 20.0, 1000.0):
        prob = ControlProblem.with_band(S.R, S.X, 1.5 * loads.p_d0, 1.5 * loads.q_d0, 1.0, ders, gamma=gamma)
        sp = solve_control(prob)
        total = sp.slack_lo.sum() + sp.slack_hi.sum()
        assert total <= prev + 1e-9
        prev = total


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 12), seed=st.integers(0, 2**32 - 1))
def test_bounds_never_violated(n, seed):
    rng = np.random.default_rng(seed)
    topo = random_radial_tree(n, rng)
    S = build_sensitivities(topo, random_params(n, rng))
    lo_p = -rng.uniform(0, 0.1, n)
    ders = DerFleet(lo_p, lo_p + rng.uniform(0, 0.2, n), -rng.uniform(0, 0.1, n), rng.uniform(0, 0.2, n))
    prob = ControlProblem.with_band(S.R, S.X, rng.uniform(0, 0.5, n), rng.uniform(-0.2, 0.3, n), 1.0, ders,
                                    gamma=float(rng.uniform(0, 2000)))
    sp = solve_control(prob)
    assert np.all(sp.p_g >= ders.p_min) and np.all(sp.p_g <= ders.p_max)
    assert np.all(sp.q_g >= ders.q_min) and np.all(sp.q_g <= ders.q_max)


def _flow_problem(f_max):
    topo = random_radial_tree(3, np.random.default_rng(1))
    S = build_sensitivities(topo, random_params(3, np.random.default_rng(2)))
    ders = DerFleet(np.zeros(3), np.full(3, 0.1), np.zeros(3), np.zeros(3))
    return topo, ControlProblem.with_band(S.R, S.X, np.full(3, 0.3), np.zeros(3), 1.0, ders,
                                          f_max=f_max, flow_map=topo.incidence_inv)


def test_flow_limits_respected():
    topo, prob = _flow_problem(np.full(3, 0.85))
    sp = solve_control(prob)
    flows = topo.incidence_inv @ (sp.p_g - prob.p_d)
    assert np.all(np.abs(flows) <= 0.85 + 1e-9)


def test_flow_limits_infeasible_names_lines():
    _, prob = _flow_problem(np.full(3, 0.05))
    with pytest.raises(InfeasibleControl) as exc:
        solve_control(prob)
    assert exc.value.violated
    assert "flow" in str(exc.value)


def test_infinite_flow_limits_are_ignored():
    _, prob = _flow_problem(np.full(3, np.inf))
    assert solve_control(prob).solve_status == "optimal"
