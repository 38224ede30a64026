import json

import numpy as np
import pytest

from voltsense.controller import ControlProblem, solve_control
from voltsense.estimator import MeasurementWindow, estimate
from voltsense.scenario import (
    ScenarioConfig,
    SimulationTrace,
    bundled_config,
    read_snapshots,
    run_closed_loop,
    run_monte_carlo,
    write_monte_carlo,
    write_snapshots,
)


@pytest.fixture(scope="module")
def short_run():
    cfg = bundled_config(horizon=70, seed=5)
    snaps = []
    return cfg, run_closed_loop(cfg, snapshots=snaps), snaps


def test_config_validation():
    with pytest.raises(ValueError, match="mode"):
        ScenarioConfig(mode="magic")
    with pytest.raises(ValueError, match="band"):
        ScenarioConfig(v_lo=1.1, v_hi=1.0)
    with pytest.raises(ValueError, match="outside horizon"):
        ScenarioConfig(horizon=10, events=[{"step": 20, "line": [3, 23]}])
    with pytest.raises(ValueError, match="unknown"):
        ScenarioConfig.from_dict({"horizn": 3})


def test_config_file_round_trip(tmp_path):
    cfg = bundled_config(seed=9)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = ScenarioConfig.from_file(path)
    assert back == cfg
    assert back.events[0].line == (3, 23)


def test_no_control_without_load_noise_is_constant():
    cfg = bundled_config(mode="none", sigma_d=0.0, sigma_m=0.0, horizon=10, events=[])
    tr = run_closed_loop(cfg)
    v = tr.column("v_true")
    np.testing.assert_array_equal(v, np.broadcast_to(v[0], v.shape))
    assert np.all(tr.column("q_g") == 0)
    assert set(tr.column("solver_status")) == {"off"}


def test_deterministic():
    cfg = bundled_config(horizon=15, seed=3, events=[])
    a, b = run_closed_loop(cfg), run_closed_loop(cfg)
    np.testing.assert_array_equal(a.column("v_true"), b.column("v_true"))
    np.testing.assert_array_equal(a.column("q_g"), b.column("q_g"))


def test_controller_is_causal(short_run):
    """Set-points at step k are reproducible from snapshots up to step k alone."""
    cfg, tr, snaps = short_run
    feeder = cfg.load_feeder()
    topo, params, _, ders = feeder
    n = topo.bus_count
    c_lo = np.full(n, (cfg.v_lo + cfg.control_margin) ** 2)
    c_hi = np.full(n, (cfg.v_hi - cfg.control_margin) ** 2)
    for k in (0, 1, 30, 61, 69):
        w = MeasurementWindow(cfg.window)
        for s in snaps[: k + 1]:
            w.push(s)
        est = estimate(w, topo, params.alpha)
        prev = tr.records[k - 1] if k else None
        p_prev = prev.p_g if prev else np.zeros(n)
        q_prev = prev.q_g if prev else np.zeros(n)
        s = snaps[k]
        prob = ControlProblem(est.R_hat, est.X_hat, p_prev - s.p_meas, q_prev - s.q_meas, s.u0_meas,
                              ders, c_lo, c_hi, cfg.gamma)
        np.testing.assert_allclose(solve_control(prob).q_g, tr.records[k].q_g, atol=1e-9)


def test_event_changes_true_reactance(short_run):
    cfg, tr, _ = short_run
    k = cfg.load_feeder().topology.line_index(3, 23)
    x = tr.column("x_true")[:, k]
    assert np.all(x[:60] == x[0]) and np.all(x[60:] == 2 * x[0])


def test_trace_csv_round_trip(short_run, tmp_path):
    cfg, tr, _ = short_run
    path = tmp_path / "trace.csv"
    tr.to_csv(path)
    back = SimulationTrace.from_csv(path)
    assert back.status == tr.status and back.der_buses == tr.der_buses
    assert back.config == cfg.to_dict()
    np.testing.assert_array_equal(back.column("v_true"), tr.column("v_true"))
    np.testing.assert_array_equal(back.column("mae_X"), tr.column("mae_X"))
    assert list(back.column("solver_status")) == list(tr.column("solver_status"))


def test_snapshot_file_round_trip(short_run, tmp_path):
    _, _, snaps = short_run
    path = tmp_path / "snaps.csv"
    write_snapshots(snaps[:5], path)
    back = read_snapshots(path)
    assert [s.step for s in back] == [0, 1, 2, 3, 4]
    np.testing.assert_array_equal(back[3].q_meas, snaps[3].q_meas)
    np.testing.assert_array_equal(back[3].u_meas, snaps[3].u_meas)


def test_monte_carlo_deterministic_and_parallel(tmp_path):
    cfg = bundled_config()
    a = run_monte_carlo(cfg, [1, 3], replicas=4)
    b = run_monte_carlo(cfg, [1, 3], replicas=4, workers=2)
    assert [r.mae_x for r in a] == [r.mae_x for r in b]
    assert all(r.failures == 0 and r.replicas == 4 for r in a)
    write_monte_carlo(a, tmp_path / "mc.csv")
    assert (tmp_path / "mc.csv").read_text().startswith("window,replicas")
    with pytest.raises(ValueError):
        run_monte_carlo(cfg, [1], replicas=1)
