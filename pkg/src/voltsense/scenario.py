"""Closed-loop simulation and Monte Carlo estimation study."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .controller import ControlError, ControlProblem, ControlSetpoints, solve_control
from .estimator import EstimatedParameters, MeasurementWindow, estimate
from .lindistflow import SensitivityMatrices, build_sensitivities, predict_voltages
from .metrics import band_report, mae_matrix, mae_vector
from .network import Feeder, LineParameters, bundled_feeder_path, load_feeder
from .plant import MeasurementSnapshot, NoiseModel, PerturbationEvent, Plant, PowerFlowError

log = logging.getLogger(__name__)

MODES = ("estimated", "frozen", "none")


@dataclass
class ScenarioConfig:
    feeder: str = "ieee37.json"
    horizon: int = 150
    window: int = 20
    gamma: float = 1000.0
    v_lo: float = 0.95
    v_hi: float = 1.05
    sigma_d: float = 0.01
    sigma_m: float = 2e-4
    seed: int = 2018
    mode: str = "estimated"
    events: list[PerturbationEvent] = field(default_factory=list)
    f_max: float | list[float] | None = None
    initial_error: float = 0.0
    u0: float = 1.0
    plant_model: str = "nonlinear"
    estimate_every: int = 1
    control_margin: float = 0.0

    def __post_init__(self):
        self.events = [e if isinstance(e, PerturbationEvent) else PerturbationEvent(
            step=int(e["step"]), line=tuple(e["line"]), factor=float(e.get("factor", 2.0)),
            preserve_alpha=bool(e.get("preserve_alpha", True))) for e in self.events]
        errors = []
        if self.horizon < 1:
            errors.append("horizon must be >= 1")
        if self.window < 1:
            errors.append("window must be >= 1")
        if not 0 < self.v_lo < self.v_hi:
            errors.append("voltage band must satisfy 0 < v_lo < v_hi")
        if not 0 <= self.control_margin < (self.v_hi - self.v_lo) / 2:
            errors.append("control_margin must be in [0, (v_hi - v_lo) / 2)")
        if self.mode not in MODES:
            errors.append(f"mode must be one of {MODES}")
        if self.estimate_every < 1:
            errors.append("estimate_every must be >= 1")
        for e in self.events:
            if not 0 <= e.step < self.horizon:
                errors.append(f"event step {e.step} outside horizon")
        if errors:
            raise ValueError("; ".join(errors))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["events"] = [dataclasses.asdict(e) for e in self.events]
        for e in d["events"]:
            e["line"] = list(e["line"])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "ScenarioConfig":
        path = Path(path)
        cfg = cls.from_dict(json.loads(path.read_text()))
        feeder = Path(cfg.feeder)
        if not feeder.is_absolute() and (path.parent / feeder).exists():
            cfg.feeder = str((path.parent / feeder).resolve())
        return cfg

    def load_feeder(self) -> Feeder:
        path = Path(self.feeder)
        if not path.exists():
            path = bundled_feeder_path(self.feeder)
        return load_feeder(path)

    def replace(self, **kw) -> "ScenarioConfig":
        return dataclasses.replace(self, **kw)


def bundled_config(**overrides) -> ScenarioConfig:
    """The adaptive-recovery scenario: line (3, 23) doubled at step 60."""
    data = json.loads(bundled_feeder_path("scenario_ieee37.json").read_text())
    data.update(overrides)
    return ScenarioConfig.from_dict(data)


@dataclass
class StepRecord:
    step: int
    v_true: np.ndarray
    v_meas: np.ndarray
    p_g: np.ndarray
    q_g: np.ndarray
    x_true: np.ndarray
    x_hat: np.ndarray
    mae_x: float
    mae_r: float
    mae_X: float
    mae_R: float
    violations: int
    max_violation: float
    solver_status: str
    effective_rank: int
    sweeps: int
    model_gap: float = 0.0
    u_pred: np.ndarray = field(repr=False, default=None)


@dataclass
class SimulationTrace:
    config: dict
    bus_count: int
    der_buses: tuple[int, ...]
    records: list[StepRecord] = field(default_factory=list)
    status: str = "complete"

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    @property
    def steps(self) -> np.ndarray:
        return self.column("step")

    def to_csv(self, path) -> None:
        n = self.bus_count
        header = ["step"]
        header += [f"v_true_{i}" for i in range(1, n + 1)]
        header += [f"v_meas_{i}" for i in range(1, n + 1)]
        header += [f"p_g_{i}" for i in range(1, n + 1)]
        header += [f"q_g_{i}" for i in range(1, n + 1)]
        header += [f"x_true_{i}" for i in range(1, n + 1)]
        header += [f"x_hat_{i}" for i in range(1, n + 1)]
        header += ["mae_x", "mae_r", "mae_X", "mae_R", "violations", "max_violation",
                   "solver_status", "effective_rank", "sweeps", "model_gap"]
        with open(path, "w", newline="") as fh:
            fh.write("# config: " + json.dumps(self.config) + "\n")
            fh.write(f"# status: {self.status}\n")
            fh.write("# der_buses: " + json.dumps(list(self.der_buses)) + "\n")
            w = csv.writer(fh)
            w.writerow(header)
            for r in self.records:
                row = [r.step]
                for arr in (r.v_true, r.v_meas, r.p_g, r.q_g, r.x_true, r.x_hat):
                    row += [repr(float(v)) for v in arr]
                row += [repr(r.mae_x), repr(r.mae_r), repr(r.mae_X), repr(r.mae_R),
                        r.violations, repr(r.max_violation), r.solver_status,
                        r.effective_rank, r.sweeps, repr(r.model_gap)]
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "SimulationTrace":
        meta = {}
        with open(path, newline="") as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("# "):
                key, _, val = line[2:].partition(": ")
                meta[key] = val
            else:
                body.append(line)
        rows = list(csv.DictReader(body))
        config = json.loads(meta.get("config", "{}"))
        der_buses = tuple(json.loads(meta.get("der_buses", "[]")))
        n = sum(1 for k in rows[0] if k.startswith("v_true_")) if rows else 0

        def vec(row, prefix):
            return np.array([float(row[f"{prefix}_{i}"]) for i in range(1, n + 1)])

        records = [
            StepRecord(
                step=int(row["step"]),
                v_true=vec(row, "v_true"), v_meas=vec(row, "v_meas"),
                p_g=vec(row, "p_g"), q_g=vec(row, "q_g"),
                x_true=vec(row, "x_true"), x_hat=vec(row, "x_hat"),
                mae_x=float(row["mae_x"]), mae_r=float(row["mae_r"]),
                mae_X=float(row["mae_X"]), mae_R=float(row["mae_R"]),
                violations=int(row["violations"]), max_violation=float(row["max_violation"]),
                solver_status=row["solver_status"], effective_rank=int(row["effective_rank"]),
                sweeps=int(row["sweeps"]), model_gap=float(row["model_gap"]),
            )
            for row in rows
        ]
        return cls(config, n, der_buses, records, meta.get("status", "complete"))


def _initial_guess(params: LineParameters, rel_error: float, seed: int) -> LineParameters:
    if rel_error == 0:
        return params
    rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(3)[2])
    x = params.x * (1.0 + rel_error * rng.standard_normal(params.x.shape))
    return LineParameters.from_alpha(np.abs(x), params.alpha)


def _f_max(cfg: ScenarioConfig, n: int):
    if cfg.f_max is None:
        return None
    return np.broadcast_to(np.asarray(cfg.f_max, dtype=float), (n,)).copy()


def run_closed_loop(cfg: ScenarioConfig, feeder: Feeder | None = None,
                    snapshots: list | None = None) -> SimulationTrace:
    """Simulate the estimator/controller loop for ``cfg.horizon`` steps.

    Each step: draw loads, apply due events, solve the plant under the
    set-points commanded at the previous step, measure, update the window and
    estimate, then dispatch new set-points. Measured snapshots are appended to
    ``snapshots`` when a list is given.
    """
    feeder = feeder or cfg.load_feeder()
    topo, params0, loads, ders = feeder
    n = topo.bus_count
    plant = Plant(topo, params0, loads, NoiseModel(cfg.sigma_d, cfg.sigma_m, cfg.seed),
                  u0=cfg.u0, model=cfg.plant_model)
    window = MeasurementWindow(cfg.window)
    frozen = build_sensitivities(topo, params0)
    guess = _initial_guess(params0, cfg.initial_error, cfg.seed)
    model: SensitivityMatrices = build_sensitivities(topo, guess)
    x_hat = guess.x.copy()
    est: EstimatedParameters | None = None
    u_lo = np.full(n, cfg.v_lo ** 2)
    u_hi = np.full(n, cfg.v_hi ** 2)
    # the controller aims inside a slightly narrower band than the one scored
    c_lo = np.full(n, (cfg.v_lo + cfg.control_margin) ** 2)
    c_hi = np.full(n, (cfg.v_hi - cfg.control_margin) ** 2)
    f_max = _f_max(cfg, n)
    events = sorted(cfg.events, key=lambda e: e.step)

    trace = SimulationTrace(cfg.to_dict(), n, tuple(int(b) for b in ders.buses))
    held = ControlSetpoints.zeros(n)

    for k in range(cfg.horizon):
        plant.advance()
        plant.step_loads()
        for ev in events:
            if ev.step == k:
                plant.apply_event(ev)
        try:
            truth = plant.solve()
        except PowerFlowError as exc:
            log.error("plant failed at step %d: %s", k, exc)
            trace.status = f"plant non-convergence at step {k}"
            break
        snap = plant.measure(truth)
        if snapshots is not None:
            snapshots.append(snap)
        window.push(snap)

        if k % cfg.estimate_every == 0:
            est = estimate(window, topo, params0.alpha)
            x_hat = est.x_hat
            if cfg.mode == "estimated":
                model = est.sens

        true_params = plant.state.params
        S_true = build_sensitivities(topo, true_params)
        p_true, q_true = plant.net_injections()
        gap = float(np.max(np.abs(truth.u - predict_voltages(S_true, p_true, q_true, cfg.u0).u)))
        S_hat = est.sens if est is not None else build_sensitivities(topo, guess)

        status = "off"
        u_pred = np.full(n, np.nan)
        if cfg.mode != "none":
            S = frozen if cfg.mode == "frozen" else model
            # demand is inferred from net-injection readings and the set-points in force
            p_d = plant.state.p_g - snap.p_meas
            q_d = plant.state.q_g - snap.q_meas
            prob = ControlProblem(S.R, S.X, p_d, q_d, snap.u0_meas, ders, c_lo, c_hi, cfg.gamma,
                                  f_max=f_max, flow_map=topo.incidence_inv)
            try:
                sp = solve_control(prob)
                held = sp
                status = sp.solve_status
                u_pred = sp.u_pred
            except ControlError as exc:
                log.warning("controller failed at step %d, holding set-points: %s", k, exc)
                status = f"held:{type(exc).__name__}"

        band = band_report(truth.u, u_lo, u_hi)
        trace.records.append(StepRecord(
            step=k,
            v_true=np.sqrt(truth.u),
            v_meas=np.sqrt(np.maximum(snap.u_meas, 0.0)),
            p_g=held.p_g.copy(),
            q_g=held.q_g.copy(),
            x_true=true_params.x.copy(),
            x_hat=np.asarray(x_hat).copy(),
            mae_x=mae_vector(x_hat, true_params.x),
            mae_r=mae_vector(params0.alpha * x_hat, true_params.r),
            mae_X=mae_matrix(S_hat.X, S_true.X),
            mae_R=mae_matrix(S_hat.R, S_true.R),
            violations=band.violation_count,
            max_violation=band.max_violation,
            solver_status=status,
            effective_rank=est.effective_rank if est is not None else 0,
            sweeps=plant.last_sweeps,
            model_gap=gap,
            u_pred=u_pred,
        ))
        plant.apply_setpoints(held.p_g, held.q_g)

    return trace


# --- Monte Carlo estimation study -------------------------------------------

@dataclass(frozen=True)
class MonteCarloRow:
    window: int
    replicas: int
    mae_x_mean: float
    mae_x_var: float
    mae_X_mean: float
    mae_X_var: float
    failures: int
    mae_x: tuple[float, ...] = field(repr=False, default=())
    mae_X: tuple[float, ...] = field(repr=False, default=())


def _replica(feeder: Feeder, cfg: ScenarioConfig, m: int, seed) -> tuple[float, float]:
    topo, params, loads, _ = feeder
    noise = NoiseModel(cfg.sigma_d, cfg.sigma_m)
    plant = Plant(topo, params, loads, noise, u0=cfg.u0, model=cfg.plant_model, seed=seed)
    window = MeasurementWindow(m)
    for _ in range(m):
        plant.advance()
        plant.step_loads()
        window.push(plant.measure(plant.solve()))
    est = estimate(window, topo, params.alpha)
    X = build_sensitivities(topo, params).X
    return mae_vector(est.x_hat, params.x), mae_matrix(est.X_hat, X)


def run_monte_carlo(cfg: ScenarioConfig, windows, replicas: int, workers: int = 1,
                    feeder: Feeder | None = None) -> list[MonteCarloRow]:
    """Estimation accuracy versus window size over independent replicas.

    Replica ``j`` uses the same child seed for every window size, so the
    rows differ only through the number of snapshots used.
    """
    if replicas < 2:
        raise ValueError("need at least two replicas")
    feeder = feeder or cfg.load_feeder()
    seeds = np.random.SeedSequence(cfg.seed).spawn(replicas)
    rows = []
    for m in windows:
        m = int(m)

        def one(seed, m=m):
            try:
                return _replica(feeder, cfg, m, seed)
            except (PowerFlowError, ValueError) as exc:
                log.warning("replica failed (m=%d): %s", m, exc)
                return None

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                results = list(pool.map(one, seeds))
        else:
            results = [one(s) for s in seeds]
        ok = [r for r in results if r is not None]
        mx = np.array([r[0] for r in ok])
        mX = np.array([r[1] for r in ok])
        rows.append(MonteCarloRow(
            window=m, replicas=len(ok),
            mae_x_mean=float(mx.mean()) if ok else float("nan"),
            mae_x_var=float(mx.var(ddof=1)) if len(ok) > 1 else float("nan"),
            mae_X_mean=float(mX.mean()) if ok else float("nan"),
            mae_X_var=float(mX.var(ddof=1)) if len(ok) > 1 else float("nan"),
            failures=replicas - len(ok),
            mae_x=tuple(mx.tolist()), mae_X=tuple(mX.tolist()),
        ))
    return rows


def write_monte_carlo(rows: list[MonteCarloRow], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["window", "replicas", "mae_x_mean", "mae_x_var", "mae_X_mean", "mae_X_var", "failures"])
        for r in rows:
            w.writerow([r.window, r.replicas, repr(r.mae_x_mean), repr(r.mae_x_var),
                        repr(r.mae_X_mean), repr(r.mae_X_var), r.failures])


# --- snapshot files ----------------------------------------------------------

def write_snapshots(snaps: list[MeasurementSnapshot], path) -> None:
    n = len(snaps[0].u_meas)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "u0"] + [f"u_{i}" for i in range(1, n + 1)]
                   + [f"p_{i}" for i in range(1, n + 1)] + [f"q_{i}" for i in range(1, n + 1)])
        for s in snaps:
            w.writerow([s.step, repr(float(s.u0_meas))]
                       + [repr(float(v)) for v in np.concatenate([s.u_meas, s.p_meas, s.q_meas])])


def read_snapshots(path) -> list[MeasurementSnapshot]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return []
    n = sum(1 for k in rows[0] if k.startswith("u_"))
    out = []
    for row in rows:
        vec = lambda pre: np.array([float(row[f"{pre}_{i}"]) for i in range(1, n + 1)])  # noqa: E731
        out.append(MeasurementSnapshot(int(row["step"]), float(row["u0"]), vec("u"), vec("p"), vec("q")))
    return out
