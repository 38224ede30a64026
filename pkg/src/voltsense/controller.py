"""DER dispatch by linear programming against a (possibly estimated) sensitivity model.

Decision vector, in order: ``p_g`` (N), ``q_g`` (N), ``s_lo`` (N), ``s_hi`` (N).
The hinge penalties on the squared-voltage band are carried by the two
nonnegative slack blocks, so the problem is an LP::

    min  1'p_g + 1'q_g + gamma 1'(s_lo + s_hi)
    s.t. u = u0 + R(p_g - p_d) + X(q_g - q_d)
         s_lo >= u_lo - u,  s_hi >= u - u_hi,  s >= 0
         p_min <= p_g <= p_max,  q_min <= q_g <= q_max
         -f_max <= M^-1 (p_g - p_d) <= f_max
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .network import DerFleet

GAP_TOL = 1e-7


class ControlError(RuntimeError):
    pass


class InvalidProblem(ControlError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


class InfeasibleControl(ControlError):
    def __init__(self, message, violated=()):
        self.violated = tuple(violated)
        super().__init__(message)


@dataclass(frozen=True)
class ControlProblem:
    R: np.ndarray
    X: np.ndarray
    p_d: np.ndarray
    q_d: np.ndarray
    u0: float
    ders: DerFleet
    u_lo: np.ndarray
    u_hi: np.ndarray
    gamma: float = 1000.0
    f_max: np.ndarray | None = None
    flow_map: np.ndarray | None = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return len(self.p_d)

    @classmethod
    def with_band(cls, R, X, p_d, q_d, u0, ders, v_lo=0.95, v_hi=1.05, **kw) -> "ControlProblem":
        n = len(p_d)
        return cls(R=np.asarray(R, float), X=np.asarray(X, float),
                   p_d=np.asarray(p_d, float), q_d=np.asarray(q_d, float), u0=float(u0), ders=ders,
                   u_lo=np.full(n, v_lo ** 2), u_hi=np.full(n, v_hi ** 2), **kw)


@dataclass(frozen=True)
class ControlSetpoints:
    p_g: np.ndarray
    q_g: np.ndarray
    u_pred: np.ndarray
    slack_lo: np.ndarray
    slack_hi: np.ndarray
    objective_value: float
    solve_status: str
    duality_gap: float = 0.0

    @classmethod
    def zeros(cls, n: int, status: str = "idle") -> "ControlSetpoints":
        z = np.zeros(n)
        return cls(z, z, np.full(n, np.nan), z, z, 0.0, status)


def validate_problem(prob: ControlProblem) -> list[str]:
    """Return every violated problem invariant; an empty list means well-formed."""
    errors = []
    n = prob.n
    for name in ("R", "X"):
        mat = np.asarray(getattr(prob, name))
        if mat.shape != (n, n):
            errors.append(f"{name} has shape {mat.shape}, expected {(n, n)}")
        elif not np.all(np.isfinite(mat)):
            errors.append(f"{name} has non-finite entries")
    for name in ("q_d", "u_lo", "u_hi"):
        if np.shape(getattr(prob, name)) != (n,):
            errors.append(f"{name} must have length {n}")
    if not np.all(np.isfinite(prob.p_d)) or not np.all(np.isfinite(prob.q_d)):
        errors.append("demand vectors have non-finite entries")
    if not np.isfinite(prob.u0) or prob.u0 <= 0:
        errors.append("u0 must be positive and finite")
    if not np.isfinite(prob.gamma) or prob.gamma < 0:
        errors.append(f"gamma must be nonnegative, got {prob.gamma}")
    if np.shape(prob.u_lo) == np.shape(prob.u_hi) == (n,):
        bad = np.flatnonzero(~(np.asarray(prob.u_lo) < np.asarray(prob.u_hi)))
        if bad.size:
            errors.append(f"u_lo >= u_hi at buses {(bad + 1).tolist()}")
    if prob.ders.q_max.shape != (n,):
        errors.append("DER fleet size does not match the problem")
    else:
        for name in ("p_min", "p_max", "q_min", "q_max"):
            if not np.all(np.isfinite(getattr(prob.ders, name))):
                errors.append(f"DER bound {name} must be finite")
    if prob.f_max is not None:
        f = np.asarray(prob.f_max, dtype=float)
        if np.any(np.isnan(f)) or np.any(f <= 0):
            errors.append("f_max must be positive (use inf for no limit)")
        if np.any(np.isfinite(f)) and prob.flow_map is None:
            errors.append("finite f_max needs the incidence inverse (flow_map)")
    return errors


def _flow_rows(prob: ControlProblem):
    if prob.f_max is None:
        return None
    f = np.asarray(prob.f_max, dtype=float)
    lim = np.flatnonzero(np.isfinite(f))
    if lim.size == 0:
        return None
    return lim, np.asarray(prob.flow_map)[lim], f[lim]


def _flow_conflicts(prob: ControlProblem) -> list[int]:
    """Lines whose flow window cannot be met by any set-point inside the DER box."""
    rows = _flow_rows(prob)
    if rows is None:
        return []
    lim, G, f = rows
    base = G @ (-prob.p_d)
    hi = base + np.where(G > 0, G * prob.ders.p_max, G * prob.ders.p_min).sum(axis=1)
    lo = base + np.where(G > 0, G * prob.ders.p_min, G * prob.ders.p_max).sum(axis=1)
    return [int(k) for k, a, b, fl in zip(lim, lo, hi, f) if a > fl or b < -fl]


def solve_control(prob: ControlProblem) -> ControlSetpoints:
    errors = validate_problem(prob)
    if errors:
        raise InvalidProblem(errors)

    n = prob.n
    R, X = prob.R, prob.X
    u_base = prob.u0 - R @ prob.p_d - X @ prob.q_d
    I = np.eye(n)
    Z = np.zeros((n, n))

    c = np.concatenate([np.ones(2 * n), np.full(2 * n, prob.gamma)])
    A = [np.hstack([-R, -X, -I, Z]), np.hstack([R, X, Z, -I])]
    b = [u_base - prob.u_lo, prob.u_hi - u_base]
    rows = _flow_rows(prob)
    if rows is not None:
        _, G, f = rows
        k = len(f)
        A += [np.hstack([G, np.zeros((k, 3 * n))]), np.hstack([-G, np.zeros((k, 3 * n))])]
        b += [f + G @ prob.p_d, f - G @ prob.p_d]
    A_ub = np.vstack(A)
    b_ub = np.concatenate(b)
    lb = np.concatenate([prob.ders.p_min, prob.ders.q_min, np.zeros(2 * n)])
    ub = np.concatenate([prob.ders.p_max, prob.ders.q_max, np.full(2 * n, np.inf)])

    res = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=np.column_stack([lb, ub]), method="highs")
    if res.status == 2:
        conflicts = _flow_conflicts(prob)
        raise InfeasibleControl(
            "capacity/flow constraints are infeasible"
            + (f" (line flow limits {[i + 1 for i in conflicts]})" if conflicts else ""),
            violated=conflicts,
        )
    if res.status == 3:
        raise ControlError("control LP is unbounded")
    if res.status != 0:
        raise ControlError(f"LP solver failed: {res.message}")

    dual = b_ub @ res.ineqlin.marginals
    fin_lb = np.isfinite(lb)
    fin_ub = np.isfinite(ub)
    dual += lb[fin_lb] @ res.lower.marginals[fin_lb] + ub[fin_ub] @ res.upper.marginals[fin_ub]
    gap = abs(res.fun - dual)
    if gap > GAP_TOL * (1.0 + abs(res.fun)):
        raise ControlError(f"duality gap {gap:.3e} exceeds tolerance")

    # solver returns bound-feasible points up to ~1e-9; enforce exactly
    p_g = np.clip(res.x[:n], prob.ders.p_min, prob.ders.p_max)
    q_g = np.clip(res.x[n:2 * n], prob.ders.q_min, prob.ders.q_max)
    u_pred = u_base + R @ p_g + X @ q_g
    s_lo = np.maximum(prob.u_lo - u_pred, 0.0)
    s_hi = np.maximum(u_pred - prob.u_hi, 0.0)
    obj = float(p_g.sum() + q_g.sum() + prob.gamma * (s_lo.sum() + s_hi.sum()))
    return ControlSetpoints(p_g, q_g, u_pred, s_lo, s_hi, obj, "optimal", float(gap))


def hinge_objective(prob: ControlProblem, p_g, q_g) -> float:
    """Objective evaluated directly with ``max(., 0)`` penalties; used as an LP oracle."""
    p_g = np.asarray(p_g, float)
    q_g = np.asarray(q_g, float)
    u = prob.u0 + prob.R @ (p_g - prob.p_d) + prob.X @ (q_g - prob.q_d)
    pen = np.maximum(prob.u_lo - u, 0.0) + np.maximum(u - prob.u_hi, 0.0)
    return float(p_g.sum() + q_g.sum() + prob.gamma * pen.sum())
