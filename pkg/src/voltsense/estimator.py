"""Sliding-window estimation of line reactances from voltage/injection snapshots.

With the R-to-X ratios known, the linear voltage model is linear in the
reactance vector ``x``::

    u - u0 = sum_l x_l * Gamma_l (alpha_l p + q),
    Gamma_l = 2 (M^-1)^T e_l e_l^T M^-1

Stacking the snapshots of the window gives an ordinary least-squares
problem, solved through a truncated-SVD pseudo-inverse.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .lindistflow import SensitivityMatrices, sensitivity
from .network import FeederTopology
from .plant import MeasurementSnapshot

log = logging.getLogger(__name__)

RCOND = 1e-8


class EstimationError(ValueError):
    pass


def build_gamma(topology: FeederTopology, line: int) -> np.ndarray:
    """Rank-one building block for 0-based ``line``."""
    if not 0 <= line < topology.line_count:
        raise IndexError(f"line index {line} out of range 0..{topology.line_count - 1}")
    row = topology.incidence_inv[line]
    return 2.0 * np.outer(row, row)


class MeasurementWindow:
    """FIFO buffer holding the ``capacity`` most recent snapshots."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("window capacity must be at least 1")
        self.capacity = int(capacity)
        self._buf: deque[MeasurementSnapshot] = deque(maxlen=self.capacity)

    def push(self, snap: MeasurementSnapshot) -> None:
        if self._buf and snap.step <= self._buf[-1].step:
            raise EstimationError(
                f"snapshot step {snap.step} is not newer than {self._buf[-1].step}"
            )
        self._buf.append(snap)

    def snapshots(self) -> tuple[MeasurementSnapshot, ...]:
        return tuple(self._buf)

    def __len__(self) -> int:
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)

    def copy(self) -> "MeasurementWindow":
        out = MeasurementWindow(self.capacity)
        out._buf.extend(self._buf)
        return out


def push_snapshot(window: MeasurementWindow, snap: MeasurementSnapshot) -> MeasurementWindow:
    window.push(snap)
    return window


@dataclass(frozen=True)
class RegressionSystem:
    Phi: np.ndarray
    phi: np.ndarray
    steps: tuple[int, ...]

    @property
    def blocks(self) -> int:
        return len(self.steps)


def assemble_regression(window, topology: FeederTopology, alpha) -> RegressionSystem:
    """Stack one ``N x L`` block per snapshot.

    Column ``l`` of a block is ``Gamma_l (alpha_l p + q)``, which factors as
    ``2 * g_l * (g_l . (alpha_l p + q))`` with ``g_l`` row ``l`` of ``M^-1``.
    """
    snaps = list(window)
    if not snaps:
        raise EstimationError("measurement window is empty")
    alpha = np.asarray(alpha, dtype=float)
    inv = topology.incidence_inv
    n, nl = topology.bus_count, topology.line_count
    if alpha.shape != (nl,):
        raise EstimationError(f"alpha must have length {nl}")

    blocks = []
    rhs = []
    for s in snaps:
        if s.p_meas.shape != (n,) or s.q_meas.shape != (n,) or s.u_meas.shape != (n,):
            raise EstimationError(f"snapshot {s.step} has wrong dimensions")
        # flow-like quantity through each line under weights (alpha_l p + q)
        through = alpha * (inv @ s.p_meas) + inv @ s.q_meas
        blocks.append(2.0 * inv.T * through)
        rhs.append(s.u_tilde)
    return RegressionSystem(np.vstack(blocks), np.concatenate(rhs), tuple(s.step for s in snaps))


def svd_solve(A: np.ndarray, b: np.ndarray, rcond: float = RCOND) -> tuple[np.ndarray, int, np.ndarray]:
    """Minimum-norm least-squares solution with relative singular-value cutoff."""
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.zeros(A.shape[1]), 0, s
    keep = s > rcond * s[0]
    coef = (U[:, keep].T @ b) / s[keep]
    return Vt[keep].T @ coef, int(keep.sum()), s


@dataclass(frozen=True)
class EstimatedParameters:
    x_hat: np.ndarray
    r_hat: np.ndarray
    sens: SensitivityMatrices = field(repr=False)
    effective_rank: int
    rank_deficient: bool
    negative_lines: tuple[int, ...] = ()
    singular_values: np.ndarray = field(default=None, repr=False)

    @property
    def R_hat(self) -> np.ndarray:
        return self.sens.R

    @property
    def X_hat(self) -> np.ndarray:
        return self.sens.X


def estimate(window, topology: FeederTopology, alpha, rcond: float = RCOND) -> EstimatedParameters:
    alpha = np.asarray(alpha, dtype=float)
    system = assemble_regression(window, topology, alpha)
    x_hat, rank, s = svd_solve(system.Phi, system.phi, rcond)
    r_hat = alpha * x_hat
    negative = tuple(int(i) for i in np.flatnonzero(x_hat < 0))
    if negative:
        log.warning("negative reactance estimate on lines %s", [i + 1 for i in negative])
    return EstimatedParameters(
        x_hat=x_hat,
        r_hat=r_hat,
        sens=SensitivityMatrices(R=sensitivity(topology, r_hat), X=sensitivity(topology, x_hat)),
        effective_rank=rank,
        rank_deficient=rank < topology.line_count,
        negative_lines=negative,
        singular_values=s,
    )


def normal_equations_solve(system: RegressionSystem) -> np.ndarray:
    """Closed-form ``(Phi^T Phi)^-1 Phi^T phi``; only valid when Phi has full column rank."""
    A = system.Phi
    return np.linalg.solve(A.T @ A, A.T @ system.phi)
