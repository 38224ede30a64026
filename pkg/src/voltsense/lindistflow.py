"""LinDistFlow voltage-sensitivity matrices and the linear voltage model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .network import FeederTopology, LineParameters


@dataclass(frozen=True)
class SensitivityMatrices:
    """Squared-voltage sensitivities to active (``R``) and reactive (``X``) injections."""

    R: np.ndarray
    X: np.ndarray


@dataclass(frozen=True)
class VoltageState:
    """Squared voltage magnitudes: substation ``u0`` and buses ``u`` (length N)."""

    u0: float
    u: np.ndarray

    @property
    def v(self) -> np.ndarray:
        return np.sqrt(self.u)


def sensitivity(topology: FeederTopology, weights) -> np.ndarray:
    """``2 (M^-1)^T diag(weights) M^-1`` for per-line ``weights``."""
    inv = topology.incidence_inv
    return 2.0 * (inv.T * np.asarray(weights, dtype=float)) @ inv


def build_sensitivities(topology: FeederTopology, params: LineParameters) -> SensitivityMatrices:
    if params.x.shape != (topology.line_count,):
        raise ValueError("line parameter vector length does not match the feeder")
    return SensitivityMatrices(R=sensitivity(topology, params.r), X=sensitivity(topology, params.x))


def predict_voltages(S: SensitivityMatrices, p, q, u0: float = 1.0) -> VoltageState:
    """Linear model ``u = u0 + R p + X q``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = S.R.shape[0]
    if p.shape != (n,) or q.shape != (n,):
        raise ValueError(f"injection vectors must have length {n}")
    return VoltageState(u0=float(u0), u=u0 + S.R @ p + S.X @ q)


def common_path_matrix(topology: FeederTopology, weights) -> np.ndarray:
    """Reference construction: entry (i, j) is twice the summed weight on the shared root path.

    Deliberately loops over path sets instead of using the incidence inverse,
    so it can serve as an independent check of :func:`sensitivity`.
    """
    weights = np.asarray(weights, dtype=float)
    n = topology.bus_count
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i, n):
            shared = topology.path_sets[i] & topology.path_sets[j]
            out[i, j] = out[j, i] = 2.0 * sum(weights[k] for k in shared)
    return out
