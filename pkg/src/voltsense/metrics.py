"""Estimation-accuracy and voltage-band metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def mae_vector(est, truth) -> float:
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape or est.ndim != 1:
        raise ValueError(f"length mismatch: {est.shape} vs {truth.shape}")
    return float(np.mean(np.abs(est - truth)))


def mae_matrix(est, truth) -> float:
    """Mean absolute entrywise error over all N^2 entries."""
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.shape != truth.shape or est.ndim != 2:
        raise ValueError(f"shape mismatch: {est.shape} vs {truth.shape}")
    return float(np.mean(np.abs(est - truth)))


@dataclass(frozen=True)
class BandReport:
    violation_count: int
    max_violation: float
    below: tuple[int, ...]
    above: tuple[int, ...]


def band_report(u, u_lo, u_hi, tol: float = 0.0) -> BandReport:
    """Buses whose magnitude ``sqrt(u)`` falls outside ``[sqrt(u_lo), sqrt(u_hi)]``.

    Distances are reported in voltage per-unit, not squared units. A bus
    counts as violating only when it is more than ``tol`` outside the band.
    """
    v = np.sqrt(np.asarray(u, dtype=float))
    v_lo = np.sqrt(np.broadcast_to(np.asarray(u_lo, dtype=float), v.shape))
    v_hi = np.sqrt(np.broadcast_to(np.asarray(u_hi, dtype=float), v.shape))
    under = np.maximum(v_lo - v, 0.0)
    over = np.maximum(v - v_hi, 0.0)
    dist = np.maximum(under, over)
    bad = dist > tol
    return BandReport(
        violation_count=int(bad.sum()),
        max_violation=float(dist.max(initial=0.0)),
        below=tuple(int(i) + 1 for i in np.flatnonzero(under > tol)),
        above=tuple(int(i) + 1 for i in np.flatnonzero(over > tol)),
    )


@dataclass(frozen=True)
class AccuracyReport:
    mae_x: float
    mae_r: float
    mae_X: float
    mae_R: float
    band_violation_count: int = 0
    max_violation: float = 0.0


def accuracy_report(x_hat, r_hat, X_hat, R_hat, x, r, X, R, band: BandReport | None = None) -> AccuracyReport:
    return AccuracyReport(
        mae_x=mae_vector(x_hat, x),
        mae_r=mae_vector(r_hat, r),
        mae_X=mae_matrix(X_hat, X),
        mae_R=mae_matrix(R_hat, R),
        band_violation_count=band.violation_count if band else 0,
        max_violation=band.max_violation if band else 0.0,
    )
