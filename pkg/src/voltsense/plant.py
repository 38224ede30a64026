"""Ground-truth feeder simulator.

The physical system is the full DistFlow branch-flow model (with losses),
solved by backward/forward sweep. Loads fluctuate around their nominal
values and every reading passes through additive Gaussian noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lindistflow import VoltageState, build_sensitivities, predict_voltages
from .network import FeederError, FeederTopology, LineParameters, LoadProfile


class PowerFlowError(RuntimeError):
    """Backward/forward sweep failed to converge."""


@dataclass(frozen=True)
class PowerFlowResult:
    state: VoltageState
    sweeps: int
    residuals: tuple[float, ...]
    P: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)


def sweep(topology: FeederTopology, params: LineParameters, p, q, u0: float = 1.0,
          tol: float = 1e-8, max_sweeps: int = 100) -> PowerFlowResult:
    """Backward/forward sweep on the DistFlow equations.

    Per line ``i -> j`` with sending-end power ``P, Q`` and squared current
    ``l = (P^2 + Q^2) / u_i``::

        P = -p_j + sum(P of lines leaving j) + r l
        u_j = u_i - 2 (r P + x Q) + (r^2 + x^2) l

    Convergence is declared when the largest change in ``V = sqrt(u)``
    between sweeps is at most ``tol``.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    n = topology.bus_count
    if p.shape != (n,) or q.shape != (n,):
        raise ValueError(f"injection vectors must have length {n}")

    inv = topology.incidence_inv
    # receiving bus of each line, as 0-based bus offsets
    recv = np.array([b - 1 for _, b in topology.lines])
    send = np.array([a for a, _ in topology.lines])
    r, x = params.r, params.x
    z2 = r * r + x * x

    u = np.full(n, float(u0))
    loss = np.zeros(n)
    residuals = []
    v_old = np.sqrt(u)
    for it in range(1, max_sweeps + 1):
        # backward: loss of each line is booked at its receiving bus
        at_bus_p = np.zeros(n)
        at_bus_q = np.zeros(n)
        at_bus_p[recv] = r * loss
        at_bus_q[recv] = x * loss
        P = inv @ (p - at_bus_p)
        Q = inv @ (q - at_bus_q)
        u_send = np.where(send == 0, u0, u[np.maximum(send - 1, 0)])
        loss = (P * P + Q * Q) / u_send
        # forward: accumulate drops along each root path
        drop = -2.0 * (r * P + x * Q) + z2 * loss
        u = u0 - inv.T @ drop
        if np.any(u <= 0) or not np.all(np.isfinite(u)):
            raise PowerFlowError(f"voltage collapse during sweep {it}")
        v = np.sqrt(u)
        res = float(np.max(np.abs(v - v_old)))
        residuals.append(res)
        v_old = v
        if res <= tol:
            return PowerFlowResult(VoltageState(float(u0), u), it, tuple(residuals), P, Q)
    raise PowerFlowError(
        f"backward/forward sweep did not converge in {max_sweeps} sweeps "
        f"(last residual {residuals[-1]:.3e})"
    )


def solve_power_flow(topology: FeederTopology, params: LineParameters, p, q,
                     u0: float = 1.0) -> VoltageState:
    return sweep(topology, params, p, q, u0).state


@dataclass(frozen=True)
class NoiseModel:
    """``sigma_d``: relative load fluctuation; ``sigma_m``: additive measurement noise."""

    sigma_d: float = 0.01
    sigma_m: float = 2e-4
    rng_seed: int = 0

    def __post_init__(self):
        if self.sigma_d < 0 or self.sigma_m < 0:
            raise ValueError("noise standard deviations must be nonnegative")


@dataclass(frozen=True)
class PerturbationEvent:
    """Scale the impedance of line ``sending -> receiving`` by ``factor`` at ``step``."""

    step: int
    line: tuple[int, int]
    factor: float = 2.0
    preserve_alpha: bool = True

    def __post_init__(self):
        if self.factor <= 0:
            raise ValueError("perturbation factor must be positive")
        object.__setattr__(self, "line", (int(self.line[0]), int(self.line[1])))


@dataclass(frozen=True)
class MeasurementSnapshot:
    """One step of readings: squared voltages and net injections ``p = p_g - p_d``."""

    step: int
    u0_meas: float
    u_meas: np.ndarray
    p_meas: np.ndarray
    q_meas: np.ndarray

    @property
    def u_tilde(self) -> np.ndarray:
        return self.u_meas - self.u0_meas


@dataclass
class PlantState:
    params: LineParameters
    p_d: np.ndarray
    q_d: np.ndarray
    p_g: np.ndarray
    q_g: np.ndarray
    step: int = -1


class Plant:
    """Stateful simulator of one feeder.

    Load draws and measurement noise use independent random streams derived
    from ``noise.rng_seed`` (or an explicit ``seed``), so changing ``sigma_m``
    leaves the load sequence untouched.
    """

    def __init__(self, topology: FeederTopology, params: LineParameters, profile: LoadProfile,
                 noise: NoiseModel, u0: float = 1.0, model: str = "nonlinear", seed=None):
        if model not in ("nonlinear", "linear"):
            raise ValueError(f"unknown plant model {model!r}")
        self.topology = topology
        self.profile = profile
        self.noise = noise
        self.u0 = float(u0)
        self.model = model
        if seed is None:
            seed = noise.rng_seed
        if not isinstance(seed, np.random.SeedSequence):
            seed = np.random.SeedSequence(seed)
        load_seq, meas_seq = seed.spawn(2)
        self._load_rng = np.random.default_rng(load_seq)
        self._meas_rng = np.random.default_rng(meas_seq)
        n = topology.bus_count
        self.state = PlantState(
            params=params,
            p_d=profile.p_d0.copy(),
            q_d=profile.q_d0.copy(),
            p_g=np.zeros(n),
            q_g=np.zeros(n),
        )
        self.last_sweeps = 0

    def advance(self) -> int:
        self.state.step += 1
        return self.state.step

    def step_loads(self) -> tuple[np.ndarray, np.ndarray]:
        """Draw ``p_d = p_d0 (1 + sigma_d nu)`` and likewise for reactive load."""
        n = self.topology.bus_count
        sd = self.noise.sigma_d
        nu_p = self._load_rng.standard_normal(n)
        nu_q = self._load_rng.standard_normal(n)
        self.state.p_d = self.profile.p_d0 * (1.0 + sd * nu_p)
        self.state.q_d = self.profile.q_d0 * (1.0 + sd * nu_q)
        return self.state.p_d, self.state.q_d

    def apply_setpoints(self, p_g, q_g) -> None:
        self.state.p_g = np.asarray(p_g, dtype=float).copy()
        self.state.q_g = np.asarray(q_g, dtype=float).copy()

    def apply_event(self, event: PerturbationEvent) -> LineParameters:
        try:
            idx = self.topology.line_index(*event.line)
        except FeederError:
            raise FeederError(f"perturbation references unknown line {event.line}") from None
        self.state.params = self.state.params.scaled(idx, event.factor, event.preserve_alpha)
        return self.state.params

    def net_injections(self) -> tuple[np.ndarray, np.ndarray]:
        s = self.state
        return s.p_g - s.p_d, s.q_g - s.q_d

    def solve(self) -> VoltageState:
        p, q = self.net_injections()
        if self.model == "linear":
            self.last_sweeps = 0
            return predict_voltages(build_sensitivities(self.topology, self.state.params), p, q, self.u0)
        res = sweep(self.topology, self.state.params, p, q, self.u0)
        self.last_sweeps = res.sweeps
        return res.state

    def measure(self, truth: VoltageState) -> MeasurementSnapshot:
        n = self.topology.bus_count
        sm = self.noise.sigma_m
        rng = self._meas_rng
        p, q = self.net_injections()
        if sm == 0:
            return MeasurementSnapshot(self.state.step, truth.u0, truth.u.copy(), p, q)
        return MeasurementSnapshot(
            step=self.state.step,
            u0_meas=truth.u0 + sm * rng.standard_normal(),
            u_meas=truth.u + sm * rng.standard_normal(n),
            p_meas=p + sm * rng.standard_normal(n),
            q_meas=q + sm * rng.standard_normal(n),
        )
