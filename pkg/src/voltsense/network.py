"""Radial feeder topology, line parameters and incidence-matrix algebra.

Bus 0 is always the substation. Lines are indexed in file order; internally
all arrays are 0-based, so line ``l`` of the feeder file lives at index
``l - 1`` when the file numbers lines from 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class FeederError(ValueError):
    """Raised for malformed or non-radial feeder descriptions."""


@dataclass(frozen=True)
class FeederTopology:
    """Directed radial graph rooted at bus 0.

    Attributes
    ----------
    bus_count : int
        Number of non-substation buses ``N``.
    lines : tuple of (int, int)
        ``(sending, receiving)`` pairs in file order.
    incidence : ndarray, shape (N, L)
        Reduced node-to-edge incidence matrix (substation row removed).
    path_sets : tuple of frozenset
        ``path_sets[i - 1]`` holds the 0-based line indices on the path from
        the substation to bus ``i``.
    """

    bus_count: int
    lines: tuple[tuple[int, int], ...]
    incidence: np.ndarray = field(repr=False)
    path_sets: tuple[frozenset[int], ...] = field(repr=False)
    incidence_inv: np.ndarray = field(repr=False)
    line_ids: tuple[str, ...] = field(default=(), repr=False)
    bus_names: tuple[str, ...] = field(default=(), repr=False)

    @property
    def line_count(self) -> int:
        return len(self.lines)

    @classmethod
    def from_lines(cls, lines, bus_count=None, line_ids=None, bus_names=None) -> "FeederTopology":
        """Build and validate a topology from ``(sending, receiving)`` pairs."""
        lines = tuple((int(a), int(b)) for a, b in lines)
        if bus_count is None:
            bus_count = max((max(a, b) for a, b in lines), default=0)
        n = int(bus_count)
        if n < 1:
            raise FeederError("feeder needs at least one non-substation bus")
        if len(lines) != n:
            raise FeederError(f"radial feeder needs L == N, got L={len(lines)}, N={n}")

        parent = {}
        parent_line = {}
        for idx, (a, b) in enumerate(lines):
            for bus in (a, b):
                if not 0 <= bus <= n:
                    raise FeederError(f"line {idx + 1} references unknown bus {bus}")
            if a == b:
                raise FeederError(f"line {idx + 1} is a self-loop at bus {a}")
            if b == 0:
                raise FeederError(f"line {idx + 1} feeds into the substation bus")
            if b in parent:
                raise FeederError(f"bus {b} is fed by more than one line (mesh)")
            parent[b] = a
            parent_line[b] = idx

        path_sets = []
        for bus in range(1, n + 1):
            if bus not in parent:
                raise FeederError(f"bus {bus} is disconnected")
            path = []
            seen = {bus}
            cur = bus
            while cur != 0:
                path.append(parent_line[cur])
                cur = parent[cur]
                if cur in seen:
                    raise FeederError(f"bus {bus} lies on a cycle, not reachable from bus 0")
                seen.add(cur)
            path_sets.append(frozenset(path))

        incidence = np.zeros((n, n))
        for idx, (a, b) in enumerate(lines):
            if a != 0:
                incidence[a - 1, idx] = 1.0
            incidence[b - 1, idx] = -1.0

        try:
            inv = np.linalg.inv(incidence)
        except np.linalg.LinAlgError as exc:
            raise FeederError("reduced incidence matrix is singular") from exc
        if np.max(np.abs(incidence @ inv - np.eye(n))) > 1e-10:
            raise FeederError("reduced incidence matrix is numerically singular")
        # entries are exactly 0 or -1 for a tree; snap away round-off
        inv = np.round(inv)
        inv.setflags(write=False)
        incidence.setflags(write=False)

        return cls(
            bus_count=n,
            lines=lines,
            incidence=incidence,
            path_sets=tuple(path_sets),
            incidence_inv=inv,
            line_ids=tuple(line_ids) if line_ids is not None else tuple(str(i + 1) for i in range(n)),
            bus_names=tuple(bus_names) if bus_names is not None else tuple(str(i) for i in range(n + 1)),
        )

    def line_index(self, sending: int, receiving: int) -> int:
        """0-based index of the line ``sending -> receiving``."""
        try:
            return self.lines.index((int(sending), int(receiving)))
        except ValueError:
            raise FeederError(f"no line ({sending}, {receiving}) in feeder") from None

    def parent(self) -> np.ndarray:
        """Sending bus of the line feeding each bus, indexed by bus 1..N at 0..N-1."""
        out = np.empty(self.bus_count, dtype=int)
        for a, b in self.lines:
            out[b - 1] = a
        return out


@dataclass(frozen=True)
class LineParameters:
    """Per-line resistance and reactance in per-unit; ``alpha = r / x``."""

    r: np.ndarray
    x: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        for name in ("r", "x", "alpha"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.r.shape == self.x.shape == self.alpha.shape):
            raise FeederError("r, x and alpha must have equal length")

    @classmethod
    def from_rx(cls, r, x) -> "LineParameters":
        r = np.asarray(r, dtype=float)
        x = np.asarray(x, dtype=float)
        if np.any(x <= 0):
            raise FeederError("line reactances must be positive")
        if np.any(r < 0):
            raise FeederError("line resistances must be nonnegative")
        return cls(r=r, x=x, alpha=r / x)

    @classmethod
    def from_alpha(cls, x, alpha) -> "LineParameters":
        x = np.asarray(x, dtype=float)
        alpha = np.asarray(alpha, dtype=float)
        return cls(r=alpha * x, x=x, alpha=alpha)

    def scaled(self, index: int, factor: float, preserve_alpha: bool = True) -> "LineParameters":
        """Copy with line ``index`` scaled by ``factor``.

        With ``preserve_alpha`` both r and x scale; otherwise only x does and
        the R-to-X ratio of that line changes.
        """
        x = self.x.copy()
        r = self.r.copy()
        x[index] *= factor
        if preserve_alpha:
            r[index] *= factor
            return LineParameters(r=r, x=x, alpha=self.alpha.copy())
        return LineParameters.from_rx(r, x)


@dataclass(frozen=True)
class DerFleet:
    """Per-bus DER capability bounds in per-unit; buses without a DER are all zero."""

    p_min: np.ndarray
    p_max: np.ndarray
    q_min: np.ndarray
    q_max: np.ndarray

    def __post_init__(self):
        for name in ("p_min", "p_max", "q_min", "q_max"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if np.any(self.p_min > self.p_max) or np.any(self.q_min > self.q_max):
            raise FeederError("DER lower bounds exceed upper bounds")

    @classmethod
    def empty(cls, n: int) -> "DerFleet":
        z = np.zeros(n)
        return cls(z, z, z, z)

    @property
    def buses(self) -> np.ndarray:
        """1-based bus numbers that host a DER with nonzero capability."""
        mask = (self.p_min != 0) | (self.p_max != 0) | (self.q_min != 0) | (self.q_max != 0)
        return np.flatnonzero(mask) + 1


@dataclass(frozen=True)
class LoadProfile:
    """Nominal per-bus active and reactive demand in per-unit."""

    p_d0: np.ndarray
    q_d0: np.ndarray

    def __post_init__(self):
        for name in ("p_d0", "q_d0"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (np.all(np.isfinite(self.p_d0)) and np.all(np.isfinite(self.q_d0))):
            raise FeederError("load profile has non-finite entries")
        if np.any(self.p_d0 < 0) or np.any(self.q_d0 < 0):
            raise FeederError("nominal loads must be nonnegative")


@dataclass(frozen=True)
class Feeder:
    topology: FeederTopology
    params: LineParameters
    loads: LoadProfile
    ders: DerFleet
    meta: dict = field(default_factory=dict, compare=False)

    def __iter__(self):
        # allows ``topo, params, loads, ders = load_feeder(path)``
        return iter((self.topology, self.params, self.loads, self.ders))


def invert_incidence(topology: FeederTopology) -> np.ndarray:
    """Return the cached inverse of the reduced incidence matrix (L x N)."""
    return topology.incidence_inv


def line_flows(topology: FeederTopology, p) -> np.ndarray:
    """Lossless line flows ``f = M^-1 p``; positive means sending to receiving."""
    p = np.asarray(p, dtype=float)
    if p.shape != (topology.bus_count,):
        raise ValueError(f"injection vector must have length {topology.bus_count}, got {p.shape}")
    return topology.incidence_inv @ p


def feeder_from_dict(data: dict) -> Feeder:
    try:
        buses = sorted(data["buses"], key=lambda b: int(b["id"]))
        lines = data["lines"]
        ders = data.get("ders", [])
    except (KeyError, TypeError) as exc:
        raise FeederError(f"feeder description missing section: {exc}") from exc

    ids = [int(b["id"]) for b in buses]
    if ids != list(range(len(ids))) or not ids:
        raise FeederError("bus ids must be 0..N without gaps, 0 being the substation")
    n = len(ids) - 1

    try:
        pairs = [(int(ln["from"]), int(ln["to"])) for ln in lines]
        r = [float(ln["r_pu"]) for ln in lines]
        x = [float(ln["x_pu"]) for ln in lines]
    except (KeyError, TypeError, ValueError) as exc:
        raise FeederError(f"bad line record: {exc}") from exc

    topo = FeederTopology.from_lines(
        pairs,
        bus_count=n,
        line_ids=[str(ln.get("id", i + 1)) for i, ln in enumerate(lines)],
        bus_names=[str(b.get("name", b["id"])) for b in buses],
    )
    params = LineParameters.from_rx(r, x)

    loads = LoadProfile(
        p_d0=[float(b.get("p_d0", 0.0)) for b in buses[1:]],
        q_d0=[float(b.get("q_d0", 0.0)) for b in buses[1:]],
    )

    bounds = {k: np.zeros(n) for k in ("p_min", "p_max", "q_min", "q_max")}
    for d in ders:
        bus = int(d["bus"])
        if not 1 <= bus <= n:
            raise FeederError(f"DER at unknown bus {bus}")
        for k in bounds:
            bounds[k][bus - 1] = float(d.get(k, 0.0))
    fleet = DerFleet(**bounds)

    meta = {k: v for k, v in data.items() if k not in ("buses", "lines", "ders")}
    return Feeder(topo, params, loads, fleet, meta)


def feeder_to_dict(feeder: Feeder) -> dict:
    topo, params, loads, ders = feeder
    buses = [{"id": 0, "name": topo.bus_names[0], "p_d0": 0.0, "q_d0": 0.0}]
    for i in range(topo.bus_count):
        buses.append({
            "id": i + 1,
            "name": topo.bus_names[i + 1],
            "p_d0": float(loads.p_d0[i]),
            "q_d0": float(loads.q_d0[i]),
        })
    lines = [
        {"id": topo.line_ids[k], "from": a, "to": b,
         "r_pu": float(params.r[k]), "x_pu": float(params.x[k])}
        for k, (a, b) in enumerate(topo.lines)
    ]
    der_list = [
        {"bus": int(bus),
         "p_min": float(ders.p_min[bus - 1]), "p_max": float(ders.p_max[bus - 1]),
         "q_min": float(ders.q_min[bus - 1]), "q_max": float(ders.q_max[bus - 1])}
        for bus in ders.buses
    ]
    out = dict(feeder.meta)
    out.update({"buses": buses, "lines": lines, "ders": der_list})
    return out


def load_feeder(path) -> Feeder:
    """Read and validate a feeder JSON file.

    The result unpacks as ``(topology, params, loads, ders)``.
    """
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FeederError(f"cannot parse {path}: {exc}") from exc
    return feeder_from_dict(data)


def save_feeder(feeder: Feeder, path) -> None:
    Path(path).write_text(json.dumps(feeder_to_dict(feeder), indent=2) + "\n")


def bundled_feeder_path(name: str = "ieee37.json") -> Path:
    return Path(__file__).parent / "data" / name


def random_radial_tree(n: int, rng: np.random.Generator) -> FeederTopology:
    """Random radial topology on buses 0..n with shuffled line order."""
    order = rng.permutation(np.arange(1, n + 1))
    placed = [0]
    lines = []
    for bus in order:
        lines.append((int(rng.choice(placed)), int(bus)))
        placed.append(int(bus))
    rng.shuffle(lines)
    return FeederTopology.from_lines(lines, bus_count=n)
