"""Node placement on a square lattice and bit-meter accounting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .encoder import EncodingMatrix

__all__ = [
    "BitMeterLedger",
    "CircuitLayout",
    "Lattice",
    "distance",
    "gilbert2d",
    "layout_centralized",
    "layout_distributed",
    "place_centralized",
    "record_transmission",
    "route_and_meter",
]


@dataclass(frozen=True)
class Lattice:
    """Square lattice with spacing ``2 * packing_radius``."""

    packing_radius: float = 1.0

    def __post_init__(self):
        if not self.packing_radius > 0:
            raise ValueError("packing radius must be positive")

    @property
    def spacing(self) -> float:
        return 2.0 * self.packing_radius

    @property
    def basis(self) -> np.ndarray:
        return np.eye(2) * self.spacing

    @property
    def det(self) -> float:
        return float(abs(np.linalg.det(self.basis)))

    @property
    def packing_density(self) -> float:
        return math.pi * self.packing_radius**2 / self.det


def distance(a, b) -> float:
    return float(math.hypot(a[0] - b[0], a[1] - b[1]))


def _generate2d(x, y, ax, ay, bx, by, out):
    w = abs(ax + ay)
    h = abs(bx + by)
    dax, day = (ax > 0) - (ax < 0), (ay > 0) - (ay < 0)
    dbx, dby = (bx > 0) - (bx < 0), (by > 0) - (by < 0)
    if h == 1:
        for _ in range(w):
            out.append((x, y))
            x, y = x + dax, y + day
        return
    if w == 1:
        for _ in range(h):
            out.append((x, y))
            x, y = x + dbx, y + dby
        return
    ax2, ay2 = ax // 2, ay // 2
    bx2, by2 = bx // 2, by // 2
    w2 = abs(ax2 + ay2)
    h2 = abs(bx2 + by2)
    if 2 * w > 3 * h:
        if w2 % 2 and w > 2:
            ax2, ay2 = ax2 + dax, ay2 + day
        _generate2d(x, y, ax2, ay2, bx, by, out)
        _generate2d(x + ax2, y + ay2, ax - ax2, ay - ay2, bx, by, out)
    else:
        if h2 % 2 and h > 2:
            bx2, by2 = bx2 + dbx, by2 + dby
        _generate2d(x, y, bx2, by2, ax2, ay2, out)
        _generate2d(x + bx2, y + by2, ax, ay, bx - bx2, by - by2, out)
        _generate2d(
            x + (ax - dax) + (bx2 - dbx),
            y + (ay - day) + (by2 - dby),
            -bx2, -by2, -(ax - ax2), -(ay - ay2), out,
        )


@lru_cache(maxsize=32)
def _gilbert_cached(w: int, h: int) -> np.ndarray:
    out: list[tuple[int, int]] = []
    if w >= h:
        _generate2d(0, 0, w, 0, 0, h, out)
    else:
        _generate2d(0, 0, 0, h, w, 0, out)
    arr = np.asarray(out, dtype=np.int64)
    arr.setflags(write=False)
    return arr


def gilbert2d(width: int, height: int) -> np.ndarray:
    """Generalized Hilbert curve visiting every cell of a ``width x height`` grid.

    Consecutive points are lattice neighbours, and any run of ``s`` consecutive
    points has diameter ``O(sqrt(s))``, which is what makes index-ordered
    placement spatially local.
    """
    if width < 1 or height < 1:
        raise ValueError("grid dimensions must be positive")
    return _gilbert_cached(int(width), int(height))


@dataclass
class CircuitLayout:
    """Coordinates (meters) of all nodes.

    Node ids: output-node ``j`` is ``j``; the input-node holding measurement
    row ``r`` is ``n + r``.
    """

    lattice: Lattice
    n: int
    m: int
    coords: np.ndarray
    hub_of: dict[tuple[int, int], int]
    kind: str
    side: int

    @property
    def output_nodes(self) -> np.ndarray:
        return self.coords[: self.n]

    @property
    def input_nodes(self) -> np.ndarray:
        return self.coords[self.n:]

    def row_node(self, row):
        return self.n + np.asarray(row)

    def dist(self, src, dst):
        """Euclidean distance between node ids (vectorized)."""
        d = self.coords[np.asarray(src)] - self.coords[np.asarray(dst)]
        return np.hypot(d[..., 0], d[..., 1])

    def center(self) -> np.ndarray:
        half = (self.side - 1) / 2.0
        return np.array([half, half]) * self.lattice.spacing

    def dump_csv(self, path: str | Path) -> Path:
        tags: dict[int, list[str]] = {}
        for (stage, group), node in sorted(self.hub_of.items()):
            tags.setdefault(node, []).append(f"{stage}:{group}")
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["node_id", "kind", "x", "y", "stage_hub_tags"])
            for node, (x, y) in enumerate(self.coords):
                kind = "out" if node < self.n else "in"
                w.writerow([node, kind, repr(float(x)), repr(float(y)), ";".join(tags.get(node, []))])
        return path


def _hubs(A: EncodingMatrix, n: int) -> dict[tuple[int, int], int]:
    hubs = {}
    plan = A.plan
    for s in range(1, plan.local_stages + 1):
        for g in range(plan.group_counts[s - 1]):
            hubs[(s, g)] = n + int(A.group_rows(s, g)[0])
    hubs[(plan.clearing_stage, 0)] = n + A.clearing_offset
    return hubs


def _grid_side(total: int) -> int:
    return max(1, math.isqrt(total - 1) + 1) if total > 0 else 1


def layout_distributed(A: EncodingMatrix, rho: float = 1.0) -> CircuitLayout:
    """Interleave inputs with the outputs they measure along a space-filling curve.

    Output ``j`` gets sort key ``j``; a group's rows get the mean index of
    its members, so each group's input-nodes sit among its output-nodes. The
    clearing rows are placed at the curve position nearest the substrate center.
    """
    lattice = Lattice(rho)
    n, m = A.n, A.m
    side = _grid_side(n + m)
    curve = gilbert2d(side, side)

    local = A.clearing_offset
    key = np.empty(n + local)
    key[:n] = np.arange(n)
    for s in range(1, A.plan.local_stages + 1):
        members = A.plan.members(s)
        means = np.array([g.mean() if g.size else 0.0 for g in members])
        rows = np.arange(A.stage_offsets[s - 1], A.stage_offsets[s])
        key[n + rows] = means[A.row_group[rows]]
    # outputs first on ties, rows keep their index order
    order = np.lexsort((np.arange(n + local), (np.arange(n + local) >= n), key))

    mid = (side - 1) / 2.0
    centre_rank = int(np.argmin(np.hypot(curve[: n + m, 0] - mid, curve[: n + m, 1] - mid)))
    n_clear = m - local
    insert = min(max(centre_rank - n_clear // 2, 0), n + local)
    clearing_nodes = n + local + np.arange(n_clear)
    order = np.concatenate([order[:insert], clearing_nodes, order[insert:]])

    coords = np.empty((n + m, 2))
    coords[order] = curve[: n + m] * lattice.spacing
    return CircuitLayout(lattice, n, m, coords, _hubs(A, n), "distributed", side)


def place_centralized(n: int, m: int, rho: float = 1.0) -> CircuitLayout:
    """Pack ``m`` input-nodes in a disk at the substrate center; outputs fill the rest.

    The disk points are taken in curve order, so consecutive rows stay
    adjacent. The returned layout has no hubs.
    """
    if n < 0 or m < 0:
        raise ValueError("node counts must be non-negative")
    lattice = Lattice(rho)
    side = _grid_side(n + m)
    curve = gilbert2d(side, side)
    centre = np.array([side // 2, side // 2])
    d = np.hypot(curve[:, 0] - centre[0], curve[:, 1] - centre[1])
    # the m points nearest the center (ties broken by curve position)
    near = np.sort(np.lexsort((np.arange(curve.shape[0]), d))[:m])
    if m:
        # a disk of radius r + 1 lattice steps holds more than pi r^2 points
        assert d[near].max() <= math.sqrt(m / math.pi) + 1.0, "inputs escaped the central disk"
    taken = np.zeros(curve.shape[0], dtype=bool)
    taken[near] = True
    free = np.flatnonzero(~taken)[:n]
    coords = np.empty((n + m, 2))
    coords[:n] = curve[free] * lattice.spacing
    coords[n:] = curve[near] * lattice.spacing
    return CircuitLayout(lattice, n, m, coords, {}, "centralized", side)


def layout_centralized(A: EncodingMatrix, rho: float = 1.0) -> CircuitLayout:
    """Centralized placement for the rows of ``A``, with group hubs attached."""
    layout = place_centralized(A.n, A.m, rho)
    layout.hub_of = _hubs(A, A.n)
    return layout


@dataclass
class BitMeterLedger:
    """Running bit-meter total, split by decoding stage."""

    layout: CircuitLayout | None = None
    total: float = 0.0
    per_stage: dict[int, float] = field(default_factory=dict)
    transmissions: list[tuple[int, int, int, int]] | None = None

    def record(self, src: int, dst: int, bits: float, stage: int, dist: float | None = None) -> float:
        if not bits > 0:
            raise ValueError("bits must be positive")
        if dist is None:
            self._check_nodes(src, dst)
            dist = float(self.layout.dist(src, dst))
        cost = float(bits) * float(dist)
        self._add(stage, cost)
        if self.transmissions is not None:
            self.transmissions.append((int(src), int(dst), int(bits), int(stage)))
        return cost

    def record_many(self, src, dst, bits, stage: int) -> float:
        """Meter a batch of point-to-point sends in one call."""
        src = np.atleast_1d(np.asarray(src))
        dst = np.atleast_1d(np.asarray(dst))
        if src.size == 0:
            return 0.0
        bits = np.broadcast_to(np.asarray(bits, dtype=float), src.shape)
        if np.any(bits <= 0):
            raise ValueError("bits must be positive")
        self._check_nodes(src, dst)
        cost = float(np.sum(bits * self.layout.dist(src, dst)))
        self._add(stage, cost)
        if self.transmissions is not None:
            self.transmissions.extend(
                (int(s), int(d), int(b), int(stage)) for s, d, b in zip(src, dst, bits)
            )
        return cost

    def route(self, path, bits: float, stage: int) -> float:
        """Relay ``bits`` hop by hop along ``path`` (a sequence of node ids)."""
        path = np.asarray(path)
        if path.size < 2:
            return 0.0
        return self.record_many(path[:-1], path[1:], bits, stage)

    def _check_nodes(self, *nodes) -> None:
        total = self.layout.coords.shape[0]
        for v in nodes:
            v = np.asarray(v)
            if v.size and (v.min() < 0 or v.max() >= total):
                raise ValueError("unknown node id")

    def _add(self, stage: int, cost: float) -> None:
        self.total += cost
        self.per_stage[stage] = self.per_stage.get(stage, 0.0) + cost

    def merged(self, other: "BitMeterLedger") -> "BitMeterLedger":
        out = BitMeterLedger(self.layout, self.total + other.total, dict(self.per_stage))
        for s, v in other.per_stage.items():
            out.per_stage[s] = out.per_stage.get(s, 0.0) + v
        return out

    def dump_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["stage", "bit_meters"])
            for s in sorted(self.per_stage):
                w.writerow([s, repr(self.per_stage[s])])
        return path


def record_transmission(ledger: BitMeterLedger, src: int, dst: int, bits: float, stage: int) -> BitMeterLedger:
    ledger.record(src, dst, bits, stage)
    return ledger


def route_and_meter(ledger: BitMeterLedger, path, bits: float, stage: int, layout: CircuitLayout | None = None) -> BitMeterLedger:
    if layout is not None and ledger.layout is None:
        ledger.layout = layout
    ledger.route(path, bits, stage)
    return ledger
