"""Stencil partitions of a circuit layout into square sub-circuits.

A square sub-lattice of index ``lambda`` tiles the substrate into cells of
``t x t`` lattice sites (``t = sqrt(lambda)``), anchored at an origin ``u``.
Each cell also has an inner part, shrunk by a margin of ``eta * t`` on every
side. A node on the shared boundary of two cells belongs to the one with
the smaller index, so a cell owns lattice offsets ``1..t`` along each axis.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .circuit import CircuitLayout, Lattice

__all__ = [
    "StencilCell",
    "StencilPartition",
    "build_stencil",
    "inner_width",
    "density_radius",
    "nld_fraction",
    "nld_lower_bound",
    "nld_threshold",
    "scan_origins",
    "sublattice_radius",
]

DEFAULT_ETA = 0.25
_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class StencilCell:
    index: tuple[int, int]
    m_i: int
    n_i: int
    m_inside: int
    n_inside: int
    non_local: bool


@dataclass(frozen=True)
class StencilPartition:
    lam: int
    eta: float
    origin: tuple[int, int]
    lattice: Lattice
    n: int
    m: int
    cells: list[StencilCell]

    @property
    def L(self) -> int:
        return len(self.cells)

    @property
    def step(self) -> int:
        return math.isqrt(self.lam)

    @property
    def n_inside(self) -> int:
        return sum(c.n_inside for c in self.cells)

    def dump_csv(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cell_x", "cell_y", "m_i", "n_i", "m_inside", "n_inside", "classification"])
            for c in self.cells:
                label = "non-locally-decodable" if c.non_local else "locally-decodable"
                w.writerow([c.index[0], c.index[1], c.m_i, c.n_i, c.m_inside, c.n_inside, label])
        return path


def nld_threshold(m: float, L: int) -> float:
    """Input-count threshold ``2m/L`` below which a cell cannot decode locally."""
    return 2.0 * m / L


def nld_lower_bound(R: float) -> float:
    """Guaranteed fraction ``min{(1-R)/(1+R), 1/2}`` of non-locally-decodable cells."""
    return min((1.0 - R) / (1.0 + R), 0.5)


def _check(lam: int, eta: float) -> int:
    t = math.isqrt(int(lam))
    if lam < 1 or t * t != lam:
        raise ValueError(f"lambda must be a positive perfect square, got {lam}")
    if not 0.0 < eta < 0.5:
        raise ValueError(f"eta must lie in (0, 1/2), got {eta}")
    return t


def _sites(layout: CircuitLayout) -> np.ndarray:
    return np.rint(np.asarray(layout.coords) / layout.lattice.spacing).astype(np.int64)


def _cell_and_offset(sites: np.ndarray, origin, t: int):
    shifted = sites - np.asarray(origin, dtype=np.int64) - 1
    cell = np.floor_divide(shifted, t)
    # offset of each site inside its cell, in 1..t
    return cell, shifted - cell * t + 1


def inner_width(t: int, eta: float) -> int:
    """Number of offsets in ``1..t`` that fall in the inner interval ``[eta t, (1 - eta) t]``."""
    return int(_inside(np.arange(1, t + 1)[:, None], t, eta).sum())


def _inside(offset: np.ndarray, t: int, eta: float) -> np.ndarray:
    lo, hi = eta * t - _EDGE_TOL, (1.0 - eta) * t + _EDGE_TOL
    return np.all((offset >= lo) & (offset <= hi), axis=1)


def _extent(layout: CircuitLayout, sites: np.ndarray) -> int:
    side = int(getattr(layout, "side", 0) or 0)
    return max(side, int(sites.max()) + 1 if sites.size else 1)


def build_stencil(layout: CircuitLayout, lam: int, eta: float = DEFAULT_ETA, origin=(0, 0)) -> StencilPartition:
    """Count input- and output-nodes in every outer and inner cell."""
    t = _check(lam, eta)
    sites = _sites(layout)
    n, m = layout.n, layout.m
    cell, offset = _cell_and_offset(sites, origin, t)
    inside = _inside(offset, t, eta)
    is_out = np.arange(n + m) < n

    # every cell meeting the substrate square, including empty ones
    side = _extent(layout, sites)
    span_cells, _ = _cell_and_offset(np.array([[0, 0], [side - 1, side - 1]]), origin, t)
    lo, hi = span_cells[0], span_cells[1]
    nx, ny = hi - lo + 1
    flat = (cell[:, 0] - lo[0]) * ny + (cell[:, 1] - lo[1])
    size = int(nx * ny)
    n_i = np.bincount(flat[is_out], minlength=size)
    m_i = np.bincount(flat[~is_out], minlength=size)
    n_in = np.bincount(flat[is_out & inside], minlength=size)
    m_in = np.bincount(flat[~is_out & inside], minlength=size)

    limit = np.minimum(nld_threshold(m, size), n_i)
    non_local = m_i <= limit
    cells = [
        StencilCell(
            (int(lo[0] + f // ny), int(lo[1] + f % ny)),
            int(m_i[f]), int(n_i[f]), int(m_in[f]), int(n_in[f]), bool(non_local[f]),
        )
        for f in range(size)
    ]
    return StencilPartition(int(lam), float(eta), (int(origin[0]), int(origin[1])), layout.lattice, n, m, cells)


def scan_origins(layout: CircuitLayout, lam: int, eta: float = DEFAULT_ETA):
    """Try every origin in one sub-lattice cell; keep the one covering the most outputs.

    Every node sees each inner offset once as the origin runs over a cell, so
    the average covered count is ``n (w / t)^2`` with ``w`` the number of inner
    offsets per axis (see :func:`inner_width`). When ``w >= (1 - 2 eta) t``,
    as for ``eta = 1/4`` with ``t`` a multiple of 4, the best origin covers at
    least ``n (1 - 2 eta)^2`` outputs.
    """
    t = _check(lam, eta)
    sites = _sites(layout)[: layout.n]
    best, best_count = (0, 0), -1
    for ux in range(t):
        for uy in range(t):
            _, offset = _cell_and_offset(sites, (ux, uy), t)
            count = int(_inside(offset, t, eta).sum())
            if count > best_count:
                best, best_count = (ux, uy), count
    return best, build_stencil(layout, lam, eta, best)


def nld_fraction(partition: StencilPartition, R: float | None = None) -> float:
    """Fraction of cells with ``m_i <= min{2m/L, n_i}``.

    ``R`` is accepted for symmetry with :func:`nld_lower_bound` and unused.
    """
    if not partition.cells:
        raise ValueError("partition has no cells")
    return sum(c.non_local for c in partition.cells) / partition.L


def sublattice_radius(partition: StencilPartition) -> float:
    """Packing radius of the cell sub-lattice: half its shortest basis vector."""
    basis = partition.lattice.basis * partition.step
    return 0.5 * float(np.min(np.linalg.norm(basis, axis=1)))


def density_radius(partition: StencilPartition) -> float:
    """Sub-lattice packing radius predicted from packing densities and cell count.

    The cell count is the node-equivalent ``(n + m) / lambda``; the layout only
    fills part of its bounding square, so the literal count of cells differs.
    """
    lat = partition.lattice
    sub = Lattice(sublattice_radius(partition))
    sigma0 = math.pi * sub.packing_radius**2 / (lat.det * partition.lam)
    L_eff = (partition.n + partition.m) / partition.lam
    return math.sqrt(sigma0 * (partition.n + partition.m) / (lat.packing_density * L_eff)) * lat.packing_radius
