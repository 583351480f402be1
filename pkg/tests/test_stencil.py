from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from bitmeter.circuit import CircuitLayout, Lattice, layout_distributed
from bitmeter.encoder import build_matrix, plan_ca_groups
from bitmeter.stencil import (
    build_stencil,
    inner_width,
    density_radius,
    nld_fraction,
    nld_lower_bound,
    nld_threshold,
    scan_origins,
    sublattice_radius,
)


def _layout(outputs, inputs, side, rho=1.0):
    """Layout from integer lattice sites; outputs first, then inputs."""
    sites = np.array(list(outputs) + list(inputs), dtype=float).reshape(-1, 2)
    lat = Lattice(rho)
    return CircuitLayout(lat, len(outputs), len(inputs), sites * lat.spacing, {}, "custom", side)


def _all_sites(side):
    return [(x, y) for x in range(side) for y in range(side)]


class TestPartition:
    def test_single_cell(self):
        side, t = 7, 8
        sites = _all_sites(side)
        L = _layout(sites[:30], sites[30:], side)
        part = build_stencil(L, t * t, origin=(t - 1, t - 1))
        assert part.L == 1
        cell = part.cells[0]
        assert (cell.m_i, cell.n_i) == (L.m, L.n)

    @pytest.mark.parametrize("lam", [1, 4, 9, 16, 25, 64])
    def test_conservation(self, lam):
        rng = np.random.default_rng(lam)
        side = 23
        sites = [_all_sites(side)[i] for i in rng.permutation(side * side)]
        L = _layout(sites[:300], sites[300:420], side)
        t = math.isqrt(lam)
        for origin in [(0, 0), (t - 1, 0), (1, t - 1)]:
            part = build_stencil(L, lam, 0.25, origin)
            assert sum(c.m_i for c in part.cells) == L.m
            assert sum(c.n_i for c in part.cells) == L.n
            assert all(c.n_inside <= c.n_i and c.m_inside <= c.m_i for c in part.cells)

    def test_boundary_goes_to_smaller_cell(self):
        # site 4 sits on the line between the cells covering 1..4 and 5..8
        L = _layout([(4, 4)], [], 9)
        part = build_stencil(L, 16, origin=(0, 0))
        owner = [c for c in part.cells if c.n_i][0]
        assert owner.index == (0, 0)

    def test_thin_margin(self):
        side, t, eta = 24, 4, 1e-3
        sites = _all_sites(side)
        rng = np.random.default_rng(1)
        outs = [sites[i] for i in rng.choice(len(sites), 400, replace=False)]
        L = _layout(outs, [], side)
        origin, part = scan_origins(L, t * t, eta)
        # only the far edge of each cell falls outside the inner part
        offs = (np.array(outs) - np.array(origin) - 1) % t + 1
        ring = int(np.any(offs == t, axis=1).sum())
        assert part.n_inside == L.n - ring
        assert part.n_inside >= L.n * (1 - 2 * eta) ** 2 - ring

    @pytest.mark.parametrize("lam,eta", [(15, 0.25), (0, 0.25), (16, 0.0), (16, 0.5), (16, -0.1)])
    def test_rejects(self, lam, eta):
        L = _layout([(0, 0)], [], 2)
        with pytest.raises(ValueError):
            build_stencil(L, lam, eta)
        with pytest.raises(ValueError):
            scan_origins(L, lam, eta)

    def test_csv(self, tmp_path):
        L = _layout(_all_sites(8)[:40], _all_sites(8)[40:], 8)
        part = build_stencil(L, 16)
        with part.dump_csv(tmp_path / "s.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == part.L
        assert sum(int(r["n_i"]) for r in rows) == 40


class TestClassification:
    def test_threshold_value(self):
        assert nld_threshold(17, 9) == pytest.approx(34 / 9)

    def test_nine_cell_instance(self):
        # 9x9 sites, cells of 3x3: one cell holds 4 inputs, one holds 3, five hold 2
        side, t = 9, 3
        per_cell = {(0, 0): 4, (0, 1): 3, (0, 2): 2, (1, 0): 2, (1, 1): 2, (1, 2): 2, (2, 0): 2}
        inputs, outputs = [], []
        for cx in range(3):
            for cy in range(3):
                cell = [(3 * cx + a, 3 * cy + b) for a in range(3) for b in range(3)]
                q = per_cell.get((cx, cy), 0)
                inputs += cell[:q]
                outputs += cell[q:]
        L = _layout(outputs, inputs, side)
        part = build_stencil(L, t * t, origin=(2, 2))
        assert part.L == 9 and part.m == 17
        by_m = {c.m_i: c.non_local for c in part.cells}
        # 4 > 34/9, so that cell can decode locally; 3 <= 34/9 cannot
        assert by_m[4] is False and by_m[3] is True
        assert nld_fraction(part) == pytest.approx(8 / 9)

    def test_no_inputs(self):
        L = _layout(_all_sites(8), [], 8)
        assert nld_fraction(build_stencil(L, 4)) == 1.0

    def test_inputs_in_one_cell(self):
        side = 16
        sites = _all_sites(side)
        ins = [(x, y) for x, y in sites if x < 4 and y < 4]
        outs = [s for s in sites if s not in ins]
        part = build_stencil(_layout(outs, ins, side), 16, origin=(3, 3))
        assert part.L == 16
        assert nld_fraction(part) >= (part.L - 1) / part.L

    def test_empty_partition(self):
        L = _layout([(0, 0)], [], 1)
        part = build_stencil(L, 1)
        with pytest.raises(ValueError):
            nld_fraction(type(part)(1, 0.25, (0, 0), part.lattice, 0, 0, []))

    def test_lower_bound(self):
        assert nld_lower_bound(0.0) == 0.5
        assert nld_lower_bound(0.5) == pytest.approx(1 / 3)

    @pytest.mark.parametrize("lam", [16, 64])
    def test_distributed_layout(self, lam):
        A = build_matrix(plan_ca_groups(256, 16))
        L = layout_distributed(A)
        _, part = scan_origins(L, lam)
        assert nld_fraction(part) >= nld_lower_bound(A.m / A.n)


class TestOriginScan:
    def test_uniform_grid_is_origin_free(self):
        side, t = 16, 4
        L = _layout(_all_sites(side), [], side)
        counts = {build_stencil(L, t * t, 0.25, (ux, uy)).n_inside for ux in range(t) for uy in range(t)}
        assert len(counts) == 1

    def test_adversarial_cluster(self):
        side, t, eta = 16, 4, 0.25
        sites = _all_sites(side)
        outs = [(x, y) for x, y in sites if x % t == 0]
        ins = [s for s in sites if s not in outs]
        L = _layout(outs, ins, side)
        assert build_stencil(L, t * t, eta, (0, 0)).n_inside == 0
        origin, part = scan_origins(L, t * t, eta)
        assert origin != (0, 0)
        assert part.n_inside >= L.n * (1 - 2 * eta) ** 2

    def test_no_outputs(self):
        L = _layout([], _all_sites(4), 4)
        _, part = scan_origins(L, 4)
        assert part.n_inside == 0 and part.n == 0

    def test_average_over_origins(self):
        rng = np.random.default_rng(7)
        side = 20
        sites = _all_sites(side)
        for _ in range(3):
            outs = [sites[i] for i in rng.choice(len(sites), 150, replace=False)]
            L = _layout(outs, [], side)
            for lam in (4, 9, 16, 25, 64):
                t = math.isqrt(lam)
                counts = [build_stencil(L, lam, 0.25, (ux, uy)).n_inside for ux in range(t) for uy in range(t)]
                assert np.mean(counts) == pytest.approx(L.n * (inner_width(t, 0.25) / t) ** 2)
                _, part = scan_origins(L, lam)
                assert part.n_inside == max(counts)
                if inner_width(t, 0.25) >= t / 2:
                    assert part.n_inside >= L.n * 0.25

    def test_inner_width(self):
        assert [inner_width(t, 0.25) for t in (2, 3, 4, 5, 8, 9, 16)] == [1, 2, 3, 2, 5, 4, 9]


class TestRadiusIdentity:
    @pytest.mark.parametrize("lam,rho", [(16, 1.0), (64, 0.5), (256, 2.0)])
    def test_radius_identity(self, lam, rho):
        A = build_matrix(plan_ca_groups(1024, 32))
        L = layout_distributed(A, rho)
        part = build_stencil(L, lam)
        ratio = sublattice_radius(part) / rho
        assert ratio == pytest.approx(math.sqrt(lam), rel=1e-12)
        assert density_radius(part) == pytest.approx(sublattice_radius(part), rel=1e-9)
        L_eff = (A.n + A.m) / lam
        assert ratio == pytest.approx(math.sqrt((A.n + A.m) / L_eff), rel=1e-9)
