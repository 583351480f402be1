from __future__ import annotations

import csv
import math

import numpy as np
import pytest

from bitmeter.circuit import (
    BitMeterLedger,
    Lattice,
    distance,
    gilbert2d,
    layout_centralized,
    layout_distributed,
    place_centralized,
    record_transmission,
    route_and_meter,
)
from bitmeter.encoder import build_matrix, plan_ca_groups, plan_sa_groups


def _min_pairwise(coords):
    d = np.hypot(*(coords[:, None, :] - coords[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(d, np.inf)
    return d.min()


class TestGeometry:
    def test_distance(self):
        assert distance((0, 0), (0, 0)) == 0
        assert distance((0, 0), (3, 4)) == 5
        rng = np.random.default_rng(0)
        for a, b in rng.normal(size=(20, 2, 2)):
            assert distance(a, b) == distance(b, a)

    def test_lattice(self):
        lat = Lattice(1.5)
        assert lat.spacing == 3.0
        assert lat.det == pytest.approx(9.0)
        assert lat.packing_density == pytest.approx(math.pi / 4)
        with pytest.raises(ValueError):
            Lattice(0)

    @pytest.mark.parametrize("w,h", [(1, 1), (5, 3), (8, 8), (7, 7), (33, 34), (64, 64)])
    def test_curve_visits_every_cell(self, w, h):
        c = gilbert2d(w, h)
        assert c.shape == (w * h, 2)
        assert len({tuple(p) for p in c.tolist()}) == w * h
        steps = np.abs(np.diff(c, axis=0)).sum(axis=1)
        # unit steps, except rare diagonal moves on odd-sided grids
        assert np.all(steps <= 2)
        if w % 2 == 0 and h % 2 == 0:
            assert np.all(steps == 1)

    def test_curve_locality(self):
        c = gilbert2d(64, 64).astype(float)
        for s in (16, 64, 256):
            windows = [c[i:i + s] for i in range(0, c.shape[0] - s, s)]
            diam = max(np.ptp(w, axis=0).max() for w in windows)
            assert diam <= 3 * math.sqrt(s)


class TestDistributedLayout:
    def test_small_audit(self):
        plan = plan_ca_groups(16, 4, C=1, stages=2)
        A = build_matrix(plan, c=2)
        L = layout_distributed(A, rho=1.0)
        assert L.coords.shape == (A.n + A.m, 2)
        assert len({tuple(p) for p in L.coords.tolist()}) == A.n + A.m
        assert [len(g) for g in plan.members(1)] == [4, 4, 4, 4]
        for g, members in enumerate(plan.members(1)):
            ins = L.row_node(A.group_rows(1, g))
            d = L.dist(ins[:, None], members[None, :])
            # inside the cell holding the group's 4 outputs and 2 inputs
            assert d.max() <= 2 * L.lattice.spacing * math.sqrt(len(members) + A.c)

    @pytest.mark.parametrize("rho", [0.5, 1.0, 3.0])
    def test_min_spacing(self, rho):
        A = build_matrix(plan_ca_groups(256, 16))
        L = layout_distributed(A, rho)
        assert _min_pairwise(L.coords) >= 2 * rho * (1 - 1e-12)
        assert np.all(np.mod(L.coords, 2 * rho) < 1e-9)

    def test_rejects_rho(self):
        A = build_matrix(plan_ca_groups(64, 4))
        with pytest.raises(ValueError):
            layout_distributed(A, 0.0)
        with pytest.raises(ValueError):
            layout_centralized(A, -1.0)

    def test_cell_pairs_are_close(self):
        n, k = 4096, 64
        A = build_matrix(plan_ca_groups(n, k))
        L = layout_distributed(A)
        for members in A.plan.members(1)[::7]:
            d = L.dist(members[:, None], members[None, :])
            assert d.max() <= 3 * L.lattice.spacing * math.sqrt(n / k)

    def test_hub_distance_profile(self):
        def worst_ratio(n, k, C=2, stages=None):
            A = build_matrix(plan_ca_groups(n, k, C, stages=stages))
            L = layout_distributed(A)
            ratios = []
            for s in range(1, A.plan.local_stages):
                worst = max(
                    float(L.dist(L.hub_of[(s, g)], L.hub_of[(s + 1, g // 2)]))
                    for g in range(A.plan.group_counts[s - 1])
                )
                ratios.append(worst / (L.lattice.packing_radius * math.sqrt(2 ** (s - 1) * n / k)))
            return max(ratios)

        A16 = worst_ratio(16, 4, C=1, stages=2)
        for n, k in [(256, 16), (1024, 32), (4096, 64), (16384, 128)]:
            assert worst_ratio(n, k) <= A16

    def test_shotgun_layout_valid(self):
        A = build_matrix(plan_sa_groups(1024, 32, seed=3))
        L = layout_distributed(A)
        assert len({tuple(p) for p in L.coords.tolist()}) == A.n + A.m


class TestCentralizedLayout:
    def test_single_input_at_center(self):
        L = place_centralized(24, 1)
        assert L.side == 5
        assert np.allclose(L.input_nodes[0], L.center())

    def test_expected_distance(self):
        n, m = 10_000, 100
        L = place_centralized(n, m)
        mean = L.dist(np.arange(n, n + m)[:, None], np.arange(n)[None, :]).mean()
        assert 0.1 * math.sqrt(n) <= mean <= 10 * math.sqrt(n)

    def test_inputs_in_disk(self):
        A = build_matrix(plan_ca_groups(4096, 64))
        L = layout_centralized(A)
        centre = np.array([L.side // 2, L.side // 2]) * L.lattice.spacing
        r = np.hypot(*(L.input_nodes - centre).T)
        assert r.max() <= math.ceil(math.sqrt(A.m / math.pi)) * 2 * L.lattice.packing_radius + L.lattice.spacing
        assert len({tuple(p) for p in L.coords.tolist()}) == A.n + A.m

    def test_distance_grows_as_sqrt_n(self):
        m = 100
        sizes = 2.0 ** np.arange(10, 17)
        means = []
        for n in sizes.astype(int):
            L = place_centralized(n, m)
            means.append(L.dist(np.arange(n, n + m)[:, None], np.arange(n)[None, :]).mean())
        slope = np.polyfit(np.log(sizes), np.log(means), 1)[0]
        assert 0.45 <= slope <= 0.55


@pytest.fixture()
def line_layout():
    A = build_matrix(plan_ca_groups(64, 4))
    return layout_distributed(A)


class TestLedger:
    def test_empty(self):
        assert BitMeterLedger().total == 0

    def test_bits_times_distance(self, line_layout):
        led = BitMeterLedger(line_layout)
        led.record(0, 1, 8, stage=1, dist=5.0)
        assert led.total == 40

    def test_self_send_is_free(self, line_layout):
        led = BitMeterLedger(line_layout)
        led.record(3, 3, 16, stage=1)
        assert led.total == 0

    def test_rejects(self, line_layout):
        led = BitMeterLedger(line_layout)
        with pytest.raises(ValueError):
            led.record(0, 1, 0, stage=1)
        with pytest.raises(ValueError):
            led.record(0, 10**6, 4, stage=1)
        with pytest.raises(ValueError):
            led.record_many([0, 1], [2, 3], [4, -1], stage=1)

    def test_additivity(self, line_layout):
        rng = np.random.default_rng(2)
        total = line_layout.coords.shape[0]
        sends = [(int(a), int(b), int(bits), int(s)) for a, b, bits, s in zip(
            rng.integers(total, size=30), rng.integers(total, size=30), rng.integers(1, 40, size=30), rng.integers(1, 4, size=30))]
        one = BitMeterLedger(line_layout)
        for s in sends:
            one.record(*s)
        two = BitMeterLedger(line_layout)
        for s in reversed(sends):
            two.record(*s)
        parts = [BitMeterLedger(line_layout) for _ in range(2)]
        for i, s in enumerate(sends):
            parts[i % 2].record(*s)
        merged = parts[0].merged(parts[1])
        assert one.total == pytest.approx(two.total) == pytest.approx(merged.total)
        assert one.total == pytest.approx(sum(one.per_stage.values()))
        assert one.total >= 0

    def test_routes(self, line_layout):
        led = route_and_meter(BitMeterLedger(), [0, 1, 2, 3], 4, stage=1, layout=line_layout)
        hops = sum(float(line_layout.dist(a, b)) for a, b in [(0, 1), (1, 2), (2, 3)])
        assert led.total == pytest.approx(4 * hops)
        direct = record_transmission(BitMeterLedger(line_layout), 0, 3, 4, 1)
        assert led.total >= direct.total - 1e-12
        assert route_and_meter(BitMeterLedger(line_layout), [5], 4, 1).total == 0

    def test_unit_hop_chain(self, line_layout):
        led = BitMeterLedger(line_layout)
        for _ in range(3):
            led.record(0, 1, 4, stage=2, dist=1.0)
        assert led.total == 12 and led.per_stage == {2: 12.0}

    def test_csv_dumps(self, line_layout, tmp_path):
        led = BitMeterLedger(line_layout)
        led.record(0, 5, 3, 1)
        led.record(2, 7, 3, 2)
        with led.dump_csv(tmp_path / "ledger.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert sum(float(r["bit_meters"]) for r in rows) == pytest.approx(led.total)
        with line_layout.dump_csv(tmp_path / "layout.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == line_layout.coords.shape[0]
        assert {r["kind"] for r in rows} == {"in", "out"}
        assert any("1:0" in r["stage_hub_tags"].split(";") for r in rows)
