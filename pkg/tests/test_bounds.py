from __future__ import annotations

import csv
import math
from fractions import Fraction

import numpy as np
import pytest

from bitmeter.bounds import (
    BoundDomainError,
    BoundParams,
    bound_sweep,
    instance_c0,
    lower_bound_theorem1,
    scaling_lower_bound,
)

RHO_UNIT = 24 * math.sqrt(2)


def _example(**kw):
    args = dict(n=1000, m=100, p=0.01, Q=1, eps=0.001, rho=RHO_UNIT, C0=1.0)
    args.update(kw)
    return BoundParams(**args)


class TestFrictionBound:
    def test_analytic_example(self):
        # exact rationals up to the single square root
        R = Fraction(1, 10)
        radicand = 1 / (2 * R) - (1 - R * R + 2 * R) / (1 + R) ** 2
        head = 1000 * (Fraction(1, 4) - R) * Fraction(1, 100) * 1
        want = float(head) * math.sqrt(radicand)
        assert radicand == Fraction(486, 121)
        assert want == pytest.approx(3.0062, abs=1e-4)
        assert float(lower_bound_theorem1(_example())) == pytest.approx(want, rel=1e-12)

    def test_ten_eps_one_gives_zero(self):
        b = lower_bound_theorem1(_example(eps=0.1))
        assert b.value == 0.0 and not b.vacuous

    def test_quarter_rate_is_vacuous(self):
        b = lower_bound_theorem1(_example(m=250))
        assert b.value == 0.0 and b.vacuous and "1/4" in b.reason
        assert lower_bound_theorem1(_example(m=600)).vacuous

    def test_domain_errors(self):
        with pytest.raises(BoundDomainError):
            lower_bound_theorem1(_example(eps=0.5))
        with pytest.raises(BoundDomainError):
            lower_bound_theorem1(_example(m=0))

    @pytest.mark.parametrize("kw", [dict(p=0.0), dict(p=1.0), dict(eps=0.0), dict(eps=1.0), dict(C0=1.5), dict(Q=0), dict(rho=0.0), dict(n=0)])
    def test_invalid_params(self, kw):
        with pytest.raises(ValueError):
            _example(**kw)

    def test_monotone_in_eps(self):
        eps = np.geomspace(1e-9, 0.0999, 40)
        vals = [lower_bound_theorem1(_example(eps=e)).value for e in eps]
        assert np.all(np.diff(vals) < 0)

    @pytest.mark.parametrize("field,values", [("Q", [1, 2, 8, 16]), ("rho", [0.5, 1, 2, 40]), ("C0", [0.1, 0.4, 0.9, 1.0])])
    def test_monotone_in_positive_factors(self, field, values):
        vals = [lower_bound_theorem1(_example(**{field: v})).value for v in values]
        assert np.all(np.diff(vals) > 0)

    def test_consistent_with_benchmark_across_n(self):
        leading = 1 / (24 * math.sqrt(2))
        for R in (0.05, 0.1, 0.2):
            for eps in (1e-3, 1e-6):
                ratios = []
                for e in range(10, 21):
                    n = 2**e
                    k = math.isqrt(n)
                    m = round(R * n)
                    t = lower_bound_theorem1(BoundParams(n, m, k / n, 8, eps)).value
                    ratios.append(t / scaling_lower_bound(n, k, m, eps))
                # same order in n: the ratio is flat
                assert max(ratios) / min(ratios) <= 1.01
                # and of unit order once the explicit 1/(24 sqrt 2) factor of the bound is set aside
                assert all(0.1 <= r / leading <= 10 for r in ratios)


class TestScaling:
    def test_eps_one_is_zero(self):
        assert scaling_lower_bound(4096, 64, 200, 1.0) == 0.0

    @pytest.mark.parametrize("n", [2**10, 2**14, 2**20, 2**40])
    def test_doubling(self, n):
        k, m, eps = 64, 256, 1e-3
        ratio = scaling_lower_bound(2 * n, k, m, eps) / scaling_lower_bound(n, k, m, eps)
        assert ratio == pytest.approx(math.sqrt(2 / (1 + math.log(2) / math.log(n))), rel=1e-12)
        if n >= 2**40:
            assert ratio == pytest.approx(math.sqrt(2), rel=0.02)

    def test_min_branch_switch(self):
        n, k, m = 2**16, 256, 512
        head = math.sqrt(n * k * k / math.log(n))
        small_eps = scaling_lower_bound(n, k, m, math.exp(-512))
        large_eps = scaling_lower_bound(n, k, m, math.exp(-4))
        assert small_eps == pytest.approx(head * math.sqrt(k / m))
        assert large_eps == pytest.approx(head * math.sqrt(4 / m))
        assert math.sqrt(k / m) < math.sqrt(512 / m) and math.sqrt(4 / m) < math.sqrt(k / m)

    @pytest.mark.parametrize("args", [(1, 4, 4, 0.1), (0, 4, 4, 0.1), (64, 4, 0, 0.1), (64, 4, 4, 0.0), (64, 4, 4, 1.5)])
    def test_rejects(self, args):
        with pytest.raises(ValueError):
            scaling_lower_bound(*args)


class TestInstanceConstant:
    def test_values(self):
        assert instance_c0(np.zeros(5), 1.0) == 0.0
        assert instance_c0(np.array([1.0, 0, -1.0]), 1.0) == 1.0
        assert instance_c0(np.array([0.5, 0, -0.25]), 1.0) == pytest.approx(0.375)
        assert instance_c0(np.array([0.5, 0.5]), 1.0, q=2) == pytest.approx(0.25)


class TestBoundSweep:
    def test_csv(self, tmp_path):
        pts = [(1024, 32, 200, 0.01), (1024, 32, 300, 0.01), (1024, 32, 200, 0.1), (1024, 32, 200, 0.5)]
        with bound_sweep(pts, tmp_path / "b.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert [r["status"] for r in rows] == ["ok", "vacuous", "ok", "domain-error"]
        assert float(rows[0]["theorem1_bound"]) > 0
        assert float(rows[1]["theorem1_bound"]) == 0 and float(rows[2]["theorem1_bound"]) == 0
        assert math.isnan(float(rows[3]["theorem1_bound"]))
        assert float(rows[0]["corollary_benchmark"]) == pytest.approx(scaling_lower_bound(1024, 32, 200, 0.01))
