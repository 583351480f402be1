"""Information-friction lower bounds on decoder bit-meters."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "BoundDomainError",
    "BoundParams",
    "BoundValue",
    "bound_sweep",
    "instance_c0",
    "lower_bound_theorem1",
    "scaling_lower_bound",
]

# rates at or above this make the friction bound vacuous
VACUOUS_RATE = 0.25


class BoundDomainError(ValueError):
    """A square-root argument of the bound is negative."""


@dataclass(frozen=True)
class BoundParams:
    n: int
    m: int
    p: float
    Q: int
    eps: float
    rho: float = 1.0
    C0: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.m < 0:
            raise ValueError("need n >= 1 and m >= 0")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"p must lie in (0, 1), got {self.p}")
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if not 0.0 <= self.C0 <= 1.0:
            raise ValueError(f"C0 must lie in [0, 1], got {self.C0}")
        if self.Q < 1 or self.rho <= 0:
            raise ValueError("need Q >= 1 and rho > 0")

    @property
    def R(self) -> float:
        return self.m / self.n


@dataclass(frozen=True)
class BoundValue:
    """A bound value; ``vacuous`` marks a tagged zero outside the bound's regime."""

    value: float
    vacuous: bool = False
    reason: str = ""

    def __float__(self) -> float:
        return self.value


def _rate_radicand(R: float) -> float:
    return 1.0 / (2.0 * R) - (1.0 - R * R + 2.0 * R) / (1.0 + R) ** 2


def lower_bound_theorem1(params: BoundParams) -> BoundValue:
    """Minimum bit-meters of any decoder meeting block-error ``eps`` at rate R.

    ``rho*C0/(24*sqrt 2) * n * (1/4 - R) * p * Q * sqrt(1/(2R) - (1-R^2+2R)/(1+R)^2)
    * sqrt(log_p(10 eps))``.
    """
    R = params.R
    if R >= VACUOUS_RATE:
        return BoundValue(0.0, vacuous=True, reason=f"rate {R:.4g} >= 1/4")
    if R == 0.0:
        raise BoundDomainError("rate must be positive (no measurements)")
    rate_term = _rate_radicand(R)
    if rate_term < 0:
        raise BoundDomainError(f"rate radicand is negative ({rate_term})")
    ten_eps = 10.0 * params.eps
    if ten_eps == 1.0:
        return BoundValue(0.0)
    log_term = math.log(ten_eps) / math.log(params.p)
    if log_term < 0:
        raise BoundDomainError(f"log_p(10 eps) is negative for eps={params.eps}")
    prefactor = params.rho * params.C0 / (24.0 * math.sqrt(2.0))
    value = prefactor * params.n * (0.25 - R) * params.p * params.Q * math.sqrt(rate_term) * math.sqrt(log_term)
    return BoundValue(value)


def scaling_lower_bound(n: int, k: float, m: float, eps: float) -> float:
    """Order-level benchmark ``sqrt(n k^2 / log n) * min(sqrt(k/m), sqrt(log(1/eps)/m))``.

    Unit constant; only meaningful for slope comparisons.
    """
    if n <= 1:
        raise ValueError("need n > 1 so that log n > 0")
    if m <= 0 or k < 0:
        raise ValueError("need m > 0 and k >= 0")
    if not 0.0 < eps <= 1.0:
        raise ValueError(f"eps must lie in (0, 1], got {eps}")
    head = math.sqrt(n * k * k / math.log(n))
    return head * min(math.sqrt(k / m), math.sqrt(-math.log(eps) / m))


def instance_c0(values, bound: float, q: float = 1.0) -> float:
    """``sum |x_i|^q / (k U^q)`` over the support; 0 for an all-zero signal."""
    v = np.asarray(values, dtype=float)
    nz = v[v != 0]
    if nz.size == 0:
        return 0.0
    return float(np.sum(np.abs(nz) ** q) / (nz.size * bound**q))


def bound_sweep(points, path: str | Path, Q: int = 8, rho: float = 1.0, C0: float = 1.0) -> Path:
    """Write both bounds for ``(n, k, m, eps)`` points to CSV, taking ``p = k/n``."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "k", "m", "eps", "theorem1_bound", "corollary_benchmark", "status"])
        for n, k, m, eps in points:
            try:
                b = lower_bound_theorem1(BoundParams(int(n), int(m), k / n, Q, eps, rho, C0))
                value, status = b.value, ("vacuous" if b.vacuous else "ok")
            except BoundDomainError:
                value, status = math.nan, "domain-error"
            w.writerow([n, k, m, repr(float(eps)), repr(value), repr(scaling_lower_bound(n, k, m, eps)), status])
    return path
