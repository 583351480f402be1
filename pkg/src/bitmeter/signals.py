"""Sparse input vectors, reconstruction error and block-error flags."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ErrorSpec",
    "SparseSignal",
    "UndefinedRatioError",
    "block_error_flag",
    "gen_combinatorial",
    "gen_probabilistic",
    "make_rng",
    "quantize",
    "relative_error",
]

# nonzero magnitudes are drawn from [floor * U, U]
DEFAULT_FLOOR = 1.0 / 16.0


class UndefinedRatioError(ValueError):
    """Relative error requested against an all-zero truth with a nonzero estimate."""


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *stream)``.

    Every consumer of randomness gets its own stream index, so a trial can be
    replayed from its seed alone regardless of call order elsewhere.
    """
    key = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, stream)])
    return np.random.Generator(np.random.Philox(key))


@dataclass(frozen=True)
class ErrorSpec:
    norm_order: float = 1.0
    precision_bits: int = 8

    def __post_init__(self):
        q = self.norm_order
        if not (q == math.inf or (0.0 <= q < math.inf)):
            raise ValueError(f"norm_order must lie in [0, inf], got {q}")
        if int(self.precision_bits) != self.precision_bits or self.precision_bits < 1:
            raise ValueError("precision_bits must be a positive integer")

    @property
    def threshold(self) -> float:
        return 2.0 ** (-self.precision_bits)


@dataclass(frozen=True)
class SparseSignal:
    """A length-n real vector together with its support.

    ``model`` is ``"combinatorial"`` (``param`` = k) or ``"probabilistic"``
    (``param`` = p).
    """

    values: np.ndarray
    support: np.ndarray
    magnitude_bound: float
    model: str
    param: float
    min_magnitude: float = 0.0
    seed: int | None = field(default=None, compare=False)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])

    @property
    def k(self) -> int:
        return int(self.support.shape[0])

    def to_json(self) -> str:
        params = {
            "bound": self.magnitude_bound,
            "min_magnitude": self.min_magnitude,
            ("k" if self.model == "combinatorial" else "p"): self.param,
        }
        if self.seed is not None:
            params["seed"] = self.seed
        pairs = [[int(i), float(self.values[i])] for i in self.support]
        return json.dumps({"n": self.n, "model": self.model, "params": params, "support": pairs})

    @classmethod
    def from_json(cls, text: str) -> "SparseSignal":
        doc = json.loads(text)
        n = int(doc["n"])
        values = np.zeros(n)
        idx = np.array([int(i) for i, _ in doc["support"]], dtype=np.int64)
        values[idx] = [float(v) for _, v in doc["support"]]
        params = doc["params"]
        param = params["k"] if doc["model"] == "combinatorial" else params["p"]
        return cls(
            values=values,
            support=np.sort(idx),
            magnitude_bound=float(params["bound"]),
            model=doc["model"],
            param=param,
            min_magnitude=float(params.get("min_magnitude", 0.0)),
            seed=params.get("seed"),
        )


def _magnitudes(rng: np.random.Generator, size: int, bound: float, floor: float) -> np.ndarray:
    mags = rng.uniform(floor * bound, bound, size=size)
    signs = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    return mags * signs


def _check_floor(floor: float) -> None:
    if not 0.0 < floor <= 1.0:
        raise ValueError("floor must lie in (0, 1]")


def gen_combinatorial(
    n: int, k: int, bound: float = 1.0, seed: int = 0, floor: float = DEFAULT_FLOOR
) -> SparseSignal:
    """Exactly-k-sparse signal with uniformly placed support.

    Nonzero values are uniform on ``[-U, -floor*U] U [floor*U, U]``.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if k < 0 or k > n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    if bound <= 0:
        raise ValueError("magnitude bound must be positive")
    _check_floor(floor)
    rng = make_rng(seed, 0)
    support = np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)
    values = np.zeros(n)
    values[support] = _magnitudes(rng, k, bound, floor)
    return SparseSignal(values, support, float(bound), "combinatorial", int(k), floor * bound, seed)


def gen_probabilistic(
    n: int, p: float, bound: float = 1.0, seed: int = 0, floor: float = DEFAULT_FLOOR
) -> SparseSignal:
    """Each entry is nonzero independently with probability ``p``."""
    if n < 1:
        raise ValueError("n must be positive")
    if not 0.0 < p < 1.0:
        raise ValueError(f"p must lie in (0, 1), got {p}")
    if bound <= 0:
        raise ValueError("magnitude bound must be positive")
    _check_floor(floor)
    rng = make_rng(seed, 0)
    support = np.flatnonzero(rng.random(n) < p).astype(np.int64)
    values = np.zeros(n)
    values[support] = _magnitudes(rng, support.size, bound, floor)
    return SparseSignal(values, support, float(bound), "probabilistic", float(p), floor * bound, seed)


def _norm(v: np.ndarray, q: float) -> float:
    if q == 0:
        return float(np.count_nonzero(v))
    if q == math.inf:
        return float(np.max(np.abs(v))) if v.size else 0.0
    return float(np.sum(np.abs(v) ** q) ** (1.0 / q))


def relative_error(truth: SparseSignal | np.ndarray, estimate, spec: ErrorSpec = ErrorSpec()) -> float:
    """``||x - xhat||_q / ||x||_q``; q=0 counts mismatched entries, q=inf is max-abs."""
    x = truth.values if isinstance(truth, SparseSignal) else np.asarray(truth, dtype=float)
    xhat = np.asarray(estimate, dtype=float)
    if xhat.shape != x.shape:
        raise ValueError(f"estimate has shape {xhat.shape}, expected {x.shape}")
    q = spec.norm_order
    num = _norm(x - xhat, q)
    den = _norm(x, q)
    if den == 0.0:
        if num == 0.0:
            return 0.0
        raise UndefinedRatioError("truth is identically zero but the estimate is not")
    return num / den


def block_error_flag(truth: SparseSignal | np.ndarray, estimate, spec: ErrorSpec = ErrorSpec()) -> bool:
    """True iff the relative error strictly exceeds ``2**-Q``."""
    return relative_error(truth, estimate, spec) > spec.threshold


def quantize(values, precision_bits: int) -> np.ndarray:
    """Round to ``precision_bits + 1`` significant bits.

    The relative rounding error is at most ``2**-(precision_bits + 1)``, so a
    value sent with this quantizer meets the Q-bit relative-precision target.
    """
    v = np.asarray(values, dtype=float)
    mant, expo = np.frexp(v)
    scale = 2.0 ** (precision_bits + 1)
    return np.ldexp(np.round(mant * scale) / scale, expo)
