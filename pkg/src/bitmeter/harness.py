"""Seeded Monte Carlo trials, sweeps, scaling fits and bound comparisons."""

from __future__ import annotations

import csv
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bounds import BoundDomainError, BoundParams, instance_c0, lower_bound_theorem1
from .circuit import layout_centralized, layout_distributed
from .decoder import ca_decode, sa_decode
from .encoder import DEFAULT_SA_MIX, build_matrix, encode, plan_ca_groups, plan_sa_groups
from .signals import ErrorSpec, SparseSignal, UndefinedRatioError, gen_combinatorial, relative_error

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "SCHEMA_VERSION",
    "THREADS_ENV",
    "BoundComparison",
    "ExperimentConfig",
    "FitResult",
    "TrialPoint",
    "TrialRecord",
    "compare_bound",
    "fit_scaling",
    "load_config",
    "read_records",
    "run_trial",
    "sweep",
    "trial_seed",
    "with_overrides",
]

SCHEMA_VERSION = 1
THREADS_ENV = "BITMETER_THREADS"
ALGORITHMS = ("CA", "SA")
LAYOUTS = ("distributed", "centralized")

CSV_COLUMNS = [
    "schema", "n", "k", "m", "algorithm", "layout", "seed", "bit_meters_total",
    "per_stage_meters", "resolved_per_stage", "block_error", "unresolved_count",
    "relative_error", "c0",
]


@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str = "CA"
    layout: str = "distributed"
    n_values: tuple[int, ...] = (1024, 2048, 4096, 8192, 16384, 32768, 65536)
    beta: float = 0.5
    k: int | None = None
    c: int = 2
    C: int = 2
    phi: int = 2
    sa_mix: int = DEFAULT_SA_MIX
    Q: int = 8
    rho: float = 1.0
    bits_per_value: int | None = None
    magnitude_bound: float = 1.0
    trials: int = 50
    base_seed: int = 0
    output_path: str = "sweep.csv"

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        if self.layout not in LAYOUTS:
            raise ValueError(f"layout must be one of {LAYOUTS}")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        for n in self.n_values:
            if self.sparsity(n) < 2:
                raise ValueError(f"n={n} gives k < 2")

    def sparsity(self, n: int) -> int:
        if self.k is not None:
            return int(self.k)
        # the small offset keeps exact powers such as 2**14 ** 0.5 from rounding up
        return int(math.ceil(n ** (1.0 - self.beta) - 1e-9))

    def points(self) -> list["TrialPoint"]:
        return [
            TrialPoint(n, self.sparsity(n), self.algorithm, self.layout, self.c, self.C, self.phi,
                       self.sa_mix, self.Q, self.rho, self.bits_per_value, self.magnitude_bound)
            for n in self.n_values
        ]

    @property
    def spec(self) -> ErrorSpec:
        return ErrorSpec(1.0, self.Q)


def load_config(path: str | Path, **overrides) -> ExperimentConfig:
    with Path(path).open("rb") as fh:
        doc = tomllib.load(fh)
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    if "n_values" in doc:
        doc["n_values"] = tuple(doc["n_values"])
    return ExperimentConfig(**doc)


@dataclass(frozen=True)
class TrialPoint:
    n: int
    k: int
    algorithm: str = "CA"
    layout: str = "distributed"
    c: int = 2
    C: int = 2
    phi: int = 2
    sa_mix: int = DEFAULT_SA_MIX
    Q: int = 8
    rho: float = 1.0
    bits_per_value: int | None = None
    magnitude_bound: float = 1.0


@dataclass
class TrialRecord:
    n: int
    k: int
    m: int
    algorithm: str
    layout: str
    seed: int
    bit_meters_total: float
    per_stage: dict[int, float]
    resolved_per_stage: dict[int, int]
    block_error: bool
    unresolved_count: int
    relative_error: float
    c0: float
    wall_time: float = field(default=0.0, compare=False)

    @property
    def key(self) -> tuple:
        return (self.n, self.k, self.algorithm, self.layout, self.seed)

    def to_row(self) -> list:
        return [
            SCHEMA_VERSION, self.n, self.k, self.m, self.algorithm, self.layout, self.seed,
            repr(self.bit_meters_total),
            json.dumps({str(s): v for s, v in sorted(self.per_stage.items())}),
            json.dumps({str(s): v for s, v in sorted(self.resolved_per_stage.items())}),
            int(self.block_error), self.unresolved_count, repr(self.relative_error), repr(self.c0),
        ]

    @classmethod
    def from_row(cls, row: dict) -> "TrialRecord":
        if int(row["schema"]) != SCHEMA_VERSION:
            raise ValueError(f"unsupported CSV schema version {row['schema']}")
        return cls(
            n=int(row["n"]), k=int(row["k"]), m=int(row["m"]), algorithm=row["algorithm"],
            layout=row["layout"], seed=int(row["seed"]), bit_meters_total=float(row["bit_meters_total"]),
            per_stage={int(s): float(v) for s, v in json.loads(row["per_stage_meters"]).items()},
            resolved_per_stage={int(s): int(v) for s, v in json.loads(row["resolved_per_stage"]).items()},
            block_error=bool(int(row["block_error"])), unresolved_count=int(row["unresolved_count"]),
            relative_error=float(row["relative_error"]), c0=float(row["c0"]),
        )

    def to_json(self) -> str:
        doc = asdict(self)
        doc["per_stage"] = {str(s): v for s, v in self.per_stage.items()}
        doc["resolved_per_stage"] = {str(s): v for s, v in self.resolved_per_stage.items()}
        return json.dumps(doc)


def trial_seed(base_seed: int, n: int, k: int, trial: int) -> int:
    """63-bit seed for one trial, shared by every algorithm and layout at that point."""
    state = np.random.SeedSequence([int(base_seed), int(n), int(k), int(trial)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))


def run_trial(point: TrialPoint, seed: int, signal: SparseSignal | None = None, trace: bool = False):
    """Generate, encode, lay out, decode and meter one instance.

    ``signal`` overrides the generated input (the plan is still sized for
    ``point.k``). Returns the record; with ``trace`` also the decoder result.
    """
    start = time.perf_counter()
    n, k = point.n, point.k
    x = signal if signal is not None else gen_combinatorial(n, k, point.magnitude_bound, seed)
    if point.algorithm == "CA":
        plan = plan_ca_groups(n, k, point.C, point.phi)
    else:
        plan = plan_sa_groups(n, k, point.C, point.phi, seed=seed, mix=point.sa_mix)
    A = build_matrix(plan, point.c, None, seed)
    layout = (layout_distributed if point.layout == "distributed" else layout_centralized)(A, point.rho)
    decode = ca_decode if point.algorithm == "CA" else sa_decode
    spec = ErrorSpec(1.0, point.Q)
    result = decode(encode(A, x), A, plan, layout, spec, point.bits_per_value, trace)

    try:
        err = relative_error(x, result.estimate, spec)
    except UndefinedRatioError:
        err = math.inf
    flag = err > spec.threshold
    record = TrialRecord(
        n=n, k=k, m=A.m, algorithm=point.algorithm, layout=point.layout, seed=int(seed),
        bit_meters_total=float(result.ledger.total),
        per_stage={s: float(result.ledger.per_stage.get(s, 0.0)) for s in range(1, plan.clearing_stage + 1)},
        resolved_per_stage=result.resolved_per_stage,
        block_error=flag, unresolved_count=int(result.unresolved.size), relative_error=err,
        c0=instance_c0(x.values, x.magnitude_bound), wall_time=time.perf_counter() - start,
    )
    return (record, result) if trace else record


def _worker_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None


def _run_job(job):
    point, seed = job
    return run_trial(point, seed)


def read_records(path: str | Path) -> list[TrialRecord]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"CSV is missing columns {sorted(missing)}")
        return [TrialRecord.from_row(r) for r in reader]


def sweep(config: ExperimentConfig, out: str | Path | None = None, workers: int | None = None) -> Path:
    """Run every grid point for ``config.trials`` seeds and write one CSV row per trial.

    Rows already present in ``out`` (same schema, same key) are kept rather
    than recomputed, so an interrupted sweep resumes. Rows are sorted by key,
    which makes the file independent of scheduling. Wall times go to a
    ``.timing.csv`` sidecar so the results file stays byte-reproducible.
    """
    path = Path(out if out is not None else config.output_path)
    done: dict[tuple, TrialRecord] = {}
    if path.exists() and path.stat().st_size:
        done = {r.key: r for r in read_records(path)}
    jobs = []
    for point in config.points():
        for t in range(config.trials):
            seed = trial_seed(config.base_seed, point.n, point.k, t)
            if (point.n, point.k, point.algorithm, point.layout, seed) not in done:
                jobs.append((point, seed))

    workers = _worker_count() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fresh = list(pool.map(_run_job, jobs, chunksize=max(1, len(jobs) // (8 * workers))))
    else:
        fresh = [_run_job(j) for j in jobs]

    wanted = {(p.n, p.k, p.algorithm, p.layout) for p in config.points()}
    records = {**done, **{r.key: r for r in fresh}}
    rows = sorted((r for r in records.values() if r.key[:4] in wanted), key=lambda r: r.key)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_COLUMNS)
            for r in rows:
                w.writerow(r.to_row())
        if fresh:
            with path.with_suffix(".timing.csv").open("w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["n", "k", "algorithm", "layout", "seed", "wall_time"])
                for r in sorted(fresh, key=lambda r: r.key):
                    w.writerow([*r.key, f"{r.wall_time:.6f}"])
    except OSError as exc:
        raise OSError(f"cannot write sweep output {path}: {exc}") from exc
    return path


def _as_records(source) -> list[TrialRecord]:
    if isinstance(source, (str, Path)):
        return read_records(source)
    return list(source)


def _select(records, algorithm=None, layout=None):
    return [r for r in records if (algorithm is None or r.algorithm == algorithm) and (layout is None or r.layout == layout)]


def _by_point(records) -> dict[tuple[int, int], list[TrialRecord]]:
    points: dict[tuple[int, int], list[TrialRecord]] = {}
    for r in records:
        points.setdefault((r.n, r.k), []).append(r)
    return dict(sorted(points.items()))


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r2: float
    x: np.ndarray
    y: np.ndarray


def _fit_loglog(x, y) -> FitResult:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 3:
        raise ValueError(f"need at least 3 grid points to fit, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive values")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    pred = slope * lx + intercept
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum((ly - pred) ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return FitResult(float(slope), float(intercept), r2, x, y)


def fit_scaling(source, x_expr: str = "nk", algorithm: str | None = None, layout: str | None = None) -> FitResult:
    """Least-squares slope of log(median bit-meters) against log(nk) or log(n)."""
    if x_expr not in ("nk", "n"):
        raise ValueError("x_expr must be 'nk' or 'n'")
    points = _by_point(_select(_as_records(source), algorithm, layout))
    x = [n * k if x_expr == "nk" else n for n, k in points]
    y = [float(np.median([r.bit_meters_total for r in rs])) for rs in points.values()]
    return _fit_loglog(x, y)


@dataclass(frozen=True)
class BoundRow:
    n: int
    k: int
    m: int
    trials: int
    median_bit_meters: float
    error_rate: float
    eps: float
    c0: float
    bound: float
    ratio: float
    status: str

    @property
    def holds(self) -> bool:
        return self.status != "ok" or self.median_bit_meters >= self.bound


@dataclass(frozen=True)
class BoundComparison:
    rows: list[BoundRow]

    @property
    def violations(self) -> list[BoundRow]:
        return [r for r in self.rows if not r.holds]

    @property
    def max_ratio(self) -> float:
        ratios = [r.ratio for r in self.rows if r.status == "ok" and math.isfinite(r.ratio)]
        return max(ratios) if ratios else math.nan


def compare_bound(source, Q: int = 8, rho: float = 1.0, algorithm=None, layout=None) -> BoundComparison:
    """Measured median bit-meters against the friction lower bound per grid point.

    The block-error rate entering the bound is the empirical rate, floored at
    ``1/(2 * trials)`` so a clean run does not claim zero error. ``C0`` is the
    largest instance constant seen at the point, the strictest choice.
    """
    rows = []
    for (n, k), rs in _by_point(_select(_as_records(source), algorithm, layout)).items():
        m = rs[0].m
        mu = float(np.median([r.bit_meters_total for r in rs]))
        rate = float(np.mean([r.block_error for r in rs]))
        eps = min(max(rate, 1.0 / (2 * len(rs))), 1.0 - 1e-12)
        c0 = max(r.c0 for r in rs)
        try:
            b = lower_bound_theorem1(BoundParams(n, m, k / n, Q, eps, rho, c0))
            bound, status = b.value, ("vacuous" if b.vacuous else "ok")
        except BoundDomainError:
            bound, status = math.nan, "domain-error"
        if status != "ok":
            ratio = math.inf
        else:
            ratio = mu / bound if bound > 0 else (math.inf if mu > 0 else math.nan)
        rows.append(BoundRow(n, k, m, len(rs), mu, rate, eps, c0, bound, ratio, status))
    return BoundComparison(rows)


def with_overrides(config: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
