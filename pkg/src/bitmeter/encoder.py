"""Stage-structured pure-phase measurement matrices.

A plan splits the n columns into groups at every local decoding stage.
Each group gets ``c`` measurement rows: one identification row whose phase
encodes the column index and ``c - 1`` verification rows with random phases.
A final clearing block hashes every column into ``d`` buckets of a sparse
peeling graph.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signals import SparseSignal, make_rng

__all__ = [
    "CLEARING_DEGREE",
    "EncodingMatrix",
    "GroupPlan",
    "build_matrix",
    "encode",
    "identification_phase",
    "load_matrix",
    "local_stage_count",
    "plan_ca_groups",
    "plan_sa_groups",
    "save_matrix",
]

IDENTIFICATION = 0
VERIFICATION = 1
CLEARING_DEGREE = 3

STREAM_PLAN = 1
STREAM_MATRIX = 2

# stage-i groups sharing one shuffle window in the re-randomized plan
DEFAULT_SA_MIX = 32


def local_stage_count(k: int, growth: int) -> int:
    """Number of merge stages before clearing: ``floor(log_growth(k / log2 k))``, at least 1."""
    if k < 2:
        raise ValueError("k must be at least 2")
    ratio = k / math.log2(k)
    # tiny epsilon guards exact powers against float round-down
    return max(1, int(math.floor(math.log(ratio, growth) + 1e-12)))


@dataclass
class GroupPlan:
    """Column-to-group assignment for each local stage.

    Stages are numbered from 1; stage ``stage_count`` is the clearing stage,
    which has no groups of its own here.
    """

    n: int
    k: int
    kind: str
    growth: int
    first_stage_groups: int
    assignments: list[np.ndarray]
    group_counts: list[int]
    _members: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def local_stages(self) -> int:
        return len(self.assignments)

    @property
    def stage_count(self) -> int:
        return self.local_stages + 1

    @property
    def clearing_stage(self) -> int:
        return self.stage_count

    def members(self, stage: int) -> list[np.ndarray]:
        """Sorted column indices of every group at ``stage`` (1-based)."""
        if stage not in self._members:
            assign = self.assignments[stage - 1]
            order = np.argsort(assign, kind="stable")
            counts = np.bincount(assign, minlength=self.group_counts[stage - 1])
            self._members[stage] = np.split(order, np.cumsum(counts)[:-1])
        return self._members[stage]

    def groups(self, stage: int) -> list[set[int]]:
        return [set(map(int, g)) for g in self.members(stage)]


def _validate(n: int, k: int, C: int, growth: int) -> None:
    if n < 1:
        raise ValueError("n must be positive")
    if k < 2:
        raise ValueError("k must be at least 2 for a multi-stage plan")
    if C < 1 or int(C) != C:
        raise ValueError("C must be a positive integer")
    if growth < 2 or int(growth) != growth:
        raise ValueError("growth factor must be an integer >= 2")
    if C * k > n:
        raise ValueError(f"C*k = {C * k} exceeds n = {n}")


def _first_stage(n: int, groups: int) -> np.ndarray:
    # contiguous balanced split; sizes differ by at most one
    return (np.arange(n, dtype=np.int64) * groups) // n


def plan_ca_groups(
    n: int, k: int, C: int = 2, growth: int = 2, stages: int | None = None
) -> GroupPlan:
    """Nested plan: each stage merges ``growth`` adjacent groups of the previous one."""
    _validate(n, k, C, growth)
    S = local_stage_count(k, growth) if stages is None else int(stages)
    G1 = C * k
    base = _first_stage(n, G1)
    assignments, counts = [], []
    for i in range(S):
        width = growth**i
        assignments.append(base // width)
        counts.append(-(-G1 // width))
    return GroupPlan(n, k, "CA", growth, G1, assignments, counts)


def plan_sa_groups(
    n: int, k: int, C: int = 2, growth: int = 2, seed: int = 0, stages: int | None = None,
    mix: int | None = None,
) -> GroupPlan:
    """Re-randomized plan: every stage after the first draws a fresh grouping.

    Stage i has about ``C*k / growth**(i-1)`` groups. To keep groups spatially
    compact, the shuffle at stage i mixes columns only inside windows of
    ``mix`` consecutive stage-i groups (default 32), so colliding
    columns from an earlier stage can land in different groups later.
    """
    _validate(n, k, C, growth)
    S = local_stage_count(k, growth) if stages is None else int(stages)
    rng = make_rng(seed, STREAM_PLAN)
    mix = DEFAULT_SA_MIX if mix is None else int(mix)
    if mix < 2:
        raise ValueError("mix must be at least 2")
    G1 = C * k
    base = _first_stage(n, G1)
    assignments, counts = [base.copy()], [G1]
    for i in range(1, S):
        width = growth**i
        nested = base // width
        G = -(-G1 // width)
        window = nested // mix
        assign = np.empty(n, dtype=np.int64)
        for w in np.unique(window):
            cols = np.flatnonzero(window == w)
            gids = np.unique(nested[cols])
            shuffled = rng.permutation(cols)
            split = (np.arange(cols.size) * gids.size) // cols.size
            assign[shuffled] = gids[split]
        assignments.append(assign)
        counts.append(G)
    return GroupPlan(n, k, "SA", growth, G1, assignments, counts)


def identification_phase(row, col, n: int):
    """Phase ``pi*i*j/(2n^2)`` with 1-based row ``i`` and column ``j``; inputs are 0-based."""
    return np.pi * (np.asarray(row) + 1.0) * (np.asarray(col) + 1.0) / (2.0 * n * n)


@dataclass
class EncodingMatrix:
    """Column-major sparse complex matrix with per-row stage metadata.

    ``col_rows[j]`` lists the rows that touch column ``j`` and ``col_phase[j]``
    the matching phases; every stored entry is ``exp(1j * phase)``.
    Clearing rows carry stage ``plan.clearing_stage`` and their bucket id as group.
    """

    plan: GroupPlan
    c: int
    row_stage: np.ndarray
    row_group: np.ndarray
    row_kind: np.ndarray
    col_rows: np.ndarray
    col_phase: np.ndarray
    stage_offsets: list[int]
    n_buckets: int
    degree: int

    @property
    def n(self) -> int:
        return self.plan.n

    @property
    def m(self) -> int:
        return int(self.row_stage.shape[0])

    @property
    def clearing_offset(self) -> int:
        return self.stage_offsets[-1]

    @property
    def clearing_rows(self) -> np.ndarray:
        return np.arange(self.clearing_offset, self.m)

    def group_rows(self, stage: int, group: int) -> np.ndarray:
        return self.stage_offsets[stage - 1] + self.c * group + np.arange(self.c)

    def entries(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Dense block ``A[rows][:, cols]`` (zeros where a column misses a row)."""
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        hit = self.col_rows[cols][:, :, None] == rows[None, None, :]
        vals = np.exp(1j * self.col_phase[cols])[:, :, None] * hit
        return vals.sum(axis=1).T

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.m, self.n), dtype=complex)
        cols = np.repeat(np.arange(self.n), self.col_rows.shape[1])
        np.add.at(out, (self.col_rows.ravel(), cols), np.exp(1j * self.col_phase.ravel()))
        return out

    def measurement_bound(self) -> int:
        """``c*C*k*growth/(growth-1)`` plus the clearing rows actually built."""
        plan = self.plan
        C = plan.first_stage_groups // plan.k
        local = self.c * C * plan.k * plan.growth / (plan.growth - 1)
        return int(math.floor(local)) + (self.m - self.clearing_offset)


def build_matrix(
    plan: GroupPlan,
    c: int = 2,
    clearing_budget: int | None = None,
    seed: int = 0,
    degree: int = CLEARING_DEGREE,
) -> EncodingMatrix:
    """Emit ``c`` rows per group per local stage, then the clearing block.

    The clearing block has ``c * clearing_budget`` buckets (default budget
    ``ceil(sqrt(k))``), each with ``c`` rows; every column joins ``degree``
    distinct buckets chosen at random.
    """
    if c < 2 or int(c) != c:
        raise ValueError("c must be an integer >= 2")
    n = plan.n
    budget = math.isqrt(plan.k - 1) + 1 if clearing_budget is None else int(clearing_budget)
    if budget < 1:
        raise ValueError("clearing budget must be positive")
    n_buckets = c * budget
    degree = min(degree, n_buckets)
    rng = make_rng(seed, STREAM_MATRIX)

    S = plan.local_stages
    width = c * (S + degree)
    col_rows = np.empty((n, width), dtype=np.int64)
    offsets = [0]
    stage_l, group_l, kind_l = [], [], []
    kinds = np.r_[IDENTIFICATION, np.full(c - 1, VERIFICATION)]
    for s in range(S):
        G = plan.group_counts[s]
        assign = plan.assignments[s]
        for t in range(c):
            col_rows[:, s * c + t] = offsets[s] + c * assign + t
        stage_l.append(np.full(G * c, s + 1))
        group_l.append(np.repeat(np.arange(G), c))
        kind_l.append(np.tile(kinds, G))
        offsets.append(offsets[s] + G * c)

    clear_off = offsets[-1]
    buckets = np.argsort(rng.random((n, n_buckets)), axis=1)[:, :degree]
    for e in range(degree):
        for t in range(c):
            col_rows[:, (S + e) * c + t] = clear_off + c * buckets[:, e] + t
    stage_l.append(np.full(n_buckets * c, S + 1))
    group_l.append(np.repeat(np.arange(n_buckets), c))
    kind_l.append(np.tile(kinds, n_buckets))

    row_stage = np.concatenate(stage_l).astype(np.int64)
    row_group = np.concatenate(group_l).astype(np.int64)
    row_kind = np.concatenate(kind_l).astype(np.int8)

    cols = np.broadcast_to(np.arange(n)[:, None], col_rows.shape)
    ident = row_kind[col_rows] == IDENTIFICATION
    col_phase = rng.uniform(0.0, np.pi / 2, size=col_rows.shape)
    col_phase[ident] = identification_phase(col_rows[ident], cols[ident], n)

    return EncodingMatrix(
        plan, int(c), row_stage, row_group, row_kind, col_rows, col_phase, offsets, n_buckets, degree
    )


def encode(A: EncodingMatrix, x: SparseSignal | np.ndarray) -> np.ndarray:
    """Measurements ``y = A x`` in double precision."""
    values = x.values if isinstance(x, SparseSignal) else np.asarray(x, dtype=float)
    if values.shape != (A.n,):
        raise ValueError(f"signal length {values.shape} does not match n = {A.n}")
    y = np.zeros(A.m, dtype=complex)
    support = np.flatnonzero(values)
    if support.size:
        contrib = np.exp(1j * A.col_phase[support]) * values[support, None]
        np.add.at(y, A.col_rows[support].ravel(), contrib.ravel())
    return y


def save_matrix(A: EncodingMatrix, path: str | Path) -> tuple[Path, Path]:
    """Write ``<path>.json`` (header and row metadata) and ``<path>.csv`` (row, col, phase)."""
    path = Path(path)
    header = {
        "n": A.n,
        "m": A.m,
        "c": A.c,
        "k": A.plan.k,
        "kind": A.plan.kind,
        "growth": A.plan.growth,
        "first_stage_groups": A.plan.first_stage_groups,
        "group_counts": A.plan.group_counts,
        "assignments": [a.tolist() for a in A.plan.assignments],
        "stage_offsets": A.stage_offsets,
        "n_buckets": A.n_buckets,
        "degree": A.degree,
        "row_stage": A.row_stage.tolist(),
        "row_group": A.row_group.tolist(),
        "row_kind": A.row_kind.tolist(),
    }
    head = path.with_suffix(".json")
    body = path.with_suffix(".csv")
    head.write_text(json.dumps(header))
    with body.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["row", "col", "phase"])
        for j in range(A.n):
            for r, ph in zip(A.col_rows[j], A.col_phase[j]):
                w.writerow([int(r), j, repr(float(ph))])
    return head, body


def load_matrix(path: str | Path) -> EncodingMatrix:
    path = Path(path)
    h = json.loads(path.with_suffix(".json").read_text())
    plan = GroupPlan(
        h["n"], h["k"], h["kind"], h["growth"], h["first_stage_groups"],
        [np.asarray(a, dtype=np.int64) for a in h["assignments"]], list(h["group_counts"]),
    )
    width = h["c"] * (len(plan.assignments) + h["degree"])
    col_rows = np.empty((h["n"], width), dtype=np.int64)
    col_phase = np.empty((h["n"], width))
    fill = np.zeros(h["n"], dtype=np.int64)
    with path.with_suffix(".csv").open() as fh:
        for rec in csv.DictReader(fh):
            j = int(rec["col"])
            col_rows[j, fill[j]] = int(rec["row"])
            col_phase[j, fill[j]] = float(rec["phase"])
            fill[j] += 1
    return EncodingMatrix(
        plan, h["c"],
        np.asarray(h["row_stage"], dtype=np.int64),
        np.asarray(h["row_group"], dtype=np.int64),
        np.asarray(h["row_kind"], dtype=np.int8),
        col_rows, col_phase, list(h["stage_offsets"]), h["n_buckets"], h["degree"],
    )
