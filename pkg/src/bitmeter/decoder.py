"""Multi-stage peeling decoders with bit-meter accounting.

Both decoders share the same skeleton: at every local stage each group hub
gathers its measurements, looks for a lone nonzero with the ratio test,
ships recovered values to their output-nodes, and subtracts them from every
other measurement that covers the same column. A final clearing stage peels
whatever is left through the sparse bucket graph.

The chain decoder additionally forwards the residual measurements of every
unresolved group to the hub of the enclosing group at the next stage, and
uses the accumulated rows to resolve small collisions jointly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .circuit import BitMeterLedger, CircuitLayout
from .encoder import EncodingMatrix, GroupPlan
from .signals import ErrorSpec, quantize

__all__ = [
    "DecodeResult",
    "DecodeState",
    "Multi",
    "Singleton",
    "StageStats",
    "Zero",
    "ca_decode",
    "clearing_stage",
    "detect_singleton",
    "fit_support",
    "sa_decode",
]

ZERO_RTOL = 1e-9
MATCH_RTOL = 1e-7
# largest collision a single leaf group is searched for
MAX_JOINT_SUPPORT = 4


class _Outcome:
    pass


class _ZeroType(_Outcome):
    def __repr__(self):
        return "Zero"


class _MultiType(_Outcome):
    def __repr__(self):
        return "Multi"


Zero = _ZeroType()
Multi = _MultiType()


@dataclass(frozen=True)
class Singleton(_Outcome):
    index: int
    value: float


def _row_modulus_max(res_re: np.ndarray, res_im: np.ndarray) -> np.ndarray:
    return np.sqrt(res_re**2 + res_im**2).max(axis=-1)


def detect_singleton(
    y,
    columns,
    phases=None,
    scale: float | None = None,
    zero_rtol: float = ZERO_RTOL,
    match_rtol: float = MATCH_RTOL,
):
    """Classify one group's measurements as Zero, Singleton(j, b) or Multi.

    ``phases`` is a ``(c, s)`` array whose row 0 holds identification phases.
    ``columns`` may instead be a list of ``(index, phases)`` pairs.
    ``scale`` sets the zero threshold (defaults to ``max|y|``).
    """
    y = np.asarray(y, dtype=complex)
    if phases is None:
        pairs = list(columns)
        columns = np.array([p[0] for p in pairs], dtype=np.int64)
        phases = np.array([p[1] for p in pairs], dtype=float).T.reshape(y.size, len(pairs))
    columns = np.asarray(columns)
    phases = np.asarray(phases, dtype=float)

    ymax = float(np.abs(y).max()) if y.size else 0.0
    if scale is None:
        scale = ymax
    if ymax <= zero_rtol * scale or ymax == 0.0:
        return Zero
    tol = match_rtol * ymax

    # ratio test on the identification row narrows the candidates
    y0 = y[0]
    r0 = abs(y0)
    if r0 > tol:
        folded = np.angle(y0) % np.pi
        width = np.arcsin(min(1.0, tol / r0)) + 1e-15
        gap = (folded - phases[0] + np.pi / 2) % np.pi - np.pi / 2
        cand = np.flatnonzero(np.abs(gap) <= width)
    else:
        cand = np.arange(columns.size)
    if cand.size == 0:
        return Multi

    a = np.exp(1j * phases[:, cand])
    b = np.real(np.sum(np.conj(a) * y[:, None], axis=0)) / y.size
    res = np.abs(y[:, None] - a * b).max(axis=0)
    hit = np.flatnonzero(res <= tol)
    if hit.size != 1:
        return Multi
    return Singleton(int(columns[cand[hit[0]]]), float(b[hit[0]]))


def _pair_solve(ar, yr):
    """Least squares for every column pair; returns (pairs, coeffs, residual rows)."""
    g = ar.shape[1]
    p, q = np.triu_indices(g, 1)
    if p.size == 0:
        return p, q, np.empty((0, 2)), np.empty((0, ar.shape[0]))
    norms = np.einsum("ij,ij->j", ar, ar)
    cross = ar.T @ ar
    rhs = ar.T @ yr
    gpp, gqq, gpq = norms[p], norms[q], cross[p, q]
    det = gpp * gqq - gpq**2
    det = np.where(np.abs(det) < 1e-300, np.nan, det)
    b1 = (gqq * rhs[p] - gpq * rhs[q]) / det
    b2 = (gpp * rhs[q] - gpq * rhs[p]) / det
    res = yr[None, :] - ar[:, p].T * b1[:, None] - ar[:, q].T * b2[:, None]
    return p, q, np.stack([b1, b2], axis=1), res


def fit_support(
    M: np.ndarray, y: np.ndarray, size: int, tol: float, first_only: bool = False
) -> list[tuple[tuple[int, ...], np.ndarray]]:
    """Supports of ``size`` columns of ``M`` that explain ``y`` with real coefficients.

    Returns up to two fits ``(column positions, values)``, which is enough to
    decide uniqueness; ``first_only`` stops at the first exact fit.
    Supports of three or more columns are searched exhaustively by fixing
    one column at a time and projecting it out.
    """
    M = np.asarray(M, dtype=complex)
    y = np.asarray(y, dtype=complex)
    R, g = M.shape
    ar = np.vstack([M.real, M.imag])
    yr = np.concatenate([y.real, y.imag])
    limit = 1 if first_only else 2
    if size < 1 or size > g:
        return []
    found = _fit_real(ar, yr, size, tol, R, limit)
    return [(tuple(int(p) for p in pos), np.asarray(v)) for pos, v in found]


def _fit_real(ar, yr, size, tol, R, limit):
    g = ar.shape[1]

    def err(res):
        return np.nan_to_num(_row_modulus_max(res[..., :R], res[..., R:]), nan=np.inf)

    if size == 1:
        norms = np.einsum("ij,ij->j", ar, ar)
        b = (ar.T @ yr) / norms
        res = yr[None, :] - ar.T * b[:, None]
        return [((j,), np.array([b[j]])) for j in np.flatnonzero(err(res) <= tol)[:limit]]
    if size == 2:
        p, q, coef, res = _pair_solve(ar, yr)
        return [((p[t], q[t]), coef[t]) for t in np.flatnonzero(err(res) <= tol)[:limit]]
    # larger supports: fix the first column, project it out and recurse
    found = []
    for j in range(g - size + 1):
        a = ar[:, j]
        na = a @ a
        if na <= 0:
            continue
        proj_y = yr - a * (a @ yr) / na
        rest = ar[:, j + 1:]
        proj = rest - np.outer(a, a @ rest) / na
        for pos, vals in _fit_real(proj, proj_y, size - 1, tol, R, limit - len(found)):
            cols = [j] + [int(p) + j + 1 for p in pos]
            b0 = a @ (yr - ar[:, cols[1:]] @ vals) / na
            found.append((tuple(cols), np.r_[b0, vals]))
            if len(found) >= limit:
                return found
    return found


@dataclass
class StageStats:
    stage: int
    groups_processed: int = 0
    singletons: int = 0
    resolved: int = 0
    forwards: int = 0


@dataclass
class DecodeState:
    """Mutable decoder state: residual measurements and recovered entries."""

    A: EncodingMatrix
    residual: np.ndarray
    estimate: np.ndarray
    resolved_stage: np.ndarray
    scale: float
    spec: ErrorSpec
    bits_per_value: int
    ledger: BitMeterLedger
    stats: dict[int, StageStats] = field(default_factory=dict)
    trace: list[dict] | None = None
    fit_cache: dict = field(default_factory=dict)

    @classmethod
    def start(cls, y, A: EncodingMatrix, layout: CircuitLayout, spec: ErrorSpec, bits_per_value: int | None, trace: bool):
        y = np.asarray(y, dtype=complex)
        if y.shape != (A.m,):
            raise ValueError(f"measurement vector has shape {y.shape}, expected ({A.m},)")
        if layout.n != A.n or layout.m != A.m:
            raise ValueError("layout does not match the encoding matrix")
        bits = spec.precision_bits + 8 if bits_per_value is None else int(bits_per_value)
        scale = float(np.abs(y).max()) if y.size else 0.0
        return cls(
            A, y.copy(), np.zeros(A.n), np.zeros(A.n, dtype=np.int64), scale, spec, bits,
            BitMeterLedger(layout), trace=[] if trace else None,
        )

    @property
    def zero_tol(self) -> float:
        return ZERO_RTOL * self.scale

    def nonzero_rows(self, rows) -> np.ndarray:
        rows = np.asarray(rows)
        return rows[np.abs(self.residual[rows]) > self.zero_tol]

    def stage_stats(self, stage: int) -> StageStats:
        return self.stats.setdefault(stage, StageStats(stage))

    def accept(self, cols, values, stage: int, hub: int | np.ndarray) -> None:
        """Record recovered entries, meter delivery and subtract their contribution."""
        cols = np.atleast_1d(np.asarray(cols, dtype=np.int64))
        values = np.atleast_1d(np.asarray(values, dtype=float))
        if cols.size == 0:
            return
        self.estimate[cols] = quantize(values, self.spec.precision_bits)
        self.resolved_stage[cols] = stage
        A = self.A
        np.subtract.at(
            self.residual, A.col_rows[cols].ravel(),
            (np.exp(1j * A.col_phase[cols]) * values[:, None]).ravel(),
        )
        hubs = np.broadcast_to(np.asarray(hub), cols.shape)
        cost = self.ledger.record_many(hubs, cols, self.bits_per_value, stage)
        self.stage_stats(stage).resolved += int(cols.size)
        if self.trace is not None:
            per = self.ledger.layout.dist(hubs, cols) * self.bits_per_value
            for j, h, v in zip(cols, hubs, per):
                self.trace.append({"stage": stage, "event": "deliver", "src": int(h), "dst": int(j), "bits": self.bits_per_value, "bit_meters": float(v)})

    def gather(self, rows, hub: int, stage: int) -> None:
        """Input-nodes send their nonzero residual measurements to ``hub``."""
        rows = self.nonzero_rows(rows)
        if rows.size == 0:
            return
        src = self.A.n + rows
        src = src[src != hub]
        cost = self.ledger.record_many(src, np.full(src.shape, hub), self.bits_per_value, stage)
        if self.trace is not None and src.size:
            self.trace.append({"stage": stage, "event": "gather", "src": src.tolist(), "dst": int(hub), "bits": int(src.size * self.bits_per_value), "bit_meters": cost})

    def forward(self, src_hub: int, dst_hub: int, n_values: int, stage: int) -> None:
        if n_values <= 0:
            return
        bits = n_values * self.bits_per_value
        cost = self.ledger.record(src_hub, dst_hub, bits, stage)
        self.stage_stats(stage).forwards += 1
        if self.trace is not None:
            self.trace.append({"stage": stage, "event": "forward", "src": int(src_hub), "dst": int(dst_hub), "bits": bits, "bit_meters": cost})

    def note(self, stage: int, group: int, outcome) -> None:
        if self.trace is not None:
            self.trace.append({"stage": stage, "group": int(group), "event": "detect", "outcome": repr(outcome)})


@dataclass
class DecodeResult:
    estimate: np.ndarray
    unresolved: np.ndarray
    ledger: BitMeterLedger
    stage_stats: list[StageStats]
    resolved_stage: np.ndarray
    trace: list[dict] | None = None

    @property
    def resolved_per_stage(self) -> dict[int, int]:
        return {s.stage: s.resolved for s in self.stage_stats}

    def write_trace(self, path: str | Path) -> Path:
        path = Path(path)
        with path.open("w") as fh:
            for event in self.trace or []:
                fh.write(json.dumps(event) + "\n")
        return path


def _group_phases(A: EncodingMatrix, stage: int, cols: np.ndarray) -> np.ndarray:
    c = A.c
    return A.col_phase[cols, (stage - 1) * c: stage * c].T


def _group_residuals(state: DecodeState, stage: int) -> np.ndarray:
    A = state.A
    lo, hi = A.stage_offsets[stage - 1], A.stage_offsets[stage]
    return state.residual[lo:hi].reshape(-1, A.c)


def _singleton_pass(state: DecodeState, stage: int) -> np.ndarray:
    """Ratio-test every nonzero group of ``stage``; returns the groups left nonzero."""
    A, plan = state.A, state.A.plan
    layout = state.ledger.layout
    stats = state.stage_stats(stage)
    Y = _group_residuals(state, stage)
    active = np.flatnonzero(np.abs(Y).max(axis=1) > state.zero_tol)
    members = plan.members(stage)
    found_cols, found_vals, found_hubs = [], [], []
    for g in active:
        hub = layout.hub_of[(stage, int(g))]
        state.gather(A.group_rows(stage, g), hub, stage)
        cols = members[g]
        out = detect_singleton(Y[g], cols, _group_phases(A, stage, cols), scale=state.scale)
        state.note(stage, g, out)
        stats.groups_processed += 1
        if isinstance(out, Singleton):
            stats.singletons += 1
            found_cols.append(out.index)
            found_vals.append(out.value)
            found_hubs.append(hub)
    # groups of one stage are disjoint, so batch subtraction is order-free
    state.accept(np.array(found_cols, dtype=np.int64), np.array(found_vals), stage, np.array(found_hubs, dtype=np.int64))
    Y = _group_residuals(state, stage)
    return np.flatnonzero(np.abs(Y).max(axis=1) > state.zero_tol)


def sa_decode(
    y, A: EncodingMatrix, plan: GroupPlan, layout: CircuitLayout, spec: ErrorSpec = ErrorSpec(),
    bits_per_value: int | None = None, trace: bool = False,
) -> DecodeResult:
    """Shotgun decoding: independent singleton passes per stage, no forwarding."""
    if plan is not A.plan:
        _check_plan(plan, A)
    state = DecodeState.start(y, A, layout, spec, bits_per_value, trace)
    for stage in range(1, plan.local_stages + 1):
        _singleton_pass(state, stage)
    return clearing_stage(state)


def _check_plan(plan: GroupPlan, A: EncodingMatrix) -> None:
    same = plan.n == A.n and len(plan.assignments) == len(A.plan.assignments) and all(
        np.array_equal(a, b) for a, b in zip(plan.assignments, A.plan.assignments)
    )
    if not same:
        raise ValueError("plan does not match the encoding matrix")


def _leaf_fit(state: DecodeState, leaf: int, rows: np.ndarray, max_size: int, known=None):
    """Smallest unique support inside ``leaf`` explaining ``rows``; None if absent or ambiguous.

    ``known`` is an optional ``(cols, values)`` fit of other leaves whose
    contribution is removed from ``rows`` first. An unresolved leaf's rows
    only change when the leaf itself is resolved, so results are cached.
    """
    key = (leaf, tuple(rows.tolist()), max_size)
    if known is not None:
        key += (tuple(known[0].tolist()), known[1].tobytes())
    if key not in state.fit_cache:
        y = state.residual[rows]
        if known is not None:
            y = y - state.A.entries(rows, known[0]) @ known[1]
        state.fit_cache[key] = _search_leaf(state, leaf, rows, max_size, y)
    return state.fit_cache[key]


def _search_leaf(state: DecodeState, leaf: int, rows: np.ndarray, max_size: int, y: np.ndarray):
    A = state.A
    cols = A.plan.members(1)[leaf]
    M = A.entries(rows, cols)
    tol = MATCH_RTOL * float(np.abs(y).max())
    groups = rows.size // A.c
    for size in range(1, min(max_size, cols.size) + 1):
        # with spare rows an exact fit is generically unique, so stop at the first
        fits = fit_support(M, y, size, tol, first_only=size > 2 and groups >= size)
        if len(fits) > 1:
            return None
        if fits:
            pos, vals = fits[0]
            return cols[list(pos)], np.asarray(vals, dtype=float)
    return None


def _ancestors(leaf: int, stage: int, phi: int) -> list[tuple[int, int]]:
    return [(s, leaf // phi ** (s - 1)) for s in range(2, stage + 1)]


def _clean_chain(leaf: int, others: set[int], stage: int, phi: int) -> list[tuple[int, int]]:
    """Ancestors of ``leaf`` (from the bottom) whose blocks hold no other unresolved leaf."""
    chain = []
    for s, g in _ancestors(leaf, stage, phi):
        width = phi ** (s - 1)
        if any(o // width == g for o in others):
            break
        chain.append((s, g))
    return chain


def _resolve_block(state: DecodeState, stage: int, leaves: list[int], hub: int) -> list[int]:
    """Resolve collisions inside one nested block; returns the leaves left unresolved.

    A support of size s is only searched when at least ``c*s`` rows that see
    nothing else are available, so larger collisions wait for later stages.
    Sequential pass: each leaf uses its own rows plus its clean ancestor rows.
    Coupled pass: the remaining leaves are fitted from their own rows and
    accepted together if the block's rows cover all unknowns and the fit
    explains every ancestor measurement.
    """
    A = state.A
    phi = A.plan.growth
    remaining = set(leaves)
    progress = True
    while remaining and progress:
        progress = False
        for leaf in sorted(remaining):
            chain = _clean_chain(leaf, remaining - {leaf}, stage, phi)
            if not chain:
                continue
            rows = np.concatenate([A.group_rows(1, leaf)] + [A.group_rows(s, g) for s, g in chain])
            fit = _leaf_fit(state, leaf, rows, min(MAX_JOINT_SUPPORT, 1 + len(chain)))
            if fit is not None:
                state.accept(fit[0], fit[1], stage, hub)
                remaining.discard(leaf)
                progress = True
    if len(remaining) < 2:
        return sorted(remaining)

    # candidates from own plus clean rows; a leaf's own c rows pin down about
    # 2(c-1) columns since the identification row barely separates
    # neighbouring columns. At most one leaf may lack such a fit: it is then
    # fitted from its own rows plus the ancestor rows, with the other fits removed.
    fits, loose = [], []
    for leaf in sorted(remaining):
        chain = _clean_chain(leaf, remaining - {leaf}, stage, phi)
        rows = np.concatenate([A.group_rows(1, leaf)] + [A.group_rows(s, g) for s, g in chain])
        size_cap = min(MAX_JOINT_SUPPORT, max(1 + len(chain), 2 * (A.c - 1)))
        fit = _leaf_fit(state, leaf, rows, size_cap)
        if fit is None:
            loose.append(leaf)
        else:
            fits.append(fit)
    if len(loose) > 1:
        return sorted(remaining)
    anc = sorted({a for leaf in remaining for a in _ancestors(leaf, stage, phi)})
    cols = np.concatenate([f[0] for f in fits]) if fits else np.empty(0, dtype=np.int64)
    vals = np.concatenate([f[1] for f in fits]) if fits else np.empty(0)
    rows = np.concatenate([A.group_rows(s, g) for s, g in anc])
    if loose:
        # the loose leaf is the only unknown left in its own and the ancestor
        # rows, so it gets one unknown per row group it sees
        leaf = loose[0]
        own_and_anc = np.concatenate([A.group_rows(1, leaf), rows])
        fit = _leaf_fit(state, leaf, own_and_anc, min(MAX_JOINT_SUPPORT, 1 + len(anc)), (cols, vals))
        if fit is None:
            return sorted(remaining)
        cols, vals = np.concatenate([cols, fit[0]]), np.concatenate([vals, fit[1]])
    elif cols.size > len(remaining) + len(anc):
        return sorted(remaining)
    before = state.residual[rows]
    explained = A.entries(rows, cols) @ vals
    tol = MATCH_RTOL * max(float(np.abs(before).max()), state.scale * ZERO_RTOL)
    if np.abs(before - explained).max() > tol + state.zero_tol:
        return sorted(remaining)
    state.accept(cols, vals, stage, hub)
    return []


def ca_decode(
    y, A: EncodingMatrix, plan: GroupPlan, layout: CircuitLayout, spec: ErrorSpec = ErrorSpec(),
    bits_per_value: int | None = None, trace: bool = False,
) -> DecodeResult:
    """Chain decoding over the nested plan, then clearing."""
    if plan is not A.plan:
        _check_plan(plan, A)
    if plan.kind != "CA":
        raise ValueError("chain decoding needs a nested plan")
    state = DecodeState.start(y, A, layout, spec, bits_per_value, trace)
    c, phi = A.c, plan.growth
    S = plan.local_stages

    pending = [int(g) for g in _singleton_pass(state, 1)]
    # unresolved leaves ship their residual rows to the enclosing block hub
    if S >= 2:
        for g in pending:
            state.forward(layout.hub_of[(1, g)], layout.hub_of[(2, g // phi)], c, 1)

    for stage in range(2, S + 1):
        width = phi ** (stage - 1)
        blocks: dict[int, list[int]] = {}
        for leaf in pending:
            blocks.setdefault(leaf // width, []).append(leaf)
        stats = state.stage_stats(stage)
        still: list[int] = []
        for b, leaves in sorted(blocks.items()):
            hub = layout.hub_of[(stage, b)]
            state.gather(A.group_rows(stage, b), hub, stage)
            stats.groups_processed += 1
            left = _resolve_block(state, stage, leaves, hub)
            state.note(stage, b, "Solved" if not left else "Multi")
            still.extend(left)
            if left and stage < S:
                held = _held_rows(state, left, stage, phi)
                state.forward(hub, layout.hub_of[(stage + 1, b // phi)], held, stage)
        pending = sorted(still)

    return clearing_stage(state)


def _held_rows(state: DecodeState, leaves, stage: int, phi: int) -> int:
    A = state.A
    keys = {(1, leaf) for leaf in leaves}
    keys |= {a for leaf in leaves for a in _ancestors(leaf, stage, phi)}
    rows = np.concatenate([A.group_rows(s, g) for s, g in sorted(keys)])
    return int(state.nonzero_rows(rows).size)


def clearing_stage(state: DecodeState) -> DecodeResult:
    """Peel the clearing buckets until no bucket holds a lone nonzero."""
    A = state.A
    layout = state.ledger.layout
    stage = A.plan.clearing_stage
    stats = state.stage_stats(stage)
    hub = layout.hub_of[(stage, 0)]
    c, off = A.c, A.clearing_offset
    S = A.plan.local_stages

    Y = state.residual[off:].reshape(-1, c)
    active = np.flatnonzero(np.abs(Y).max(axis=1) > state.zero_tol)
    if active.size:
        state.gather(off + (c * active[:, None] + np.arange(c)).ravel(), hub, stage)
        # bucket -> (columns, edge slot) incidence, built only when needed
        bucket_of = (A.col_rows[:, S * c::c] - off) // c
        flat = bucket_of.ravel()
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(A.n_buckets + 1))
        queue = list(active)
        while queue:
            bkt = int(queue.pop(0))
            y_b = state.residual[off + c * bkt: off + c * bkt + c]
            if np.abs(y_b).max() <= state.zero_tol:
                continue
            idx = order[bounds[bkt]: bounds[bkt + 1]]
            cols, slot = idx // A.degree, idx % A.degree
            keep = state.resolved_stage[cols] == 0
            cols, slot = cols[keep], slot[keep]
            ph = np.stack([A.col_phase[cols, (S + slot) * c + t] for t in range(c)])
            stats.groups_processed += 1
            out = detect_singleton(y_b, cols, ph, scale=state.scale)
            state.note(stage, bkt, out)
            if isinstance(out, Singleton):
                stats.singletons += 1
                state.accept([out.index], [out.value], stage, hub)
                touched = np.unique(bucket_of[out.index])
                queue.extend(int(t) for t in touched if t != bkt)

    nz = np.abs(state.residual) > state.zero_tol
    unresolved = np.flatnonzero(nz[A.col_rows].all(axis=1) & (state.resolved_stage == 0)) if nz.any() else np.empty(0, dtype=np.int64)
    stages = [state.stage_stats(s) for s in range(1, A.plan.clearing_stage + 1)]
    return DecodeResult(state.estimate, unresolved, state.ledger, stages, state.resolved_stage, state.trace)
