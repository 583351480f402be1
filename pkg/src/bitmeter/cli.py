"""Command-line entry point: ``bitmeter <subcommand>``.

Sweeps run on ``$BITMETER_THREADS`` worker processes (default 1).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict, fields
from pathlib import Path

from .bounds import BoundDomainError, BoundParams, lower_bound_theorem1, scaling_lower_bound
from .circuit import layout_centralized, layout_distributed
from .encoder import build_matrix, plan_ca_groups, plan_sa_groups
from .harness import (
    THREADS_ENV,
    ExperimentConfig,
    TrialPoint,
    compare_bound,
    fit_scaling,
    load_config,
    run_trial,
    sweep,
    with_overrides,
)
from .stencil import DEFAULT_ETA, build_stencil, nld_fraction, nld_lower_bound, scan_origins

_DEFAULTS = ExperimentConfig()


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _config(args) -> ExperimentConfig:
    overrides = {"base_seed": args.seed}
    if args.config:
        return load_config(args.config, **overrides)
    return with_overrides(_DEFAULTS, **overrides)


def _point(args, cfg: ExperimentConfig) -> TrialPoint:
    n = args.n if args.n is not None else cfg.n_values[0]
    k = args.k if args.k is not None else cfg.sparsity(n)
    base = {f.name: getattr(cfg, f.name) for f in fields(TrialPoint) if hasattr(cfg, f.name)}
    base.update(n=n, k=k)
    if args.algorithm:
        base["algorithm"] = args.algorithm
    if args.layout:
        base["layout"] = args.layout
    return TrialPoint(**base)


def cmd_simulate(args) -> int:
    cfg = _config(args)
    point = _point(args, cfg)
    record, result = run_trial(point, cfg.base_seed, trace=True)
    if args.trace:
        result.write_trace(args.trace)
    _emit(record.to_json(), args.out)
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    path = sweep(cfg, args.out)
    print(f"wrote {path}")
    return 0


def cmd_bound(args) -> int:
    p = args.p if args.p is not None else args.k / args.n
    params = BoundParams(args.n, args.m, p, args.Q, args.eps, args.rho, args.C0)
    doc = {**asdict(params), "R": params.R}
    try:
        b = lower_bound_theorem1(params)
        doc.update(theorem1_bound=b.value, vacuous=b.vacuous, reason=b.reason)
    except BoundDomainError as exc:
        doc.update(theorem1_bound=None, error=str(exc))
    doc["corollary_benchmark"] = scaling_lower_bound(args.n, p * args.n, args.m, args.eps)
    _emit(json.dumps(doc), args.out)
    return 0 if "error" not in doc else 2


def cmd_stencil(args) -> int:
    cfg = _config(args)
    point = _point(args, cfg)
    if point.algorithm == "CA":
        plan = plan_ca_groups(point.n, point.k, point.C, point.phi)
    else:
        plan = plan_sa_groups(point.n, point.k, point.C, point.phi, seed=cfg.base_seed, mix=point.sa_mix)
    A = build_matrix(plan, point.c, None, cfg.base_seed)
    layout = (layout_distributed if point.layout == "distributed" else layout_centralized)(A, point.rho)
    if args.origin:
        origin = tuple(int(v) for v in args.origin.split(","))
        part = build_stencil(layout, args.lam, args.eta, origin)
    else:
        origin, part = scan_origins(layout, args.lam, args.eta)
    out = args.out or "stencil.csv"
    part.dump_csv(out)
    R = A.m / A.n
    print(json.dumps({
        "n": A.n, "m": A.m, "lambda": args.lam, "eta": args.eta, "origin": list(origin), "L": part.L,
        "n_inside": part.n_inside, "coverage_target": A.n * (1 - 2 * args.eta) ** 2,
        "nld_fraction": nld_fraction(part), "nld_lower_bound": nld_lower_bound(R), "csv": out,
    }))
    return 0


def cmd_fit(args) -> int:
    fit = fit_scaling(args.csv, args.x, args.algorithm, args.layout)
    _emit(json.dumps({"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2, "points": int(fit.x.size)}), args.out)
    return 0


def cmd_compare(args) -> int:
    report = compare_bound(args.csv, args.Q, args.rho, args.algorithm, args.layout)
    lines = ["n,k,m,trials,median_bit_meters,error_rate,eps,c0,theorem1_bound,ratio,status"]
    for r in report.rows:
        lines.append(",".join(str(v) for v in (
            r.n, r.k, r.m, r.trials, r.median_bit_meters, r.error_rate, r.eps, r.c0, r.bound, r.ratio, r.status)))
    lines.append(f"# max ratio {report.max_ratio}; violations {len(report.violations)}")
    _emit("\n".join(lines), args.out)
    return 1 if report.violations else 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"base seed (config default {_DEFAULTS.base_seed})")
    common.add_argument("--config", default=None, help="TOML experiment config")
    common.add_argument("--out", default=None, help="output path (stdout when omitted)")

    point = argparse.ArgumentParser(add_help=False)
    point.add_argument("--n", type=int, default=None, help=f"signal length (default: first of {list(_DEFAULTS.n_values)})")
    point.add_argument("--k", type=int, default=None, help=f"sparsity (default ceil(n^(1-beta)), beta={_DEFAULTS.beta})")
    point.add_argument("--algorithm", choices=["CA", "SA"], default=None, help=f"decoder (default {_DEFAULTS.algorithm})")
    point.add_argument("--layout", choices=["distributed", "centralized"], default=None, help=f"node placement (default {_DEFAULTS.layout})")

    sel = argparse.ArgumentParser(add_help=False)
    sel.add_argument("csv", help="sweep CSV")
    sel.add_argument("--algorithm", choices=["CA", "SA"], default=None, help="restrict to one decoder")
    sel.add_argument("--layout", choices=["distributed", "centralized"], default=None, help="restrict to one layout")

    parser = argparse.ArgumentParser(
        prog="bitmeter", formatter_class=fmt,
        description="Bit-meter energy simulator for multi-stage sparse-recovery decoders.",
        epilog=f"Set {THREADS_ENV} to the number of worker processes used by sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common, point], formatter_class=fmt, help="run one trial, print its record as JSON")
    p.add_argument("--trace", default=None, help="write the decoder event trace (JSON lines) here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], formatter_class=fmt, help="run a config grid, write CSV")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bound", parents=[common], formatter_class=fmt, help="evaluate the friction lower bound")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=float, default=None, help="sparsity; sets p = k/n")
    p.add_argument("--p", type=float, default=None, help="nonzero probability")
    p.add_argument("--Q", type=int, default=_DEFAULTS.Q, help="precision bits")
    p.add_argument("--eps", type=float, default=0.01, help="block-error probability")
    p.add_argument("--rho", type=float, default=_DEFAULTS.rho, help="lattice packing radius")
    p.add_argument("--C0", type=float, default=1.0, help="signal-energy constant in (0, 1]")
    p.set_defaults(func=cmd_bound)

    p = sub.add_parser("stencil", parents=[common, point], formatter_class=fmt, help="stencil-partition a layout, write cell CSV")
    p.add_argument("--lam", type=int, default=64, help="sub-lattice index (perfect square)")
    p.add_argument("--eta", type=float, default=DEFAULT_ETA, help="inner-part margin fraction")
    p.add_argument("--origin", default=None, help="x,y origin; scans all origins when omitted")
    p.set_defaults(func=cmd_stencil)

    p = sub.add_parser("fit", parents=[common, sel], formatter_class=fmt, help="log-log slope of median bit-meters")
    p.add_argument("--x", choices=["nk", "n"], default="nk", help="abscissa")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("compare", parents=[common, sel], formatter_class=fmt, help="measured bit-meters vs the lower bound")
    p.add_argument("--Q", type=int, default=_DEFAULTS.Q, help="precision bits")
    p.add_argument("--rho", type=float, default=_DEFAULTS.rho, help="lattice packing radius")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "bound" and (args.p is None) == (args.k is None):
        print("bound: give exactly one of --k or --p", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"{args.command}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
