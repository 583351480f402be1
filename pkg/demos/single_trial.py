"""Follow one signal through both decoders and both layouts.

A k-sparse signal of length n is measured by the staged phase matrix, then
decoded by the chain and shotgun decoders. Every transmission is metered in
bit-meters on the circuit layout; the printout shows where the energy goes.

    python demos/single_trial.py [n] [seed]
"""

from __future__ import annotations

import sys

from bitmeter.harness import TrialPoint, run_trial


def main(n: int = 4096, seed: int = 1) -> None:
    k = round(n**0.5)
    print(f"n = {n}, k = {k}, seed = {seed}\n")
    print(f"{'decoder':8} {'layout':12} {'m':>5} {'bit-meters':>12}  resolved per stage")
    for layout in ("distributed", "centralized"):
        for alg in ("CA", "SA"):
            rec, res = run_trial(TrialPoint(n, k, alg, layout), seed, trace=True)
            resolved = " ".join(f"{s}:{v}" for s, v in sorted(rec.resolved_per_stage.items()))
            flag = "  (block error)" if rec.block_error else ""
            print(f"{alg:8} {layout:12} {rec.m:5d} {rec.bit_meters_total:12.0f}  {resolved}{flag}")

    # the last stage is the clearing stage; it gathers at the centre of the chip
    rec, res = run_trial(TrialPoint(n, k), seed, trace=True)
    gathers = [e for e in res.trace if e["event"] == "gather"]
    delivers = [e for e in res.trace if e["event"] == "deliver"]
    forwards = [e for e in res.trace if e["event"] == "forward"]
    print("\nchain decoder, distributed layout, event totals:")
    for name, events in (("gather", gathers), ("forward", forwards), ("deliver", delivers)):
        print(f"  {name:8} {len(events):5d} events  {sum(e['bit_meters'] for e in events):10.0f} bit-meters")


if __name__ == "__main__":
    args = [int(a) for a in sys.argv[1:3]]
    main(*args)
