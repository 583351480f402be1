"""Bit-meters grow like sqrt(nk) when inputs sit next to the outputs they measure.

Runs a small sweep with k = sqrt(n) for both layouts, fits log(median
bit-meters) against log(nk), and checks every point against the friction
lower bound. With inputs packed at the centre, signals travel Theta(sqrt n)
on average, and the slope is visibly steeper.

    BITMETER_THREADS=4 python demos/scaling_sweep.py
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from bitmeter.harness import ExperimentConfig, compare_bound, fit_scaling, sweep

GRID = (1024, 2048, 4096, 8192)
TRIALS = 20


def main() -> None:
    out = Path(tempfile.mkdtemp())
    for layout in ("distributed", "centralized"):
        for alg in ("CA", "SA"):
            cfg = ExperimentConfig(algorithm=alg, layout=layout, n_values=GRID, trials=TRIALS)
            path = sweep(cfg, out / f"{alg}_{layout}.csv")
            fit = fit_scaling(path)
            report = compare_bound(path)
            print(f"{alg} {layout:12} slope vs nk {fit.slope:.3f} (r2 {fit.r2:.3f}); "
                  f"bound violations {len(report.violations)}, largest measured/bound ratio {report.max_ratio:.0f}")
    print(f"\nCSV files in {out}")


if __name__ == "__main__":
    main()
