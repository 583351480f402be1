"""Cut a decoder layout into square sub-circuits and classify them.

A cell that holds few input-nodes relative to its output-nodes cannot decode
its outputs on its own, so information has to cross its boundary. The
friction bound counts these cells; here they are counted on a real layout.

    python demos/stencil_partition.py
"""

from __future__ import annotations

from bitmeter.circuit import layout_distributed
from bitmeter.encoder import build_matrix, plan_ca_groups
from bitmeter.stencil import nld_fraction, nld_lower_bound, nld_threshold, scan_origins


def main(n: int = 1024, k: int = 32, eta: float = 0.25) -> None:
    A = build_matrix(plan_ca_groups(n, k))
    layout = layout_distributed(A)
    R = A.m / A.n
    print(f"n = {n}, m = {A.m}, rate R = {R:.3f}, eta = {eta}")
    print(f"guaranteed non-locally-decodable fraction: {nld_lower_bound(R):.3f}\n")
    for lam in (16, 64, 256):
        origin, part = scan_origins(layout, lam, eta)
        print(f"lambda {lam:3d}: origin {origin}, {part.L} cells, threshold 2m/L = {nld_threshold(A.m, part.L):.2f}, "
              f"outputs inside inner squares {part.n_inside} of {n}, "
              f"non-locally-decodable fraction {nld_fraction(part):.3f}")


if __name__ == "__main__":
    main()
