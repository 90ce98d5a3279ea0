"""Compiled kernels against the pure-Python fallback.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]

Prints one row per kernel: best wall time of each backend and the speed-up.
The fallback is timed through the same public wrappers with ``pure=True``.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from regrowth.kernels import HAVE_KERNELS
from regrowth.kernels import grow_arrays, grow_heights, residual_path
from regrowth.laws import FromGrowthRule
from regrowth.models import AlphaTheta, Ford, PoissonDirichlet
from regrowth.residual import jump_law, lamperti_batch


def best_of(fn, repeat: int) -> float:
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return min(out)


def cases(quick: bool):
    scale = 10 if quick else 1
    n_tree = 20_000 // scale
    n_height = 2_000 // scale
    seeds = list(range(200 // scale))
    law = jump_law(FromGrowthRule(AlphaTheta(0.5, 0.5)))
    t_grid = np.linspace(0.0, 2.0, 9)
    yield "grow_arrays Ford(0.3)", n_tree, lambda pure: grow_arrays(Ford(0.3), n_tree, 1, pure=pure)
    yield "grow_arrays PD(0.5,0.25)", n_tree, \
        lambda pure: grow_arrays(PoissonDirichlet(0.5, 0.25), n_tree, 1, pure=pure)
    yield "grow_heights AT(0.5,0.5)", n_height, \
        lambda pure: grow_heights(AlphaTheta(0.5, 0.5), n_height, seeds, pure=pure)
    yield "residual_path AT(0.5,0.5)", n_tree, \
        lambda pure: [residual_path(AlphaTheta(0.5, 0.5), n_tree, s, pure=pure) for s in seeds[:20]]
    # paths stop at X < 1e-3; the truncated small jumps make each path long
    yield "lamperti_batch AT(0.5,0.5)", 300 // scale, \
        lambda pure: lamperti_batch(law, 0.5, t_grid, 300 // scale, seed=3, tail=1e-3, pure=pure)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="shrink every size by 10x")
    args = ap.parse_args(argv)
    if not HAVE_KERNELS:
        print("compiled extension not importable; only the fallback would run", file=sys.stderr)
        return 1
    print(f"{'kernel':32s} {'size':>8s} {'compiled s':>11s} {'fallback s':>11s} {'speed-up':>9s}")
    for name, size, fn in cases(args.quick):
        fast = best_of(lambda: fn(False), args.repeat)
        slow = best_of(lambda: fn(True), args.repeat)
        print(f"{name:32s} {size:8d} {fast:11.4f} {slow:11.4f} {slow / fast:9.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
