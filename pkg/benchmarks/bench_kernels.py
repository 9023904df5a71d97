"""Time the compiled kernels against their pure-Python twins.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one row per (kernel, size) with the best-of-N time for each backend
and the speedup. Both backends are also checked to return identical results.
"""
import argparse
import sys
import timeit

import numpy as np

from cmdse import kernels
from cmdse.matching import tie_break_keys


def lsa_cases(rng):
    for rows, cols in ((10, 3), (24, 8), (100, 30), (300, 100)):
        p = rng.uniform(size=(rows, cols))
        yield f"lsa_lex {rows}x{cols}", (p, tie_break_keys(rows, cols)), kernels.lsa_lex


def greedy_cases(rng):
    for n_det, n_gt in ((100, 20), (2000, 300), (10000, 1000)):
        images = 20
        gt_img = rng.integers(0, images, n_gt)
        gt = rng.uniform(0.1, 0.9, size=(n_gt, 2, 4))
        src = rng.integers(0, n_gt, n_det)
        det = gt[src] + rng.normal(scale=0.03, size=(n_det, 2, 4))
        args = (gt_img[src], det[:, 0], det[:, 1], gt_img, gt[:, 0], gt[:, 1], 0.5)
        yield f"greedy_match {n_det} dets", args, kernels.greedy_match


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    impls = kernels.available()
    if "compiled" not in impls:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first", file=sys.stderr)
        return 2
    rng = np.random.default_rng(0)
    print(f"{'case':<24}{'python ms':>12}{'compiled ms':>14}{'speedup':>10}")
    for cases in (lsa_cases(rng), greedy_cases(rng)):
        for label, call_args, fn in cases:
            outs, times = {}, {}
            for name in ("python", "compiled"):
                impl = impls[name]
                outs[name] = fn(*call_args, impl=impl)
                times[name] = min(timeit.repeat(lambda: fn(*call_args, impl=impl), number=1, repeat=args.repeat))
            if not np.array_equal(outs["python"], outs["compiled"]):
                print(f"{label}: backends disagree", file=sys.stderr)
                return 2
            py, c = times["python"] * 1e3, times["compiled"] * 1e3
            print(f"{label:<24}{py:>12.3f}{c:>14.3f}{py / c:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
