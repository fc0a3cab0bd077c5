#!/usr/bin/env python3
"""Benchmark the compiled popcount core against the NumPy fallback.

The workload mirrors the nearest-neighbour scan: M query images against an
N-row bit-packed training matrix (default geometry matches a 482x60 image
corpus).  Results are checked for equality before timing is reported.

Usage:
    python3 benchmarks/bench_kernels.py [--rows N] [--bits B] [--queries M]
"""

import argparse
import time

import numpy as np

from imago.kernels import _numpy as numpy_impl
from imago.kernels import pack_rows

try:
    from imago.kernels import _core as compiled_impl
except ImportError:
    compiled_impl = None


def bench(impl, mat, queries, repeats):
    best = float("inf")
    result = None
    for _ in range(repeats):
        started = time.perf_counter()
        result = impl.hamming_scan_batch(mat, queries)
        best = min(best, time.perf_counter() - started)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--rows", type=int, default=20000, help="training matrix rows")
    parser.add_argument("--bits", type=int, default=482 * 60, help="bits per image")
    parser.add_argument("--queries", type=int, default=32, help="query images")
    parser.add_argument("--density", type=float, default=0.02, help="fraction of set bits")
    parser.add_argument("--repeats", type=int, default=3, help="timing repeats (best-of)")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    mat = pack_rows((rng.random((args.rows, args.bits)) < args.density).astype(np.uint8))
    queries = pack_rows((rng.random((args.queries, args.bits)) < args.density).astype(np.uint8))
    pair_count = args.rows * args.queries

    print(f"matrix: {args.rows} x {args.bits} bits ({mat.nbytes / 1e6:.1f} MB packed), "
          f"{args.queries} queries, best of {args.repeats}")

    numpy_time, numpy_result = bench(numpy_impl, mat, queries, args.repeats)
    print(f"numpy fallback : {numpy_time * 1e3:9.2f} ms "
          f"({pair_count / numpy_time / 1e6:8.1f} M distances/s)")

    if compiled_impl is None:
        print("compiled core  : not built (pip install -e . --no-build-isolation)")
        return

    compiled_time, compiled_result = bench(compiled_impl, mat, queries, args.repeats)
    if not np.array_equal(numpy_result, compiled_result):
        raise SystemExit("BUG: backends disagree")
    print(f"compiled core  : {compiled_time * 1e3:9.2f} ms "
          f"({pair_count / compiled_time / 1e6:8.1f} M distances/s)")
    print(f"speedup        : {numpy_time / compiled_time:9.2f}x (results identical)")


if __name__ == "__main__":
    main()
