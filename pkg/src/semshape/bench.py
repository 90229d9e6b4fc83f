"""Kernel micro-benchmark: numba loops against the pure-numpy fallback.

Run as ``python -m semshape.bench``. Times the nearest-neighbor and
farthest-point kernels on identical seeded inputs for every available
implementation and cross-checks that the outputs agree exactly.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np

from .backend import IMPLEMENTATIONS, NUMBA_AVAILABLE


def _time_best(fn, args, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _check_equal(name: str, ref, out) -> str:
    for r, o in zip(ref, out):
        r = np.asarray(r)
        o = np.asarray(o)
        if r.shape != o.shape or not np.array_equal(r, o):
            return f"MISMATCH in {name}"
    return "ok"


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="semshape.bench",
        description="Time backend kernels across implementations",
    )
    parser.add_argument("--cloud", type=int, default=2048,
                        help="observation cloud size (default 2048)")
    parser.add_argument("--model", type=int, default=1024,
                        help="model cloud size (default 1024)")
    parser.add_argument("--fps", type=int, default=96,
                        help="farthest points to draw (default 96)")
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args(argv)

    rng = np.random.Generator(np.random.PCG64(0))
    cloud = rng.uniform(-0.5, 0.5, (args.cloud, 3))
    model = rng.uniform(-0.5, 0.5, (args.model, 3))

    cases = [
        ("nn_one_way", (cloud, model), f"({args.cloud}x{args.model})"),
        ("nn_both_ways", (cloud, model), f"({args.cloud}x{args.model})"),
        ("fps", (cloud, args.fps, 0), f"({args.cloud}->{args.fps})"),
    ]
    impl_names = sorted(IMPLEMENTATIONS)
    if not NUMBA_AVAILABLE:
        print("note: numba not importable, benchmarking numpy only")

    print(f"{'kernel':<30}" + "".join(f"{n:>12}" for n in impl_names) + f"{'check':>10}")
    for kernel, kargs, shape in cases:
        reference = IMPLEMENTATIONS["numpy"][kernel](*kargs)
        ref = reference if isinstance(reference, tuple) else (reference,)
        row = f"{kernel + ' ' + shape:<30}"
        status = "ok"
        for name in impl_names:
            fn = IMPLEMENTATIONS[name][kernel]
            out = fn(*kargs)  # warm any JIT path before timing
            check = _check_equal(kernel, ref, out if isinstance(out, tuple) else (out,))
            if check != "ok":
                status = check
            row += f"{_time_best(fn, kargs, args.repeats) * 1e3:>10.2f}ms"
        print(row + f"{status:>10}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
