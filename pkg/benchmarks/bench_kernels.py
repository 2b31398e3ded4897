"""Compare the compiled SU(2) step-product kernel with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--shots N] [--steps K]``.
Prints the agreement between backends and the median wall time of each.
"""
from __future__ import annotations

import argparse
import statistics
import sys
import time

import numpy as np

from gbsense import _su2_py, kernels


def _time(fn, args, repeats):
    samples = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--shots", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    ax = rng.normal(0, 0.05, args.steps)
    ay = rng.normal(0, 0.05, args.steps)
    az = np.ascontiguousarray(rng.normal(0, 0.05, (args.shots, args.steps)))
    ref = _su2_py.su2_chain(ax, ay, az)
    print(f"shots={args.shots} steps={args.steps} active backend={kernels.BACKEND}")
    t_py = _time(_su2_py.su2_chain, (ax, ay, az), args.repeats)
    print(f"numpy   {t_py * 1e3:9.2f} ms")
    if kernels.BACKEND == "python":
        print("compiled kernel not built; nothing to compare")
        return 0
    out = kernels.su2_chain(ax, ay, az)
    err = float(np.max(np.abs(out - ref)))
    t_c = _time(kernels.su2_chain, (ax, ay, az), args.repeats)
    print(f"cython  {t_c * 1e3:9.2f} ms  speedup {t_py / t_c:5.1f}x  max |diff| {err:.2e}")
    return 0 if err < 1e-12 else 1


if __name__ == "__main__":
    sys.exit(main())
