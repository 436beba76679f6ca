"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run:
    python benchmarks/bench_kernels.py [--quick]

Both implementations are importable side by side (the env flag
CALIBLAB_BACKEND only changes which one the package dispatches to), so
this compares them in one process.  Numba timings exclude the first
call, which compiles.
"""

import argparse
import time

import numpy as np

from caliblab import _kernels
from caliblab.environments import substream


def timeit(fn, *args, repeat=3):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_fwht(quick):
    n = 2**12 if quick else 2**16
    rows = 64
    rng = substream(1, 0)
    base = rng.standard_normal((rows, n))
    out = [("fwht", f"{rows}x{n}")]
    if _kernels.HAVE_NUMBA:
        _kernels._fwht_inplace_numba(base.copy())  # compile
        out.append(("numba", timeit(lambda: _kernels._fwht_inplace_numba(base.copy()))))
    out.append(("numpy", timeit(lambda: _kernels._fwht_inplace_numpy(base.copy()))))
    return out


def bench_first_return(quick):
    L = 1024
    reps = 2_000 if quick else 20_000
    rng = substream(2, 0)
    signs = np.where(rng.random((reps, L)) < 0.5, -1, 1).astype(np.int8)
    out = [("first_return", f"{reps}x{L}")]
    if _kernels.HAVE_NUMBA:
        _kernels._first_return_batch_numba(signs[:8])
        out.append(("numba", timeit(lambda: _kernels._first_return_batch_numba(signs))))
    out.append(("numpy", timeit(lambda: _kernels._first_return_batch_numpy(signs))))
    return out


def bench_bucketing(quick, strategy="avoid_zero"):
    L = 2048
    reps = 200 if quick else 2_000
    code = _kernels.BUCKETING_STRATEGY_CODES[strategy]
    rng = substream(3, 0)
    signs = np.where(rng.random((reps, L)) < 0.5, -1, 1).astype(np.int8)
    out = [(f"bucketing[{strategy}]", f"{reps}x{L}")]
    if _kernels.HAVE_NUMBA:
        _kernels._bucketing_batch_numba(signs[:4], code, 32)
        out.append(("numba", timeit(lambda: _kernels._bucketing_batch_numba(signs, code, 32))))
    out.append(("numpy", timeit(lambda: _kernels._bucketing_batch_python(signs, code, 32))))
    return out


def main():
    parser = argparse.ArgumentParser(description="numba vs numpy kernel benchmark")
    parser.add_argument("--quick", action="store_true", help="smaller sizes for smoke runs")
    args = parser.parse_args()

    print(f"numba available: {_kernels.HAVE_NUMBA}; package dispatch: "
          f"{'numba' if _kernels.USE_NUMBA else 'numpy'}")
    for bench in (bench_fwht, bench_first_return, bench_bucketing):
        rows = bench(args.quick)
        name, size = rows[0]
        timings = rows[1:]
        line = f"{name:24s} {size:>12s}  " + "  ".join(
            f"{label}: {seconds * 1e3:9.2f} ms" for label, seconds in timings
        )
        if len(timings) == 2:
            line += f"  speedup: {timings[1][1] / timings[0][1]:.1f}x"
        print(line)


if __name__ == "__main__":
    main()
