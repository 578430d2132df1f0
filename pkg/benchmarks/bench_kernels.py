"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--sizes 16 32 64 128]

Prints best-of-N wall time per kernel and size, the speedup, and the largest
output difference between the two backends.
"""
import argparse
import time

import numpy as np

from lifelong_reid import _pykernels as py
from lifelong_reid.numerics.linalg import JACOBI_TOL, MAX_SWEEPS

try:
    from lifelong_reid._ext import _kernels as cy
except ImportError:
    cy = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def spd(n, rng):
    a = rng.standard_normal((n, n))
    return np.ascontiguousarray(a @ a.T / n + np.eye(n))


def bench_eigh(sizes, repeat, rng):
    for n in sizes:
        a = spd(n, rng)
        t_py, (w_py, _, _) = best_of(lambda: py.jacobi_eigh(a.copy(), JACOBI_TOL, MAX_SWEEPS),
                                     repeat)
        line = f"jacobi_eigh   n={n:<5} python {1e3 * t_py:9.2f} ms"
        if cy is not None:
            t_cy, (w_cy, _, _) = best_of(lambda: cy.jacobi_eigh(a.copy(), JACOBI_TOL, MAX_SWEEPS),
                                         repeat)
            diff = np.abs(np.sort(w_py) - np.sort(w_cy)).max()
            line += f"   compiled {1e3 * t_cy:9.2f} ms   x{t_py / t_cy:6.1f}   max|dw| {diff:.1e}"
        print(line)


def bench_ap(sizes, repeat, rng):
    for g in sizes:
        q = max(4, g // 8)
        q_ids = rng.integers(0, 20, q)
        g_ids = rng.integers(0, 20, g)
        q_cams = rng.integers(0, 4, q)
        g_cams = rng.integers(0, 4, g)
        order = np.ascontiguousarray(np.argsort(rng.random((q, g)), axis=1), dtype=np.int64)
        args = (order, q_ids, q_cams, g_ids, g_cams)
        t_py, (ap_py, _, _) = best_of(lambda: py.ranked_ap(*args), repeat)
        line = f"ranked_ap     g={g:<5} python {1e3 * t_py:9.2f} ms"
        if cy is not None:
            t_cy, (ap_cy, _, _) = best_of(lambda: cy.ranked_ap(*args), repeat)
            diff = np.abs(np.asarray(ap_py) - np.asarray(ap_cy)).max()
            line += f"   compiled {1e3 * t_cy:9.2f} ms   x{t_py / t_cy:6.1f}   max|dAP| {diff:.1e}"
        print(line)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--sizes", type=int, nargs="+", default=[16, 32, 64, 128])
    p.add_argument("--gallery", type=int, nargs="+", default=[100, 1000, 4000])
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()
    rng = np.random.default_rng(args.seed)
    if cy is None:
        print("compiled extension not built; timing the fallback only")
    bench_eigh(args.sizes, args.repeat, rng)
    bench_ap(args.gallery, args.repeat, rng)


if __name__ == "__main__":
    main()
