"""Time the compiled kernels against the pure-Python fallback.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--length 75] [--pairs 200]

Each kernel runs on identical inputs under both backends; the table reports
the best wall time over ``--repeat`` rounds, the speedup and the largest
absolute difference between the two outputs. Without the compiled extension
only the Python column is filled.
"""

from __future__ import annotations

import argparse
import importlib
import time

import numpy as np

from lcpattern import _kernels_py


def best_time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def max_diff(a, b):
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def workloads(rng, length, pairs):
    A = rng.normal(size=(pairs, length, 6))
    B = rng.normal(size=(pairs, length, 6))
    T, N = 400, 10
    logB = rng.normal(scale=3.0, size=(T, N))
    trans = rng.dirichlet(np.ones(N), size=N)
    start = rng.dirichlet(np.ones(N))
    return {
        f"dtw_distance x{pairs} ({length}x6)":
            lambda k: np.array([k.dtw_distance(a, b) for a, b in zip(A, B)]),
        f"dtw_path x{pairs // 10} ({length}x6)":
            lambda k: np.array([k.dtw_path(a, b)[1] for a, b in zip(A[: pairs // 10], B[: pairs // 10])]),
        f"forward_backward (T={T}, N={N})":
            lambda k: k.forward_backward(logB, trans, start)[0],
        f"viterbi (T={T}, N={N})":
            lambda k: k.viterbi(logB, np.log(trans), np.log(start))[0],
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--length", type=int, default=75)
    ap.add_argument("--pairs", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    try:
        compiled = importlib.import_module("lcpattern._kernels")
    except ImportError:
        compiled = None

    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<34} {'python s':>10} {'cython s':>10} {'speedup':>8} {'max |diff|':>11}")
    for name, job in workloads(rng, args.length, args.pairs).items():
        t_py, out_py = best_time(lambda: job(_kernels_py), args.repeat)
        if compiled is None:
            print(f"{name:<34} {t_py:>10.4f} {'-':>10} {'-':>8} {'-':>11}")
            continue
        t_c, out_c = best_time(lambda: job(compiled), args.repeat)
        diff = max_diff(out_py, out_c)
        print(f"{name:<34} {t_py:>10.4f} {t_c:>10.4f} {t_py / t_c:>7.1f}x {diff:>11.1e}")


if __name__ == "__main__":
    main()
