"""Benchmark the compiled kernels against the NumPy fallback.

Run from the repository root:

    python benchmarks/bench_kernels.py [--repeats 5]

Sizes mirror realistic workloads: a day-scale combinatorial assignment over
a full joint-state table, a joint Viterbi decode, and the split scan that
dominates tree fitting.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from wattsplit._kernels import _pyk

try:
    from wattsplit._kernels import _ck
except ImportError:
    _ck = None


def bench(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def workloads(rng):
    agg = rng.uniform(0, 4000, size=10_000)
    sums = np.sort(rng.uniform(0, 4000, size=4096))

    S = 256
    log_init = np.log(rng.dirichlet(np.ones(S)))
    log_trans = np.log(rng.dirichlet(np.ones(S), size=S))
    log_emit = rng.normal(size=(2000, S))

    xs = np.sort(rng.uniform(0, 1000, size=36_000))
    ys = rng.uniform(0, 500, size=36_000)

    return [
        ("co_assign      T=10k S=4096", "co_assign", (agg, sums)),
        ("viterbi_path   T=2k  S=256", "viterbi_path", (log_init, log_trans, log_emit)),
        ("best_split     n=36k", "best_split", (xs, ys, False)),
    ]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    rows = []
    for label, name, call_args in workloads(rng):
        t_py = bench(getattr(_pyk, name), call_args, args.repeats)
        if _ck is not None:
            t_c = bench(getattr(_ck, name), call_args, args.repeats)
            rows.append((label, t_py, t_c, t_py / t_c))
        else:
            rows.append((label, t_py, None, None))

    print(f"{'kernel':<30} {'python':>10} {'compiled':>10} {'speedup':>8}")
    for label, t_py, t_c, speedup in rows:
        if t_c is None:
            print(f"{label:<30} {t_py * 1e3:>8.2f}ms {'n/a':>10} {'n/a':>8}")
        else:
            print(f"{label:<30} {t_py * 1e3:>8.2f}ms {t_c * 1e3:>8.2f}ms {speedup:>7.1f}x")
    if _ck is None:
        print("\ncompiled kernels not built; showing the NumPy fallback only")


if __name__ == "__main__":
    main()
