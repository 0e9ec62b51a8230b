#!/usr/bin/env python3
"""Throughput comparison of the compiled retrieval kernels vs the numpy
fallbacks, over the shapes the evaluation harness actually produces.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""
import argparse
import time

import numpy as np

from pearl import kernels


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def bench_topk(repeats):
    rng = np.random.default_rng(0)
    print("top-k selection (descending similarity, index tie-break)")
    print(f"{'queries x pool':>18} {'k':>4} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for nq, npool, k in [(500, 100, 20), (2000, 1000, 20), (2000, 5000, 20),
                         (5000, 5000, 50)]:
        sims = rng.normal(size=(nq, npool))
        t_np = time_call(lambda: kernels.topk_from_similarity(sims, k, backend="numpy"),
                         repeats)
        if kernels.HAVE_COMPILED:
            t_c = time_call(
                lambda: kernels.topk_from_similarity(sims, k, backend="compiled"),
                repeats)
            print(f"{nq:>9} x {npool:<6} {k:>4} {t_np*1e3:>8.2f}ms {t_c*1e3:>8.2f}ms "
                  f"{t_np/t_c:>7.1f}x")
        else:
            print(f"{nq:>9} x {npool:<6} {k:>4} {t_np*1e3:>8.2f}ms {'n/a':>10} {'':>8}")


def bench_separation(repeats):
    rng = np.random.default_rng(1)
    print("\npairwise separation sums (intra/inter cosine accumulation)")
    print(f"{'rows x dim':>18} {'numpy':>10} {'compiled':>10} {'speedup':>8}")
    for n, d in [(500, 32), (1000, 32), (2000, 64)]:
        x = rng.normal(size=(n, d))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        labels = rng.integers(0, 5, size=n).astype(np.int32)
        t_np = time_call(lambda: kernels.separation_sums(x, labels, backend="numpy"),
                         repeats)
        if kernels.HAVE_COMPILED:
            t_c = time_call(
                lambda: kernels.separation_sums(x, labels, backend="compiled"),
                repeats)
            print(f"{n:>9} x {d:<6} {t_np*1e3:>8.2f}ms {t_c*1e3:>8.2f}ms "
                  f"{t_np/t_c:>7.1f}x")
        else:
            print(f"{n:>9} x {d:<6} {t_np*1e3:>8.2f}ms {'n/a':>10} {'':>8}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()
    print(f"active backend: {kernels.active_backend()} "
          f"(compiled available: {kernels.HAVE_COMPILED})\n")
    bench_topk(args.repeats)
    bench_separation(args.repeats)


if __name__ == "__main__":
    main()
