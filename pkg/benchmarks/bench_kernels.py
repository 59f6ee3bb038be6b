"""Benchmark the numba kernels against the pure-numpy fallback path.

Run:  python benchmarks/bench_kernels.py
The jitted variants are warmed once before timing so compilation is
excluded. Set KGCORRECT_NUMBA=0 to confirm the package works (slower)
without numba at all.
"""
import time

import numpy as np

from kgcorrect._kernels import (
    USE_NUMBA,
    _dot_scores_loop,
    _dot_scores_numpy,
    _lcs_length_loop,
    _lcs_length_numpy,
)

try:
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def timeit(fn, *args, repeat=5):
    best = float("inf")
    for _ in range(repeat):
        start = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - start)
    return best


def bench_lcs():
    rng = np.random.default_rng(1)
    a = rng.integers(0, 50, size=1200).astype(np.int32)
    b = rng.integers(0, 50, size=1200).astype(np.int32)

    t_numpy = timeit(_lcs_length_numpy, a, b)
    print(f"lcs_length  numpy fallback   {t_numpy * 1e3:9.2f} ms")
    if HAS_NUMBA:
        jitted = njit(cache=True)(_lcs_length_loop)
        jitted(a[:4], b[:4])  # warm/compile
        t_numba = timeit(jitted, a, b)
        print(f"lcs_length  numba @njit     {t_numba * 1e3:9.2f} ms"
              f"   ({t_numpy / t_numba:.1f}x vs fallback)")
        assert jitted(a, b) == _lcs_length_numpy(a, b)


def bench_dot_scores():
    rng = np.random.default_rng(2)
    mat = rng.normal(size=(20000, 256)).astype(np.float32)
    q = rng.normal(size=256).astype(np.float32)

    t_numpy = timeit(_dot_scores_numpy, mat, q)
    print(f"dot_scores  numpy fallback   {t_numpy * 1e3:9.2f} ms")
    if HAS_NUMBA:
        jitted = njit(cache=True)(_dot_scores_loop)
        jitted(mat[:2], q)  # warm/compile
        t_numba = timeit(jitted, mat, q)
        print(f"dot_scores  numba @njit     {t_numba * 1e3:9.2f} ms"
              f"   ({t_numpy / t_numba:.1f}x vs fallback)")
        assert np.allclose(jitted(mat, q), _dot_scores_numpy(mat, q), atol=1e-5)


if __name__ == "__main__":
    print(f"numba available: {HAS_NUMBA}; active path: {'numba' if USE_NUMBA else 'numpy'}")
    bench_lcs()
    bench_dot_scores()
