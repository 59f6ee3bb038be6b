"""Hot numeric kernels: numba-jitted loops with a pure-numpy fallback.

The fallback path is selected by setting ``KGCORRECT_NUMBA=0`` in the
environment (or automatically when numba is not installed).  Both paths
are exercised by the test suite and compared in ``benchmarks/bench_kernels.py``.
"""
import os

import numpy as np

USE_NUMBA = os.environ.get("KGCORRECT_NUMBA", "1") != "0"
if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:
        USE_NUMBA = False


def maybe_jit(fn):
    """Apply ``@njit(cache=True)`` on the numba path, return ``fn`` unchanged otherwise."""
    if USE_NUMBA:
        return njit(cache=True)(fn)
    return fn


def _lcs_length_loop(a, b):
    """Token-level longest common subsequence length, two-row DP."""
    n = a.shape[0]
    m = b.shape[0]
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int32)
    curr = np.zeros(m + 1, dtype=np.int32)
    for i in range(n):
        ai = a[i]
        for j in range(m):
            if ai == b[j]:
                curr[j + 1] = prev[j] + 1
            elif prev[j + 1] >= curr[j]:
                curr[j + 1] = prev[j + 1]
            else:
                curr[j + 1] = curr[j]
        prev, curr = curr, prev
    return int(prev[m])


def _lcs_length_numpy(a, b):
    # Row recurrence rewritten as a running max so numpy's accumulate applies:
    # c[j] = max(match[j], p[j], c[j-1]) is equivalent to the classic DP because
    # adjacent LCS cells never differ by more than one.
    n = a.shape[0]
    m = b.shape[0]
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int32)
    curr = np.zeros(m + 1, dtype=np.int32)
    for i in range(n):
        base = np.where(b == a[i], prev[:-1] + 1, 0)
        np.maximum(base, prev[1:], out=base)
        np.maximum.accumulate(base, out=curr[1:])
        prev, curr = curr, prev
    return int(prev[m])


def _dot_scores_loop(mat, q):
    """Per-row float64 dot products of a float32 matrix against a query vector."""
    n, d = mat.shape
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        s = 0.0
        for k in range(d):
            s += np.float64(mat[i, k]) * np.float64(q[k])
        out[i] = s
    return out


def _dot_scores_numpy(mat, q):
    return mat.astype(np.float64) @ q.astype(np.float64)


if USE_NUMBA:
    lcs_length = njit(cache=True)(_lcs_length_loop)
    dot_scores = njit(cache=True)(_dot_scores_loop)
else:
    lcs_length = _lcs_length_numpy
    dot_scores = _dot_scores_numpy
