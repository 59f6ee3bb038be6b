import os
import subprocess
import sys

import numpy as np

from kgcorrect._kernels import (
    USE_NUMBA,
    _dot_scores_loop,
    _dot_scores_numpy,
    _lcs_length_loop,
    _lcs_length_numpy,
    dot_scores,
    lcs_length,
)


class TestLcsPaths:
    def test_loop_and_numpy_agree_on_random_cases(self):
        rng = np.random.default_rng(5)
        for _ in range(300):
            a = rng.integers(0, 6, size=rng.integers(0, 20)).astype(np.int32)
            b = rng.integers(0, 6, size=rng.integers(0, 20)).astype(np.int32)
            assert _lcs_length_loop(a, b) == _lcs_length_numpy(a, b)

    def test_empty_inputs(self):
        empty = np.array([], dtype=np.int32)
        one = np.array([1], dtype=np.int32)
        assert lcs_length(empty, one) == 0
        assert lcs_length(one, empty) == 0

    def test_known_value(self):
        a = np.array([1, 2, 3, 4], dtype=np.int32)
        b = np.array([1, 3, 4, 5], dtype=np.int32)
        assert lcs_length(a, b) == 3


class TestDotScorePaths:
    def test_loop_and_numpy_agree(self):
        rng = np.random.default_rng(6)
        mat = rng.normal(size=(40, 16)).astype(np.float32)
        q = rng.normal(size=16).astype(np.float32)
        np.testing.assert_allclose(_dot_scores_loop(mat, q), _dot_scores_numpy(mat, q),
                                   atol=1e-6)

    def test_active_path_matches_reference(self):
        rng = np.random.default_rng(7)
        mat = rng.normal(size=(10, 8)).astype(np.float32)
        q = rng.normal(size=8).astype(np.float32)
        np.testing.assert_allclose(dot_scores(mat, q), _dot_scores_numpy(mat, q), atol=1e-6)


class TestEnvFlag:
    def test_flag_disables_numba(self):
        env = dict(os.environ, KGCORRECT_NUMBA="0")
        out = subprocess.run(
            [sys.executable, "-c",
             "from kgcorrect._kernels import USE_NUMBA; print(USE_NUMBA)"],
            env=env, capture_output=True, text=True, check=True)
        assert out.stdout.strip() == "False"

    def test_current_process_flag_consistent(self):
        expected = os.environ.get("KGCORRECT_NUMBA", "1") != "0"
        try:
            import numba  # noqa: F401
        except ImportError:
            expected = False
        assert USE_NUMBA == expected
