"""The numba kernels and their numpy twins must agree exactly."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flames import _kernels

pytestmark = pytest.mark.skipif(not _kernels._HAVE_NUMBA, reason="numba not installed")

scores = st.lists(
    st.one_of(st.sampled_from([-np.inf, 0.0, -1.0, -0.5]), st.floats(-20, 0, allow_nan=False)),
    min_size=1, max_size=40)


@given(scores, st.integers(1, 12))
def test_topk_numba_matches_numpy(values, k):
    values = np.array(values)
    np.testing.assert_array_equal(_kernels.topk_desc_numba(values, k), _kernels.topk_desc_numpy(values, k))


def test_topk_tie_break_and_infinities():
    values = np.array([-1.0, -0.5, -np.inf, -0.5, -2.0])
    assert _kernels.topk_desc(values, 10).tolist() == [1, 3, 0, 4]


@given(
    st.sampled_from([_kernels.UCB, _kernels.PUCB_FIXED, _kernels.PUCB_VAR]),
    st.lists(st.tuples(st.floats(0, 1), st.integers(0, 50), st.floats(0, 1)), min_size=1, max_size=10),
    st.integers(1, 500),
)
@settings(max_examples=200)
def test_policy_numba_matches_numpy(code, children, parent_n):
    q, n, p = (np.array(col, dtype=np.float64) for col in zip(*children))
    args = (q, n, p, float(parent_n), 1.414, 4.0, 10.0, 4.0)
    a = _kernels.policy_scores_numba(code, *args)
    b = _kernels.policy_scores_numpy(code, *args)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=0)


programs = st.sampled_from([
    ([_kernels.OP_ADD, _kernels.OP_VAR, _kernels.OP_CONST], [0, 0, 1]),
    ([_kernels.OP_DIV, _kernels.OP_VAR, _kernels.OP_VAR], [0, 0, 1]),
    ([_kernels.OP_MUL, _kernels.OP_SUB, _kernels.OP_VAR, _kernels.OP_VAR, _kernels.OP_MAX, _kernels.OP_VAR,
      _kernels.OP_CONST], [0, 0, 2, 3, 0, 1, 2]),
    ([_kernels.OP_MIN, _kernels.OP_DIV, _kernels.OP_VAR, _kernels.OP_VAR, _kernels.OP_VAR], [0, 0, 3, 1, 2]),
])


@given(programs, st.lists(st.lists(st.integers(-9, 9), min_size=4, max_size=4), min_size=1, max_size=8))
def test_interpreter_numba_matches_numpy(prog, rows):
    ops = np.array(prog[0], dtype=np.int64)
    args = np.array(prog[1], dtype=np.int64)
    inputs = np.array(rows, dtype=np.int64)
    va, oka = _kernels.eval_prefix_numba(ops, args, inputs)
    vb, okb = _kernels.eval_prefix_numpy(ops, args, inputs)
    np.testing.assert_array_equal(oka, okb)
    np.testing.assert_array_equal(va[oka], vb[okb])


@pytest.mark.parametrize("a,b,expected", [(7, 2, 3), (-7, 2, -3), (7, -2, -3), (-7, -2, 3), (0, 5, 0)])
def test_division_truncates_toward_zero(a, b, expected):
    ops = np.array([_kernels.OP_DIV, _kernels.OP_VAR, _kernels.OP_VAR])
    args = np.array([0, 0, 1])
    for impl in (_kernels.eval_prefix_numba, _kernels.eval_prefix_numpy):
        values, ok = impl(ops, args, np.array([[a, b, 0, 0]]))
        assert ok[0] and values[0] == expected


@pytest.mark.parametrize("flag,expected", [("1", "False"), ("0", "True")])
def test_env_flag_selects_backend(flag, expected):
    code = ("from flames import _kernels; from flames.reward import generate_bug_corpus;"
            "generate_bug_corpus(7, 3); print(_kernels.USE_NUMBA)")
    env = dict(os.environ, FLAMES_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == expected
