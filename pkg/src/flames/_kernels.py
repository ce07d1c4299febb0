"""Numeric inner loops, compiled with numba when available.

Every kernel has a pure-numpy twin with the same signature and the same
results. The numba versions are used by default; set ``FLAMES_DISABLE_NUMBA=1``
in the environment (before import) to force the numpy path.
"""

import math
import os

import numpy as np

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    _HAVE_NUMBA = False

USE_NUMBA = _HAVE_NUMBA and os.environ.get("FLAMES_DISABLE_NUMBA", "0") not in ("1", "true", "yes")

# policy codes shared with search.Policy
UCB, PUCB_FIXED, PUCB_VAR = 0, 1, 2

# opcodes of the compiled expression language
OP_CONST, OP_VAR, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_MIN, OP_MAX = range(8)


# ---------------------------------------------------------------- top-k


def topk_desc_numpy(values, k):
    order = np.argsort(-values, kind="stable")
    order = order[np.isfinite(values[order])]
    return order[:k].astype(np.int64)


def _topk_desc_py(values, k):
    # one pass with a sorted insertion buffer; scanning in index order means a
    # tie never displaces the earlier entry
    out = np.empty(min(k, values.shape[0]), dtype=np.int64)
    m = 0
    for i in range(values.shape[0]):
        x = values[i]
        if not math.isfinite(x):
            continue
        if m == out.shape[0]:
            if m == 0 or x <= values[out[m - 1]]:
                continue
            m -= 1
        j = m
        while j > 0 and values[out[j - 1]] < x:
            out[j] = out[j - 1]
            j -= 1
        out[j] = i
        m += 1
    return out[:m]


# ---------------------------------------------------------------- policies


def policy_scores_numpy(code, q, n, p, parent_n, c_ucb, c_puct, c_base, c_init):
    q = np.asarray(q, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    if code == UCB:
        out = np.full(q.shape[0], np.inf)
        seen = n > 0
        if parent_n > 0:
            out[seen] = q[seen] + c_ucb * np.sqrt(math.log(parent_n) / n[seen])
        else:
            out[seen] = q[seen]
        return out
    if code == PUCB_FIXED:
        c = c_puct
    else:
        c = math.log((parent_n + c_base + 1.0) / c_base) + c_init
    return q + c * p * math.sqrt(parent_n) / (1.0 + n)


def _policy_scores_py(code, q, n, p, parent_n, c_ucb, c_puct, c_base, c_init):
    m = q.shape[0]
    out = np.empty(m, dtype=np.float64)
    c = c_puct
    if code == PUCB_VAR:
        c = math.log((parent_n + c_base + 1.0) / c_base) + c_init
    root = math.sqrt(parent_n)
    for i in range(m):
        if code == UCB:
            if n[i] == 0:
                out[i] = np.inf
            elif parent_n > 0:
                out[i] = q[i] + c_ucb * math.sqrt(math.log(parent_n) / n[i])
            else:
                out[i] = q[i]
        else:
            out[i] = q[i] + c * p[i] * root / (1.0 + n[i])
    return out


# ---------------------------------------------------------------- interpreter


def _trunc_div(a, b):
    quo = abs(a) // abs(b)
    if (a < 0) != (b < 0):
        quo = -quo
    return quo


def eval_prefix_numpy(ops, args, inputs):
    """Evaluate one prefix program on every row of ``inputs``.

    Returns ``(values, ok)``; ``ok[i]`` is False where row ``i`` divided by zero.
    """
    n_cases = inputs.shape[0]
    ok = np.ones(n_cases, dtype=np.bool_)
    stack = []
    for j in range(len(ops) - 1, -1, -1):
        op = ops[j]
        if op == OP_CONST:
            stack.append(np.full(n_cases, args[j], dtype=np.int64))
        elif op == OP_VAR:
            stack.append(inputs[:, args[j]].astype(np.int64))
        else:
            a = stack.pop()
            b = stack.pop()
            if op == OP_ADD:
                r = a + b
            elif op == OP_SUB:
                r = a - b
            elif op == OP_MUL:
                r = a * b
            elif op == OP_MIN:
                r = np.minimum(a, b)
            elif op == OP_MAX:
                r = np.maximum(a, b)
            else:
                zero = b == 0
                ok &= ~zero
                safe = np.where(zero, 1, b)
                r = np.abs(a) // np.abs(safe)
                r = np.where((a < 0) != (safe < 0), -r, r)
                r = np.where(zero, 0, r)
            stack.append(r)
    return stack[0], ok


def _eval_prefix_py(ops, args, inputs):
    n_cases = inputs.shape[0]
    values = np.zeros(n_cases, dtype=np.int64)
    ok = np.ones(n_cases, dtype=np.bool_)
    stack = np.zeros(ops.shape[0], dtype=np.int64)
    for c in range(n_cases):
        top = 0
        failed = False
        for j in range(ops.shape[0] - 1, -1, -1):
            op = ops[j]
            if op == OP_CONST:
                stack[top] = args[j]
                top += 1
            elif op == OP_VAR:
                stack[top] = inputs[c, args[j]]
                top += 1
            else:
                a = stack[top - 1]
                b = stack[top - 2]
                top -= 2
                if op == OP_ADD:
                    r = a + b
                elif op == OP_SUB:
                    r = a - b
                elif op == OP_MUL:
                    r = a * b
                elif op == OP_MIN:
                    r = min(a, b)
                elif op == OP_MAX:
                    r = max(a, b)
                elif b == 0:
                    failed = True
                    r = 0
                else:
                    r = _trunc_div(a, b)
                stack[top] = r
                top += 1
        values[c] = stack[0]
        ok[c] = not failed
    return values, ok


if _HAVE_NUMBA:
    _trunc_div = numba.njit(cache=True)(_trunc_div)
    topk_desc_numba = numba.njit(cache=True)(_topk_desc_py)
    policy_scores_numba = numba.njit(cache=True)(_policy_scores_py)
    eval_prefix_numba = numba.njit(cache=True)(_eval_prefix_py)
else:  # pragma: no cover
    topk_desc_numba = _topk_desc_py
    policy_scores_numba = _policy_scores_py
    eval_prefix_numba = _eval_prefix_py


def topk_desc(values, k):
    """Indices of the ``k`` largest finite entries, descending, ties by index."""
    values = np.ascontiguousarray(values, dtype=np.float64)
    if USE_NUMBA:
        return topk_desc_numba(values, int(k))
    return topk_desc_numpy(values, int(k))


def policy_scores(code, q, n, p, parent_n, c_ucb, c_puct, c_base, c_init):
    q = np.ascontiguousarray(q, dtype=np.float64)
    n = np.ascontiguousarray(n, dtype=np.float64)
    p = np.ascontiguousarray(p, dtype=np.float64)
    args = (int(code), q, n, p, float(parent_n), float(c_ucb), float(c_puct), float(c_base), float(c_init))
    if USE_NUMBA:
        return policy_scores_numba(*args)
    return policy_scores_numpy(*args)


def eval_prefix(ops, args, inputs):
    ops = np.ascontiguousarray(ops, dtype=np.int64)
    args = np.ascontiguousarray(args, dtype=np.int64)
    inputs = np.ascontiguousarray(inputs, dtype=np.int64)
    if USE_NUMBA:
        return eval_prefix_numba(ops, args, inputs)
    return eval_prefix_numpy(ops, args, inputs)


def warmup():
    """Compile the numba kernels so the first timed call does not pay for it."""
    topk_desc(np.array([0.5, -np.inf, 0.5]), 2)
    policy_scores(PUCB_VAR, [0.1], [1], [0.5], 2, 1.0, 1.0, 10.0, 4.0)
    eval_prefix([OP_ADD, OP_VAR, OP_CONST], [0, 0, 1], np.zeros((2, 4), dtype=np.int64))
