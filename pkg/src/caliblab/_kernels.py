"""Hot numeric kernels with numba-accelerated and pure-numpy variants.

Every kernel exists in two implementations that produce bit-identical
results: a numba ``@njit`` version and a vectorized (or, where the logic
is inherently sequential, looped) numpy version.  The active variant is
chosen once at import time: numba is used when it is importable unless
the environment variable ``CALIBLAB_BACKEND`` is set to ``numpy``.

Randomness is always drawn outside the kernels (Philox streams, see
``environments.substream``) and passed in as arrays, so results do not
depend on the backend.
"""

from __future__ import annotations

import os

import numpy as np

FORCE_NUMPY = os.environ.get("CALIBLAB_BACKEND", "").strip().lower() in {"numpy", "python"}

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not FORCE_NUMPY


# ---------------------------------------------------------------------------
# Fast Walsh-Hadamard transform (unnormalized butterflies, in place)
# ---------------------------------------------------------------------------

def _fwht_inplace_numpy(a):
    n = a.shape[-1]
    h = 1
    while h < n:
        b = a.reshape(a.shape[:-1] + (n // (2 * h), 2, h))
        top = b[..., 0, :] + b[..., 1, :]
        bot = b[..., 0, :] - b[..., 1, :]
        b[..., 0, :] = top
        b[..., 1, :] = bot
        h *= 2
    return a


if HAVE_NUMBA:

    @njit(cache=True)
    def _fwht_1d_numba(a):  # pragma: no cover - covered via dispatch tests
        n = a.shape[0]
        h = 1
        while h < n:
            for i in range(0, n, 2 * h):
                for j in range(i, i + h):
                    x = a[j]
                    y = a[j + h]
                    a[j] = x + y
                    a[j + h] = x - y
            h *= 2
        return a

    def _fwht_inplace_numba(a):
        if a.ndim == 1:
            _fwht_1d_numba(a)
        else:
            flat = a.reshape(-1, a.shape[-1])
            for row in range(flat.shape[0]):
                _fwht_1d_numba(flat[row])
        return a


fwht_inplace = _fwht_inplace_numba if USE_NUMBA else _fwht_inplace_numpy


# ---------------------------------------------------------------------------
# First return time of a +-1 simple random walk, truncated at horizon L
# ---------------------------------------------------------------------------

def _first_return_batch_numpy(signs):
    steps = signs.cumsum(axis=1, dtype=np.int32)
    hit = steps == 0
    first = hit.argmax(axis=1)
    tau = np.where(hit.any(axis=1), first + 1, signs.shape[1]).astype(np.int64)
    return tau


if HAVE_NUMBA:

    @njit(cache=True)
    def _first_return_batch_numba(signs):  # pragma: no cover
        reps, horizon = signs.shape
        out = np.empty(reps, dtype=np.int64)
        for r in range(reps):
            s = 0
            tau = horizon
            for t in range(horizon):
                s += signs[r, t]
                if s == 0:
                    tau = t + 1
                    break
            out[r] = tau
        return out


first_return_batch = _first_return_batch_numba if USE_NUMBA else _first_return_batch_numpy


# ---------------------------------------------------------------------------
# Adaptive noise bucketing
#
# Strategy codes (predictable: the bucket for step t is chosen from the
# bucket sums BEFORE the step-t increment is revealed):
#   0 single_bucket           everything into bucket 0
#   1 round_robin             bucket t mod n_pool
#   2 fresh_bucket_on_return  open a new bucket whenever the current one
#                             returns to a zero sum
#   3 avoid_zero              most recently available bucket with nonzero
#                             sum; when every sum is zero, rotate through
#                             the pool (recycles buckets instead of
#                             parking on bucket 0)
#   4 zero_seeking            most recently available bucket with zero sum,
#                             bucket 0 if none has a zero sum
#
# Per replicate the kernel reports (sum_v |B_v|, sum_v sqrt(n_v), L_eps)
# with B_v kept in units of the increment h (exact integers).
# ---------------------------------------------------------------------------

def _bucketing_fixed_numpy(signs, n_pool):
    # Non-adaptive strategies: bucket b sees the sign subsequence at
    # positions b, b + n_pool, ...  Vectorize per bucket.
    reps, horizon = signs.shape
    sum_abs = np.zeros(reps, dtype=np.int64)
    sum_sqrt = np.zeros(reps, dtype=np.float64)
    l_eps = np.zeros(reps, dtype=np.int64)
    for b in range(n_pool):
        sub = signs[:, b::n_pool]
        if sub.shape[1] == 0:
            continue
        walk = sub.cumsum(axis=1, dtype=np.int64)
        sum_abs += np.abs(walk[:, -1])
        sum_sqrt += np.sqrt(sub.shape[1])
        # steps taken from a zero bucket sum: the first step plus every
        # step following an interior return to zero
        l_eps += 1 + (walk[:, :-1] == 0).sum(axis=1)
    return sum_abs, sum_sqrt, l_eps


def _bucketing_batch_python(signs, strategy, n_pool):
    if strategy == 0:
        return _bucketing_fixed_numpy(signs, 1)
    if strategy == 1:
        return _bucketing_fixed_numpy(signs, n_pool)
    reps, horizon = signs.shape
    sum_abs = np.empty(reps, dtype=np.int64)
    sum_sqrt = np.empty(reps, dtype=np.float64)
    l_eps = np.empty(reps, dtype=np.int64)
    max_buckets = horizon + 1 if strategy == 2 else max(n_pool, 1)
    for r in range(reps):
        row = signs[r].tolist()
        sums = [0] * max_buckets
        counts = [0] * max_buckets
        returns = 0
        current = 0
        rot = 0
        stack = list(range(n_pool - 1, -1, -1)) if strategy == 4 else []
        for t in range(horizon):
            if strategy == 2:
                v = current
            elif strategy == 3:
                while stack and sums[stack[-1]] == 0:
                    stack.pop()
                if stack:
                    v = stack[-1]
                else:
                    v = rot
                    rot = (rot + 1) % n_pool
            else:
                while stack and sums[stack[-1]] != 0:
                    stack.pop()
                v = stack[-1] if stack else 0
            was_zero = sums[v] == 0
            if was_zero:
                returns += 1
            sums[v] += row[t]
            counts[v] += 1
            if strategy == 2 and sums[v] == 0:
                current += 1
            if strategy == 3 and was_zero and sums[v] != 0:
                stack.append(v)
            if strategy == 4 and not was_zero and sums[v] == 0:
                stack.append(v)
        sum_abs[r] = sum(abs(s) for s in sums)
        sum_sqrt[r] = sum(np.sqrt(c) for c in counts if c > 0)
        l_eps[r] = returns
    return sum_abs, sum_sqrt, l_eps


if HAVE_NUMBA:

    @njit(cache=True)
    def _bucketing_batch_numba(signs, strategy, n_pool):  # pragma: no cover
        reps, horizon = signs.shape
        sum_abs = np.empty(reps, dtype=np.int64)
        sum_sqrt = np.empty(reps, dtype=np.float64)
        l_eps = np.empty(reps, dtype=np.int64)
        max_buckets = horizon + 1 if strategy == 2 else max(n_pool, 1)
        sums = np.zeros(max_buckets, dtype=np.int64)
        counts = np.zeros(max_buckets, dtype=np.int64)
        stack = np.zeros(max_buckets + horizon, dtype=np.int64)
        for r in range(reps):
            sums[:] = 0
            counts[:] = 0
            returns = 0
            current = 0
            rot = 0
            stack_top = 0
            if strategy == 4:
                for b in range(n_pool - 1, -1, -1):
                    stack[stack_top] = b
                    stack_top += 1
            for t in range(horizon):
                if strategy == 0:
                    v = 0
                elif strategy == 1:
                    v = t % n_pool
                elif strategy == 2:
                    v = current
                elif strategy == 3:
                    while stack_top > 0 and sums[stack[stack_top - 1]] == 0:
                        stack_top -= 1
                    if stack_top > 0:
                        v = stack[stack_top - 1]
                    else:
                        v = rot
                        rot = (rot + 1) % n_pool
                else:
                    while stack_top > 0 and sums[stack[stack_top - 1]] != 0:
                        stack_top -= 1
                    v = stack[stack_top - 1] if stack_top > 0 else 0
                if sums[v] == 0:
                    returns += 1
                was_zero = sums[v] == 0
                sums[v] += signs[r, t]
                counts[v] += 1
                if strategy == 2 and sums[v] == 0:
                    current += 1
                if strategy == 3 and was_zero and sums[v] != 0:
                    stack[stack_top] = v
                    stack_top += 1
                if strategy == 4 and (not was_zero) and sums[v] == 0:
                    stack[stack_top] = v
                    stack_top += 1
            acc_abs = 0
            acc_sqrt = 0.0
            for b in range(max_buckets):
                if sums[b] > 0:
                    acc_abs += sums[b]
                else:
                    acc_abs -= sums[b]
                if counts[b] > 0:
                    acc_sqrt += np.sqrt(counts[b])
            sum_abs[r] = acc_abs
            sum_sqrt[r] = acc_sqrt
            l_eps[r] = returns
        return sum_abs, sum_sqrt, l_eps


bucketing_batch = _bucketing_batch_numba if USE_NUMBA else _bucketing_batch_python

BUCKETING_STRATEGY_CODES = {
    "single_bucket": 0,
    "round_robin": 1,
    "fresh_bucket_on_return": 2,
    "avoid_zero": 3,
    "zero_seeking": 4,
}
