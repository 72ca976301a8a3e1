"""Shared fixtures and independent reference implementations (oracles).

The oracles here deliberately avoid the package's fast paths: the allocator
oracle enumerates every assignment, and the quantizer oracle inverts trailing
Hessian blocks explicitly instead of reusing a Cholesky factor.
"""

import numpy as np
import pytest

from deltamix.grids import GridParams


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_spd(rng, dim, rank=None, damp=0.0):
    """Wishart-style SPD matrix, optionally rank-deficient."""
    rank = dim if rank is None else rank
    a = rng.standard_normal((dim, rank))
    return a @ a.T + damp * np.eye(dim)


def reference_gptq_row(row, h, damp, col_bits, grids):
    """Textbook error-compensated quantization of one row.

    At each column the optimal compensation is computed from the explicit
    inverse of the trailing damped Hessian block. Returns
    (codes, dequantized, error) like ``deltamix.quantize_row``.
    """
    row = np.asarray(row, dtype=np.float64)
    d = row.size
    m = h + damp * np.eye(d)
    w = row.copy()
    deq = np.zeros(d)
    codes = np.zeros(d, dtype=np.int64)
    zero_grid = GridParams(bits=0)
    for j in range(d):
        g = zero_grid if col_bits[j] == 0 else grids[int(col_bits[j])]
        c = int(g.quantize(np.array([w[j]]))[0])
        q = float(g.dequantize(np.array([c]))[0])
        codes[j] = c
        deq[j] = q
        if j + 1 < d:
            minv = np.linalg.inv(m[j:, j:])
            w[j + 1 :] -= (w[j] - q) / minv[0, 0] * minv[0, 1:]
    delta = row - deq
    return codes, deq, float(0.5 * delta @ h @ delta)


def brute_force_alloc(errors, storage, budget, candidates, f_max):
    """Exhaustive enumeration of every per-row assignment.

    Returns ``(objective, spent, assignment)`` for the feasible assignment
    minimizing (cost, spent, lexicographic assignment), or None when none is
    feasible. Enumeration is vectorized over all ``n_cand ** rows`` choices.
    """
    errors = np.asarray(errors, dtype=np.float64)
    storage = np.asarray(storage, dtype=np.int64)
    rows, n_cand = errors.shape
    total = n_cand**rows
    idx = np.arange(total, dtype=np.int64)
    digits = np.zeros((total, rows), dtype=np.int64)
    rem = idx
    for pos in range(rows - 1, -1, -1):
        digits[:, pos] = rem % n_cand
        rem = rem // n_cand
    cost = errors[np.arange(rows), digits].sum(axis=1)
    spent = storage[digits].sum(axis=1)
    masks = np.bitwise_or.reduce(1 << digits, axis=1)
    n_active = np.bitwise_count(masks.astype(np.uint64))
    feasible = (spent <= budget) & (n_active <= f_max)
    if not np.any(feasible):
        return None
    f_idx = np.flatnonzero(feasible)
    order = np.lexsort((spent[f_idx], cost[f_idx]))  # stable: index breaks ties
    best = f_idx[order[0]]
    assignment = np.asarray([candidates[k] for k in digits[best]], dtype=np.int64)
    return float(cost[best]), int(spent[best]), assignment
