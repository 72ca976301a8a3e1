"""Exact mixed-precision bit allocation under a storage budget.

The problem: pick one candidate bit width per singular vector so that the
summed error-table cost is minimal, total storage stays within the budget,
and at most ``f_max`` distinct bit widths are used. With the active bit set
fixed this is a multiple-choice knapsack, solved exactly by dynamic
programming over the storage axis; the active set itself is found by
enumerating every candidate subset of size <= ``f_max``.

Ties are broken by a total order: smaller objective, then fewer bit-units
spent, then lexicographically smaller assignment vector. This makes the
returned scheme deterministic and golden-file friendly.
"""

from __future__ import annotations

import itertools
import math
import sys
from dataclasses import dataclass

import numpy as np

from .error_table import ErrorTable
from .exceptions import ConfigError, InfeasibleBudgetError, ShapeError

_DP_MEMORY_CAP_BYTES = 2 << 30


@dataclass(frozen=True)
class AllocProblem:
    """One allocation instance.

    ``storage_per_row[k]`` is the bit-unit cost of assigning candidate k to a
    row: ``(h_in + h_out) * candidates[k]``. ``budget`` is in the same
    bit-units; metadata (scales, zero points, the scheme vector) is excluded
    here and accounted separately by the container.
    """

    table: ErrorTable
    storage_per_row: np.ndarray
    budget: float
    f_max: int

    def __post_init__(self):
        b = np.asarray(self.storage_per_row, dtype=np.int64)
        if b.size != len(self.table.candidates):
            raise ShapeError(
                f"storage vector has {b.size} entries for "
                f"{len(self.table.candidates)} candidates"
            )
        if np.any(b < 0):
            raise ConfigError("storage costs must be nonnegative")
        if self.f_max < 1:
            raise ConfigError(f"f_max must be >= 1, got {self.f_max}")
        object.__setattr__(self, "storage_per_row", b)


@dataclass(frozen=True)
class BitScheme:
    """An allocation: one bit per row, the distinct bits used, and its cost."""

    assignment: np.ndarray
    active_bits: tuple[int, ...]
    objective: float
    spent: int

    def is_feasible(self, problem: AllocProblem) -> bool:
        q = problem.table.candidates
        bit_to_k = {b: k for k, b in enumerate(q)}
        if any(int(b) not in bit_to_k for b in self.assignment):
            return False
        spent = int(
            sum(problem.storage_per_row[bit_to_k[int(b)]] for b in self.assignment)
        )
        return (
            spent <= problem.budget
            and spent == self.spent
            and len(self.active_bits) <= problem.f_max
            and set(int(b) for b in self.assignment) <= set(self.active_bits)
        )


def storage_per_row(candidates, h_in: int, h_out: int) -> np.ndarray:
    """Bit-unit payload cost per candidate: one V row plus one U column."""
    return (h_in + h_out) * np.asarray(candidates, dtype=np.int64)


def budget_from_alpha(alpha: float, source_bits: int, h_in: int, h_out: int) -> float:
    """Bit-unit budget for compressing a ``source_bits`` matrix by factor alpha."""
    if not 0 < alpha <= 1:
        raise ConfigError(f"alpha must be in (0, 1], got {alpha}")
    if source_bits not in (16, 32):
        raise ConfigError(f"source_bits must be 16 or 32, got {source_bits}")
    return alpha * source_bits * h_in * h_out


def _canonical_objective(errors: np.ndarray, choice: np.ndarray) -> float:
    return float(np.sum(errors[np.arange(errors.shape[0]), choice]))


def _solve_subset_dp(errors, weights, capacity):
    """Exact min-(cost, spent) DP over one active subset.

    ``errors`` is (rows, S); ``weights`` integer bit-unit costs per option.
    Returns the per-row option choice or None when infeasible. The DP runs
    back-to-front so the forward backtrack can pick the smallest option at
    each row, yielding the lexicographically smallest optimal assignment.
    """
    rows, n_opt = errors.shape
    cost = np.full((rows + 1, capacity + 1), np.inf)
    spent = np.zeros((rows + 1, capacity + 1), dtype=np.int64)
    cost[rows, :] = 0.0
    for i in range(rows - 1, -1, -1):
        for k in range(n_opt):
            w = int(weights[k])
            if w > capacity:
                continue
            cand_cost = np.full(capacity + 1, np.inf)
            cand_spent = np.zeros(capacity + 1, dtype=np.int64)
            cand_cost[w:] = errors[i, k] + cost[i + 1, : capacity + 1 - w]
            cand_spent[w:] = w + spent[i + 1, : capacity + 1 - w]
            better = (cand_cost < cost[i]) | (
                (cand_cost == cost[i]) & (cand_spent < spent[i])
            )
            cost[i, better] = cand_cost[better]
            spent[i, better] = cand_spent[better]
    if not np.isfinite(cost[0, capacity]):
        return None
    choice = np.zeros(rows, dtype=np.int64)
    c = capacity
    for i in range(rows):
        for k in range(n_opt):
            w = int(weights[k])
            if w > c:
                continue
            if (
                errors[i, k] + cost[i + 1, c - w] == cost[i, c]
                and w + spent[i + 1, c - w] == spent[i, c]
            ):
                choice[i] = k
                c -= w
                break
        else:  # pragma: no cover - DP invariant
            raise RuntimeError("DP backtrack failed")
    return choice


def _lagrangian_bound(errors, weights, budget):
    """Lower bound on the suffix cost: max over a few multipliers of
    ``sum_i min_k (e_ik + lam * w_k) - lam * budget``."""
    lams = [0.0]
    span = float(np.max(errors) - np.min(errors))
    wmax = float(np.max(weights))
    if wmax > 0 and span > 0:
        base = span / wmax
        lams += [base * f for f in (0.01, 0.1, 0.5, 1.0, 2.0, 10.0)]
    best = -math.inf
    for lam in lams:
        val = float(np.sum(np.min(errors + lam * weights, axis=1))) - lam * budget
        best = max(best, val)
    return best


def _solve_subset_bnb(errors, weights, budget):
    """Exact depth-first branch and bound over one subset (DP fallback).

    Used when the DP table would blow the memory cap. Prunes on a Lagrangian
    relaxation of the budget constraint; pruning is strict-only so optimal
    ties survive for the deterministic tie-break.
    """
    rows, n_opt = errors.shape
    min_w = int(np.min(weights))
    min_w_suffix = np.arange(rows, -1, -1, dtype=np.int64) * min_w
    if min_w_suffix[0] > budget:
        return None
    sys.setrecursionlimit(max(sys.getrecursionlimit(), rows + 200))
    best: list = [math.inf, 0, None]  # cost, spent, choice

    def rec(i, cost, spent, choice):
        if i == rows:
            key = (cost, spent, tuple(choice))
            if best[2] is None or key < (best[0], best[1], tuple(best[2])):
                best[0], best[1], best[2] = cost, spent, list(choice)
            return
        bound = cost + _lagrangian_bound(errors[i:], weights, budget - spent)
        if best[2] is not None and bound > best[0]:
            return
        for k in range(n_opt):
            w = int(weights[k])
            if spent + w + min_w_suffix[i + 1] > budget:
                continue
            choice.append(k)
            rec(i + 1, cost + errors[i, k], spent + w, choice)
            choice.pop()

    rec(0, 0.0, 0, [])
    if best[2] is None:
        return None
    return np.asarray(best[2], dtype=np.int64)


def solve(problem: AllocProblem, dp_memory_cap: int = _DP_MEMORY_CAP_BYTES) -> BitScheme:
    """Globally optimal scheme for one allocation problem.

    Raises :class:`InfeasibleBudgetError` when even the cheapest assignment
    exceeds the budget, reporting the minimal budget that would work.
    """
    q = problem.table.candidates
    errors = problem.table.errors
    b_units = problem.storage_per_row
    rows = errors.shape[0]
    n_cand = len(q)
    min_needed = rows * int(np.min(b_units))
    if problem.budget < 0 or min_needed > problem.budget:
        raise InfeasibleBudgetError(
            f"budget {problem.budget:g} bit-units is infeasible; "
            f"at least {min_needed} bit-units are required "
            f"({rows} rows at the cheapest candidate)",
            min_required=float(min_needed),
        )

    best: tuple[float, int, tuple] | None = None
    best_choice_bits: np.ndarray | None = None
    max_size = min(problem.f_max, n_cand)
    for size in range(1, max_size + 1):
        for subset in itertools.combinations(range(n_cand), size):
            sub_w = b_units[list(subset)]
            sub_e = errors[:, list(subset)]
            min_w = int(np.min(sub_w))
            if rows * min_w > problem.budget:
                continue
            g0 = int(np.gcd.reduce(sub_w[sub_w > 0])) if np.any(sub_w > 0) else 1
            weights = sub_w // g0
            capacity = min(int(problem.budget // g0), rows * int(np.max(weights)))
            dp_bytes = (rows + 1) * (capacity + 1) * 16
            if dp_bytes <= dp_memory_cap:
                choice = _solve_subset_dp(sub_e, weights, capacity)
            else:
                choice = _solve_subset_bnb(sub_e, sub_w, problem.budget)
            if choice is None:
                continue
            assignment = np.asarray([q[subset[k]] for k in choice], dtype=np.int64)
            objective = _canonical_objective(sub_e, choice)
            spent = int(np.sum(sub_w[choice]))
            key = (objective, spent, tuple(assignment))
            if best is None or key < best:
                best = key
                best_choice_bits = assignment
    if best is None or best_choice_bits is None:  # pragma: no cover - guarded above
        raise InfeasibleBudgetError(
            f"no feasible assignment within budget {problem.budget:g}",
            min_required=float(min_needed),
        )
    return BitScheme(
        assignment=best_choice_bits,
        active_bits=tuple(sorted(set(int(b) for b in best_choice_bits))),
        objective=best[0],
        spent=best[1],
    )
