"""Minimum-cost bipartite assignment used for same-category object matching.

Two independent solvers: exhaustive enumeration (small multiplicities, also the
test oracle) and a Kuhn-Munkres solver with potentials for larger ones. Both
return the lexicographically smallest optimal pair list.
"""
from __future__ import annotations

import itertools
import math
from typing import List, Sequence, Tuple

import numpy as np

Pairs = List[Tuple[int, int]]

# relative slack used when comparing optimal costs across sub-solves
_TIE_RTOL = 1e-12


def assignment_cost(cost: np.ndarray, pairs: Sequence[Tuple[int, int]]) -> float:
    """Total cost of ``pairs``; order-insensitive (correctly rounded sum)."""
    return math.fsum(float(cost[i, j]) for i, j in pairs)


def _candidate_pair_lists(n_rows: int, n_cols: int):
    k = min(n_rows, n_cols)
    if n_rows <= n_cols:
        for perm in itertools.permutations(range(n_cols), k):
            yield [(i, perm[i]) for i in range(k)]
    else:
        for rows in itertools.combinations(range(n_rows), k):
            for perm in itertools.permutations(range(n_cols), k):
                yield list(zip(rows, perm))


def solve_exhaustive(cost: np.ndarray) -> Pairs:
    """Enumerate every maximum-cardinality assignment and keep the cheapest."""
    cost = np.asarray(cost, dtype=float)
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return []
    best: Pairs | None = None
    best_cost = math.inf
    for pairs in _candidate_pair_lists(n_rows, n_cols):
        c = assignment_cost(cost, pairs)
        if c < best_cost or (c == best_cost and sorted(pairs) < best):
            best, best_cost = sorted(pairs), c
    return best


def _hungarian_square_or_wide(cost: np.ndarray) -> List[int]:
    """Kuhn-Munkres with row/column potentials; requires rows <= cols.

    Returns ``assign`` where ``assign[i]`` is the column given to row ``i``.
    """
    n, m = cost.shape
    INF = math.inf
    u = [0.0] * (n + 1)
    v = [0.0] * (m + 1)
    p = [0] * (m + 1)  # p[j]: row (1-based) matched to column j, 0 = free
    way = [0] * (m + 1)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (m + 1)
        used = [False] * (m + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = INF
            j1 = 0
            row = cost[i0 - 1]
            for j in range(1, m + 1):
                if not used[j]:
                    cur = row[j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(m + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    assign = [-1] * n
    for j in range(1, m + 1):
        if p[j]:
            assign[p[j] - 1] = j - 1
    return assign


def _hungarian_pairs(cost: np.ndarray) -> Pairs:
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return []
    if n_rows <= n_cols:
        assign = _hungarian_square_or_wide(cost)
        return sorted((i, j) for i, j in enumerate(assign))
    assign = _hungarian_square_or_wide(cost.T)
    return sorted((i, j) for j, i in enumerate(assign))


def _optimal_value(cost: np.ndarray) -> float:
    return assignment_cost(cost, _hungarian_pairs(cost))


def solve_hungarian(cost: np.ndarray) -> Pairs:
    """Optimal assignment via Kuhn-Munkres, refined to the lexicographically
    smallest optimal pair list.

    The refinement walks rows in order and commits each row to the lowest
    column that still admits an optimal completion.
    """
    cost = np.asarray(cost, dtype=float)
    n_rows, n_cols = cost.shape
    if n_rows == 0 or n_cols == 0:
        return []
    k = min(n_rows, n_cols)
    target = _optimal_value(cost)
    tol = _TIE_RTOL * max(1.0, abs(target))

    fixed: Pairs = []
    fixed_cost = 0.0
    free_rows = list(range(n_rows))
    free_cols = list(range(n_cols))
    for i in range(n_rows):
        if len(fixed) == k:
            break
        free_rows.remove(i)
        rows_left_needed = k - len(fixed) - 1
        chosen = None
        for j in free_cols:
            cols = [c for c in free_cols if c != j]
            sub = cost[np.ix_(free_rows, cols)] if free_rows and cols else np.zeros((0, 0))
            if min(len(free_rows), len(cols)) < rows_left_needed:
                continue
            rest = _optimal_value(sub) if rows_left_needed > 0 else 0.0
            if fixed_cost + float(cost[i, j]) + rest <= target + tol:
                chosen = j
                break
        if chosen is None:
            # leaving row i unmatched must still be optimal (only when rows > cols)
            continue
        fixed.append((i, chosen))
        fixed_cost = math.fsum([fixed_cost, float(cost[i, chosen])])
        free_cols.remove(chosen)
    return fixed


def solve_assignment(cost: np.ndarray, max_exhaustive: int = 6) -> Pairs:
    cost = np.asarray(cost, dtype=float)
    if max(cost.shape, default=0) <= max_exhaustive:
        return solve_exhaustive(cost)
    return solve_hungarian(cost)
