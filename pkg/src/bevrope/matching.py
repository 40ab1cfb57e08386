"""Optimal bipartite matching for set prediction.

Rectangular Hungarian solver (potentials + shortest augmenting paths), with
a refinement pass that returns the lexicographically smallest (row, col)
pairing among all minimum-cost assignments. The refinement leans on
complementary slackness: an edge can appear in an optimal assignment only if
its reduced cost is zero, so in the generic no-tie case the refinement costs
nothing beyond the master solve.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from bevrope.numerics import ConfigurationError, Matrix


@dataclass
class MatchResult:
    pairs: List[Tuple[int, int]]  # (prediction index, gt index), row-ascending
    unmatched_predictions: List[int] = field(default_factory=list)
    unmatched_gts: List[int] = field(default_factory=list)
    total_cost: float = 0.0


def _solve(cost: np.ndarray):
    """Min-cost assignment matching every row of an n x m matrix, n <= m.

    Returns (total, col_of_row, u, v) with potentials satisfying
    cost[i,j] - u[i] - v[j] >= 0 everywhere, equality on matched edges,
    and v[j] = 0 on unmatched columns.
    """
    n, m = cost.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.intp)  # p[j] = row matched to col j (1-based)
    way = np.zeros(m + 1, dtype=np.intp)

    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            fresh = ~used[1:] & (cur < minv[1:])
            minv[1:][fresh] = cur[fresh]
            way[1:][fresh] = j0
            masked = np.where(used[1:], np.inf, minv[1:])
            j0 = int(np.argmin(masked)) + 1
            delta = masked[j0 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1

    col_of_row = np.full(n, -1, dtype=np.intp)
    for j in range(1, m + 1):
        if p[j]:
            col_of_row[p[j] - 1] = j - 1
    total = float(cost[np.arange(n), col_of_row].sum())
    return total, col_of_row, u[1:], v[1:]


def _solve_any(cost: np.ndarray):
    """Min-cost assignment of size min(n, m) in either orientation.

    Returns (total, pairs row-ascending, row_potentials, col_potentials).
    """
    n, m = cost.shape
    if n == 0 or m == 0:
        return 0.0, [], np.zeros(n), np.zeros(m)
    if n <= m:
        total, col_of_row, u, v = _solve(cost)
        pairs = [(r, int(col_of_row[r])) for r in range(n)]
        return total, pairs, u, v
    total, row_of_col, u, v = _solve(np.ascontiguousarray(cost.T))
    pairs = sorted((int(row_of_col[c]), c) for c in range(m))
    return total, pairs, v, u


def _lex_min_pairs(cost: np.ndarray) -> list[tuple[int, int]]:
    """Lexicographically smallest (row, col) pairing among optimal assignments.

    Walks rows in order keeping an optimal completion; a cheaper-ordered column
    is accepted only when an exact sub-solve confirms the total is preserved.
    """
    n, m = cost.shape
    total, pairs, row_pot, col_pot = _solve_any(cost)
    tol = 1e-9 * max(1.0, float(np.abs(cost).max()) * min(n, m))

    completion = dict(pairs)
    rpot = dict(enumerate(row_pot))
    cpot = dict(enumerate(col_pot))
    fixed: list[tuple[int, int]] = []
    free_cols = list(range(m))
    remaining = total
    need = min(n, m)

    for r in range(n):
        if len(fixed) == need:
            break
        a_r = completion.get(r)
        chosen = None
        for c in free_cols:
            if c == a_r:
                chosen = c  # current completion already witnesses optimality
                break
            if cost[r, c] - rpot[r] - cpot[c] > tol:
                continue
            rest_cols = [cc for cc in free_cols if cc != c]
            sub = cost[r + 1:, rest_cols]
            sub_total, sub_pairs, sub_rpot, sub_cpot = _solve_any(sub)
            if cost[r, c] + sub_total <= remaining + tol:
                chosen = c
                completion = {r + 1 + rr: rest_cols[cc] for rr, cc in sub_pairs}
                rpot = {r + 1 + rr: sub_rpot[rr] for rr in range(sub.shape[0])}
                cpot = {rest_cols[cc]: sub_cpot[cc] for cc in range(len(rest_cols))}
                remaining = cost[r, c] + sub_total
                break
        if chosen is None:
            continue  # row r is unmatched in every optimal extension
        fixed.append((r, chosen))
        free_cols.remove(chosen)
        remaining -= cost[r, chosen]
        completion.pop(r, None)
    if len(fixed) < need:  # tolerance misjudgment; keep the master optimum
        return pairs
    return fixed


def hungarian_match(cost) -> MatchResult:
    """Assignment minimizing total cost; |pairs| = min(n_pred, n_gt).

    Ties between equal-cost optima break toward the lowest (row, col) pairs.
    """
    c = cost.data if isinstance(cost, Matrix) else np.asarray(cost, dtype=np.float64)
    if c.ndim != 2:
        raise ConfigurationError(f"cost must be 2-D, got shape {c.shape}")
    if np.isnan(c).any():
        raise ConfigurationError("cost matrix contains NaN")
    if c.size and not np.isfinite(c).all():
        raise ConfigurationError("cost matrix must be finite")
    n_pred, n_gt = c.shape
    if n_pred == 0 or n_gt == 0:
        return MatchResult([], list(range(n_pred)), list(range(n_gt)), 0.0)

    pairs = _lex_min_pairs(c)
    matched_p = {p for p, _ in pairs}
    matched_g = {g for _, g in pairs}
    total = float(c[[p for p, _ in pairs], [g for _, g in pairs]].sum()) \
        if pairs else 0.0
    return MatchResult(
        pairs,
        [p for p in range(n_pred) if p not in matched_p],
        [g for g in range(n_gt) if g not in matched_g],
        total,
    )
