"""Optimal 2D assignment and Murty k-best enumeration.

Cost matrices are rows-by-columns with +inf marking forbidden pairs. A
complete assignment maps every row to a distinct column, so feasibility
requires rows <= columns; callers handle miss/birth/clutter alternatives by
augmenting the matrix with per-row dummy columns.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment


class AssignmentInfeasibleError(Exception):
    """No complete assignment exists under the given forbidden pairs."""


@dataclass(frozen=True)
class Assignment:
    row_to_col: tuple[int, ...]
    total: float


def _validate(cost: np.ndarray) -> np.ndarray:
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValueError(f"cost matrix must be 2-D, got shape {cost.shape}")
    if np.isnan(cost).any():
        raise ValueError("cost matrix contains NaN")
    if np.isneginf(cost).any():
        raise ValueError("cost matrix contains -inf")
    return cost


def _reduce_forced(cost: np.ndarray) -> tuple[np.ndarray, np.ndarray,
                                              np.ndarray, list[tuple[int, int]],
                                              float] | None:
    """Strip rows whose assignment is forced, or None if that is infeasible.

    A row with exactly one admissible column must take it in every complete
    assignment, which also removes that column from every other row. Applying
    this to a fixpoint leaves a subproblem whose complete assignments are in
    bijection with the original ones, shifted by a constant total. Returns
    (reduced cost, kept row indices, kept column indices, forced (row, col)
    pairs, forced total).
    """
    finite = np.isfinite(cost)
    n_rows, n_cols = cost.shape
    row_alive = np.ones(n_rows, dtype=bool)
    col_alive = np.ones(n_cols, dtype=bool)
    degree = finite.sum(axis=1)
    forced: list[tuple[int, int]] = []
    constant = 0.0
    while True:
        if bool(np.any(row_alive & (degree == 0))):
            return None
        ones = np.nonzero(row_alive & (degree == 1))[0]
        if ones.size == 0:
            break
        cols = np.argmax(finite[ones] & col_alive[None, :], axis=1)
        uniq = np.unique(cols)
        if uniq.size != cols.size:
            # Two single-option rows demand the same column.
            return None
        for r, c in zip(ones, cols):
            forced.append((int(r), int(c)))
            constant += float(cost[r, c])
        row_alive[ones] = False
        col_alive[cols] = False
        degree = degree - finite[:, cols].sum(axis=1)
    keep_rows = np.nonzero(row_alive)[0]
    keep_cols = np.nonzero(col_alive)[0]
    reduced = cost[np.ix_(keep_rows, keep_cols)]
    return reduced, keep_rows, keep_cols, forced, constant


def _expand_map(sub_map: np.ndarray, n_rows: int, keep_rows: np.ndarray,
                keep_cols: np.ndarray,
                forced: list[tuple[int, int]]) -> tuple[int, ...]:
    full = np.empty(n_rows, dtype=int)
    for r, c in forced:
        full[r] = c
    if keep_rows.size:
        full[keep_rows] = keep_cols[sub_map]
    return tuple(int(c) for c in full)


def _solve_raw(cost: np.ndarray) -> tuple[float, np.ndarray] | None:
    """Optimal total and one argmin row->col map, or None if infeasible."""
    n_rows, n_cols = cost.shape
    if n_rows == 0:
        return 0.0, np.empty(0, dtype=int)
    if n_rows > n_cols:
        return None
    try:
        rows, cols = linear_sum_assignment(cost)
    except ValueError:
        return None
    chosen = cost[rows, cols]
    if not np.isfinite(chosen).all():
        return None
    row_to_col = np.empty(n_rows, dtype=int)
    row_to_col[rows] = cols
    return float(chosen.sum()), row_to_col


def solve_assignment(cost: np.ndarray) -> Assignment:
    """Minimum-total complete assignment.

    Ties between equal-cost assignments are broken by the lexicographically
    smallest row_to_col map, found by fixing rows in order to the smallest
    column that still attains the optimal total. Forced rows are identical in
    every complete assignment, so reducing them first preserves the order.
    """
    cost = _validate(cost)
    reduction = _reduce_forced(cost)
    if reduction is None:
        raise AssignmentInfeasibleError(
            f"no feasible complete assignment for shape {cost.shape}"
        )
    reduced, keep_rows, keep_cols, forced, constant = reduction
    solved = _solve_raw(reduced)
    if solved is None:
        raise AssignmentInfeasibleError(
            f"no feasible complete assignment for shape {cost.shape}"
        )
    best_total, _ = solved
    n_rows, n_cols = reduced.shape
    tol = 1e-9 * max(1.0, abs(best_total) + abs(constant))

    chosen: list[int] = []
    free_cols = list(range(n_cols))
    remaining = best_total
    sub = reduced
    for _ in range(n_rows):
        picked = None
        for j, col in enumerate(free_cols):
            entry = sub[0, j]
            if not math.isfinite(entry):
                continue
            rest = np.delete(sub[1:], j, axis=1)
            rest_solved = _solve_raw(rest)
            if rest_solved is None:
                continue
            if abs(entry + rest_solved[0] - remaining) <= tol:
                picked = (j, col, entry)
                break
        assert picked is not None, "tie-break search lost the optimal assignment"
        j, col, entry = picked
        chosen.append(col)
        free_cols.pop(j)
        remaining -= entry
        sub = np.delete(sub[1:], j, axis=1)
    full = _expand_map(np.asarray(chosen, dtype=int), cost.shape[0],
                       keep_rows, keep_cols, forced)
    return Assignment(row_to_col=full, total=best_total + constant)


def murty_k_best(cost: np.ndarray, k: int,
                 cache: dict | None = None) -> list[Assignment]:
    """Up to k cheapest complete assignments, totals non-decreasing.

    Murty partitioning: each emitted solution splits its search space into
    subproblems that force a prefix of its pairs and forbid the next one, so
    spaces are disjoint and every assignment appears exactly once. Rows whose
    assignment is already forced by the forbidden-pair structure never branch,
    so they are stripped before enumeration and re-inserted afterwards.

    An optional cache dict memoizes enumeration results keyed by the reduced
    problem, for callers that solve many matrices differing only in forced
    rows. Entries are exact, so any scope (per frame, per batch) is safe.
    """
    cost = _validate(cost)
    if k <= 0:
        return []
    reduction = _reduce_forced(cost)
    if reduction is None:
        raise AssignmentInfeasibleError(
            f"no feasible complete assignment for shape {cost.shape}"
        )
    reduced, keep_rows, keep_cols, forced, constant = reduction
    if reduced.shape[0] == 0:
        # Every row was forced, so exactly one complete assignment exists.
        full = _expand_map(np.empty(0, dtype=int), cost.shape[0],
                           keep_rows, keep_cols, forced)
        return [Assignment(row_to_col=full, total=constant)]
    if reduced.shape[0] == 1:
        # One free row: the k cheapest assignments are its k cheapest columns.
        row = reduced[0]
        finite_cols = np.nonzero(np.isfinite(row))[0]
        if finite_cols.size == 0:
            raise AssignmentInfeasibleError(
                f"no feasible complete assignment for shape {cost.shape}"
            )
        order = finite_cols[np.argsort(row[finite_cols], kind="stable")][:k]
        picks = [
            Assignment(
                row_to_col=_expand_map(np.array([c]), cost.shape[0],
                                       keep_rows, keep_cols, forced),
                total=float(row[c]) + constant,
            )
            for c in order
        ]
        picks.sort(key=lambda a: (a.total, a.row_to_col))
        return picks

    cache_key = None
    raw: list[tuple[tuple[int, ...], float]] | None = None
    if cache is not None:
        cache_key = (reduced.shape[1], k, reduced.tobytes())
        raw = cache.get(cache_key)
    if raw is None:
        raw = _enumerate_k_best(reduced, k, cost.shape)
        if cache is not None:
            cache[cache_key] = raw
    results = [
        Assignment(
            row_to_col=_expand_map(np.asarray(key_map, dtype=int),
                                   cost.shape[0], keep_rows, keep_cols, forced),
            total=total + constant,
        )
        for key_map, total in raw
    ]
    results.sort(key=lambda a: (a.total, a.row_to_col))
    return results


def _enumerate_k_best(reduced: np.ndarray, k: int,
                      shape: tuple[int, int]) -> list[tuple[tuple[int, ...],
                                                            float]]:
    """Murty heap enumeration on a reduced matrix: (row_to_col, total) pairs."""
    base = _solve_raw(reduced)
    if base is None:
        raise AssignmentInfeasibleError(
            f"no feasible complete assignment for shape {shape}"
        )

    counter = 0
    heap: list[tuple[float, int, np.ndarray, np.ndarray]] = []

    def push(matrix: np.ndarray) -> None:
        nonlocal counter
        solved = _solve_raw(matrix)
        if solved is None:
            return
        sub_total, sub_map = solved
        heapq.heappush(heap, (sub_total, counter, sub_map, matrix))
        counter += 1

    push(reduced.copy())
    raw: list[tuple[tuple[int, ...], float]] = []
    seen: set[tuple[int, ...]] = set()
    # Mapping subproblem-local column indices back to original ones is avoided
    # by never deleting columns: forcing a pair sets its row to a one-hot
    # pattern, so forced entries stay inside the matrix total.
    while heap and len(raw) < k:
        total, _, sub_map, matrix = heapq.heappop(heap)
        key_map = tuple(int(c) for c in sub_map)
        if key_map in seen:
            continue
        seen.add(key_map)
        raw.append((key_map, float(total)))

        # Children share the forced prefix incrementally: child i forbids
        # pair i and inherits pairs 0..i-1 collapsed to one-hot rows.
        work = matrix.copy()
        for i, col in enumerate(sub_map):
            entry = work[i, col]
            if not math.isfinite(entry):
                break
            child = work.copy()
            child[i, col] = np.inf
            push(child)
            work[i, :] = np.inf
            work[i, col] = entry
    return raw
