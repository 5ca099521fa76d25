"""Minimum-cost perfect matching (Hungarian method) with deterministic ties."""
from __future__ import annotations

import numpy as np


def _shortest_augmenting_path(C):
    """Kuhn-Munkres with row/column potentials; O(n^3).

    Returns ``(row_to_col, u, v)`` where ``C[i, j] - u[i] - v[j] >= 0`` with
    equality on the matched edges.
    """
    n = C.shape[0]
    inf = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=int)  # p[j]: row (1-based) matched to column j
    way = np.zeros(n + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    row_to_col = np.empty(n, dtype=int)
    row_to_col[p[1:] - 1] = np.arange(n)
    return row_to_col, u[1:], v[1:]


def _lexicographic_tight_matching(tight, match):
    """Lexicographically smallest perfect matching inside a bipartite graph.

    ``tight`` is a boolean (n, n) adjacency matrix that contains the perfect
    matching ``match`` (row -> column).
    """
    n = match.size
    match = match.copy()
    owner = np.empty(n, dtype=int)
    owner[match] = np.arange(n)
    for i in range(n):
        for j in np.flatnonzero(tight[i]):
            if j >= match[i]:
                break
            r = owner[j]
            if r < i:
                continue
            target = match[i]
            # alternating search: re-seat row r using rows > i only
            parent = {r: None}
            queue = [r]
            found = None
            while queue and found is None:
                row = queue.pop(0)
                for c in np.flatnonzero(tight[row]):
                    if c == j:
                        continue
                    if c == target:
                        found = (row, c)
                        break
                    nxt = owner[c]
                    if nxt <= i or nxt in parent:
                        continue
                    parent[nxt] = (row, c)
                    queue.append(nxt)
            if found is None:
                continue
            row, c = found
            while row is not None:
                match[row] = c
                owner[c] = row
                step = parent[row]
                row, c = (None, None) if step is None else step
            match[i] = j
            owner[j] = i
            break
    return match


def min_cost_assignment(cost, tie_tol=1e-12):
    """Solve the square assignment problem ``min sum_i cost[i, perm[i]]``.

    Among optimal assignments (edge reduced costs within ``tie_tol``
    relative to the cost scale) the lexicographically smallest permutation
    is returned.

    Returns
    -------
    perm : (n,) int array
        Column assigned to each row.
    total : float
        ``sum(cost[i, perm[i]])``.
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError("cost matrix must be square")
    n = C.shape[0]
    if n == 0:
        return np.zeros(0, dtype=int), 0.0
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")
    perm, u, v = _shortest_augmenting_path(C)
    scale = max(1.0, float(np.max(np.abs(C))))
    reduced = C - u[:, None] - v[None, :]
    tight = reduced <= tie_tol * scale
    tight[np.arange(n), perm] = True
    if np.count_nonzero(tight) > n:
        best = C[np.arange(n), perm].sum()
        alt = _lexicographic_tight_matching(tight, perm)
        if C[np.arange(n), alt].sum() <= best + n * tie_tol * scale:
            perm = alt
    return perm, float(C[np.arange(n), perm].sum())


def _exchange_cycles(C, perm):
    """Per-row cost increase of the cheapest alternative assignment that
    moves that row, relative to ``perm``."""
    n = C.shape[0]
    p, u, v = _shortest_augmenting_path(C)
    if perm is None:
        perm = p
    reduced = np.maximum(C - u[:, None] - v[None, :], 0.0)
    # W[a, b]: row a takes the column currently held by row b
    W = reduced[:, perm].copy()
    np.fill_diagonal(W, np.inf)
    D = W
    for m in range(n):
        D = np.minimum(D, D[:, m, None] + D[None, m, :])
    best = C[np.arange(n), p].sum()
    return np.diag(D) + best - C[np.arange(n), perm].sum()


def second_best_gap(cost, perm=None):
    """Cost difference between the best and the second-best assignment.

    The second-best perfect matching differs from the optimum by one
    alternating cycle, so the gap is the minimum-weight directed cycle in
    the reduced-cost exchange graph (Floyd-Warshall, O(n^3)).
    """
    C = np.asarray(cost, dtype=float)
    if C.shape[0] < 2:
        return np.inf
    return float(np.min(_exchange_cycles(C, perm)))


def row_tie_gaps(cost, perm=None):
    """For every row, the gap to the best assignment that changes its column.

    A small value means the row's match is ambiguous; rows of a cost matrix
    with a zero-cost swap (repeated eigenvalues) both get a zero gap while
    the other rows keep their own gaps.
    """
    C = np.asarray(cost, dtype=float)
    if C.shape[0] < 2:
        return np.full(C.shape[0], np.inf)
    return _exchange_cycles(C, perm)
