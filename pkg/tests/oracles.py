"""Independent reference implementations used as test oracles.

Each oracle follows the textbook definition directly and shares no code
with the package.
"""
from __future__ import annotations

import itertools

import numpy as np
import scipy.linalg as sl

from lpvmor import benchmark


def brute_force_assignment(C):
    """Minimum cost over all permutations; returns (cost, list of optimal perms)."""
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    best, perms = np.inf, []
    for p in itertools.permutations(range(n)):
        c = float(sum(C[i, p[i]] for i in range(n)))
        if c < best:
            best, perms = c, [p]
        elif c == best:
            perms.append(p)
    return best, perms


def permutation_costs(C):
    """Costs of every permutation of a square matrix, vectorized.

    Returns ``(P, totals)`` with one permutation per row of ``P``.
    """
    C = np.asarray(C, dtype=float)
    n = C.shape[0]
    P = np.array(list(itertools.permutations(range(n))), dtype=int).reshape(-1, n)
    return P, C[np.arange(n)[None, :], P].sum(axis=1)


def naive_complete_link(H):
    """O(n^3) complete linkage on a dense linkage table indexed by cluster id.

    The pair with the smallest linkage merges; ties go to the smallest
    ``(a, b)`` id pair with ``a < b``.  Returns the merge list
    ``[(a, b, height, new_id), ...]``.
    """
    H = np.asarray(H, dtype=float)
    n = H.shape[0]
    size = 2 * n - 1
    L = np.full((size, size), np.inf)
    L[:n, :n] = H
    np.fill_diagonal(L, np.inf)
    active = np.zeros(size, dtype=bool)
    active[:n] = True
    merges = []
    for step in range(n - 1):
        M = np.where(active[:, None] & active[None, :], L, np.inf)
        M = np.triu(M, 1) + np.tril(np.full_like(M, np.inf))
        h = M.min()
        a, b = (int(x) for x in np.argwhere(M == h)[0])
        c = n + step
        row = np.maximum(L[a], L[b])
        L[c, :] = row
        L[:, c] = row
        L[c, c] = np.inf
        active[[a, b]] = False
        active[c] = True
        merges.append((a, b, float(h), c))
    return merges


def cophenetic_double_loop(merges, n, H):
    """Pearson correlation of input and merge-height distances, by loops."""
    members = {i: {i} for i in range(n)}
    coph = np.zeros((n, n))
    for a, b, h, c in merges:
        for i in members[a]:
            for j in members[b]:
                coph[i, j] = coph[j, i] = h
        members[c] = members.pop(a) | members.pop(b)
    xs, ys = [], []
    for i in range(n):
        for j in range(i + 1, n):
            xs.append(H[i][j])
            ys.append(coph[i, j])
    mx, my = sum(xs) / len(xs), sum(ys) / len(ys)
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / np.sqrt(sxx * syy)


def kron_lyapunov(A, Q):
    """Solve ``A^T X + X A + Q = 0`` through the Kronecker-product system."""
    n = A.shape[0]
    K = np.kron(np.eye(n), A.T) + np.kron(A.T, np.eye(n))
    x = np.linalg.solve(K, -Q.reshape(-1, order="F"))
    X = x.reshape(n, n, order="F")
    return 0.5 * (X + X.T)


def hankel_singular_values(A, B, C):
    """Classical LTI Hankel singular values (descending)."""
    Wc = sl.solve_continuous_lyapunov(A, -B @ B.T)
    Wo = sl.solve_continuous_lyapunov(A.T, -C.T @ C)
    ev = np.linalg.eigvals(Wc @ Wo)
    return np.sort(np.sqrt(np.abs(ev.real)))[::-1]


def partial_fraction_response(A, B, C, D, omega):
    """Frequency response from the eigen-decomposition of A."""
    lam, V = np.linalg.eig(A)
    Bm = np.linalg.solve(V, B)
    Cm = C @ V
    out = []
    for w in np.atleast_1d(omega):
        out.append(sum(np.outer(Cm[:, i], Bm[i]) / (1j * w - lam[i])
                       for i in range(lam.size)) + D)
    return np.array(out)


def expm_step_response(A, B, C, D, x0, u, t):
    """Exact output at time ``t`` for a constant input ``u`` via an augmented
    matrix exponential."""
    n, m = B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = A
    M[:n, n:] = B
    E = sl.expm(M * t)
    x = E[:n, :n] @ x0 + E[:n, n:] @ u
    return C @ x + D @ u


def random_stable(rng, n, max_abs=10.0, min_abs=0.5, complex_pairs=None):
    """Random diagonalizable Hurwitz matrix with eigenvalue moduli in
    ``[min_abs, max_abs]``."""
    if complex_pairs is None:
        complex_pairs = n // 4
    J = np.zeros((n, n))
    i = 0
    for _ in range(complex_pairs):
        r = rng.uniform(min_abs, max_abs)
        th = rng.uniform(0.2, 1.3)
        a, b = r * np.cos(th), r * np.sin(th)
        J[i:i + 2, i:i + 2] = [[-a, b], [-b, -a]]
        i += 2
    while i < n:
        J[i, i] = -rng.uniform(min_abs, max_abs)
        i += 1
    T = rng.standard_normal((n, n)) + 2 * np.eye(n)
    return T @ J @ np.linalg.inv(T)


SIZE_PER_ITEM = {"pv_real": 1, "pv_complex": 2, "constant_real": 1, "constant_complex": 2,
                 "repeated_real": 2, "repeated_complex": 4, "integrator": 1, "mixed_real": 1,
                 "mixed_complex": 2, "transition": 2}


def small_spec(n, seed, **overrides):
    """Benchmark composition scaled to ``n`` states (20 <= n), filled up
    with parameter-varying real modes."""
    counts = {"pv_real": 0, "pv_complex": 3, "constant_real": 2, "constant_complex": 1,
              "repeated_real": 1, "repeated_complex": 0, "integrator": 1, "mixed_real": 1,
              "mixed_complex": 0, "transition": 0}
    if n >= 28:
        counts.update(repeated_complex=1, transition=1, mixed_complex=1, pv_complex=4)
    counts["pv_real"] = n - sum(SIZE_PER_ITEM[f] * c for f, c in counts.items())
    return benchmark.BenchmarkSpec(n_x=n, counts=counts, seed=seed, **overrides)


def truth_labels(values, truth_values):
    """Ground-truth trajectory index of every computed eigenvalue, per grid
    point, by minimum-distance assignment (SciPy's solver)."""
    from scipy.optimize import linear_sum_assignment

    N, n = values.shape
    lab = np.empty((N, n), dtype=int)
    for k in range(N):
        C = np.abs(values[k][:, None] - truth_values[k][None, :])
        r, c = linear_sum_assignment(C)
        lab[k, r] = c
    return lab
