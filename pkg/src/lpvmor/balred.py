"""Parameter-varying balanced truncation of cluster subsystems."""
from __future__ import annotations

import csv
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .assignment import min_cost_assignment
from .linalg import MatrixSpline
from .model import ReducedLpvModel

log = logging.getLogger(__name__)


class BalancingError(np.linalg.LinAlgError):
    """Gramian factorization or balancing failed."""


@dataclass
class BalancingFactors:
    rho_grid: np.ndarray
    R_o: np.ndarray
    R_c: np.ndarray
    U: np.ndarray = None
    S: np.ndarray = None
    V: np.ndarray = None
    warnings: list = field(default_factory=list)

    @property
    def sorted_sigma(self):
        """Singular values in nonincreasing order at every grid point."""
        return -np.sort(-self.S, axis=1)

    @property
    def profile(self):
        """``max_rho sigma_j(rho)`` for every aligned trajectory ``j``."""
        return self.S.max(axis=0)


def factorize(X_o, X_c, rho_grid):
    """Triangular factors ``X_o = R_o^T R_o`` (upper) and ``X_c = R_c R_c^T``
    (lower), positive diagonals."""
    rho = np.asarray(rho_grid, dtype=float)
    Xo = X_o.evaluate(rho)
    Xc = X_c.evaluate(rho)
    R_o = np.empty_like(Xo)
    R_c = np.empty_like(Xc)
    for k in range(rho.size):
        try:
            R_o[k] = np.linalg.cholesky(Xo[k]).T
            R_c[k] = np.linalg.cholesky(Xc[k])
        except np.linalg.LinAlgError as exc:
            raise BalancingError(f"Gramian not positive definite at grid point {k}") from exc
    return BalancingFactors(rho, R_o, R_c)


def smooth_svd(products, gap_tol=1e-12):
    """Per-point SVDs aligned along the grid.

    Columns at ``k + 1`` are permuted to maximize ``sum |u_i(k)^T u_j(k+1)|``
    and their signs chosen so that consecutive left singular vectors have
    nonnegative inner products; ``U_k S_k V_k^T`` reproduces every product.

    Returns
    -------
    U, S, V : (N, n, n), (N, n), (N, n, n) arrays
    notes : list of str
    """
    P = np.asarray(products, dtype=float)
    N, n, _ = P.shape
    U = np.empty_like(P)
    V = np.empty_like(P)
    S = np.empty((N, n))
    notes = []
    for k in range(N):
        u, s, vt = np.linalg.svd(P[k])
        if n > 1 and np.min(np.abs(np.diff(s))) < gap_tol * max(s[0], 1e-300):
            notes.append(f"near-degenerate singular values at grid point {k}; alignment arbitrary")
        if k > 0:
            M = np.abs(U[k - 1].T @ u)
            perm, _ = min_cost_assignment(1.0 - M)
            u, s, vt = u[:, perm], s[perm], vt[perm]
            sign = np.sign(np.sum(U[k - 1] * u, axis=0))
            sign[sign == 0] = 1.0
            u = u * sign
            vt = vt * sign[:, None]
        U[k], S[k], V[k] = u, s, vt.T
    for msg in notes:
        log.warning(msg)
    return U, S, V, notes


def align(factors):
    """Fill ``U, S, V`` of the factors from ``R_o R_c``."""
    U, S, V, notes = smooth_svd(factors.R_o @ factors.R_c)
    factors.U, factors.S, factors.V = U, S, V
    factors.warnings.extend(notes)
    return factors


@dataclass
class OrderSelection:
    kept: np.ndarray
    profile: np.ndarray
    rule: str
    mode: str = "truncate"

    @property
    def order(self):
        return int(self.kept.size)


def select_order(factors, eta=1e-2, order=None, mode="truncate", min_reducible=3,
                 reference=None):
    """Choose the retained aligned singular-value trajectories.

    Keeps ``j`` with ``max_rho sigma_j > eta * reference``, or the ``order``
    largest profiles when given.  ``reference`` defaults to the subsystem's
    own largest profile; pass the largest value over all clusters of a model
    to rank states model-wide.  Subsystems with fewer than ``min_reducible``
    states are kept whole.
    """
    prof = factors.profile
    ref = float(prof.max()) if reference is None and prof.size else reference
    n = prof.size
    ranked = np.argsort(-prof, kind="stable")
    if n < min_reducible:
        kept, rule = np.arange(n), "exempt"
    elif order is not None:
        kept, rule = np.sort(ranked[:max(0, min(int(order), n))]), f"order={order}"
    else:
        kept = np.sort(np.flatnonzero(prof > eta * ref)) if n else np.arange(0)
        rule = f"eta={eta:g}"
    return OrderSelection(kept, prof, rule, mode)


@dataclass
class ReducedSubsystem:
    A_vertex: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    kept: np.ndarray
    mode: str
    balancing_error: float
    notes: list = field(default_factory=list)

    @property
    def n(self):
        return self.A_vertex.shape[2]


def balancing_transforms(factors):
    """``T_k = R_c V S^{-1/2}`` and ``T_k^{-1} = S^{-1/2} U^T R_o``."""
    s = factors.S
    if np.any(s <= 0):
        raise BalancingError("zero Hankel singular value; choose a smaller order")
    isq = 1.0 / np.sqrt(s)
    T = factors.R_c @ factors.V * isq[:, None, :]
    Ti = isq[:, :, None] * (np.swapaxes(factors.U, -1, -2) @ factors.R_o)
    return T, Ti


def balance_and_truncate(sub, factors, selection, X_o=None, X_c=None):
    """Balance a cluster subsystem and keep the selected states.

    The vertex matrices are ``T^{-1}(A + E_s)T - T^{-1} dT/drho nu_s`` with
    ``dT/drho`` from a cubic spline through the balancing transforms.
    Residualization eliminates the discarded states statically; its input
    and output matrices use the zero-rate vertex average.
    """
    s = factors.S
    kept = np.asarray(selection.kept, dtype=int)
    n = s.shape[1]
    if kept.size and np.min(s[:, kept]) < 1e-12 * np.max(s):
        raise BalancingError("kept Hankel singular value is numerically zero; "
                             "choose a smaller order")
    T, Ti = balancing_transforms(factors)
    err = 0.0
    if X_o is not None and X_c is not None:
        Xo = X_o.evaluate(factors.rho_grid)
        Xc = X_c.evaluate(factors.rho_grid)
        for k in range(T.shape[0]):
            Sk = np.diag(s[k])
            e1 = np.linalg.norm(T[k].T @ Xo[k] @ T[k] - Sk) / np.linalg.norm(Sk)
            e2 = np.linalg.norm(Ti[k] @ Xc[k] @ Ti[k].T - Sk) / np.linalg.norm(Sk)
            err = max(err, e1, e2)
    dT = MatrixSpline(factors.rho_grid, T).derivative(factors.rho_grid)
    nu = np.array([-sub.rate_bound, sub.rate_bound])
    Av = sub.A[:, None] + sub.E
    Ab = Ti[:, None] @ Av @ T[:, None] - (Ti @ dT)[:, None] * nu[None, :, None, None]
    Bb = Ti @ sub.B
    Cb = sub.C @ T
    rest = np.setdiff1d(np.arange(n), kept)
    notes = []
    mode = selection.mode
    ix = np.ix_(kept, kept)
    if mode == "residualize" and rest.size:
        A0 = 0.5 * (Ab[:, 0] + Ab[:, 1])
        A22 = A0[:, rest][:, :, rest]
        if max(np.linalg.cond(M) for M in A22) > 1e12:
            notes.append("residualization block singular; truncated instead")
            warnings.warn(notes[-1])
            mode = "truncate"
    if mode == "residualize" and rest.size:
        Ar = np.empty((Ab.shape[0], 2, kept.size, kept.size))
        for k in range(Ab.shape[0]):
            for v in range(2):
                M = Ab[k, v]
                Ar[k, v] = M[ix] - M[np.ix_(kept, rest)] @ np.linalg.solve(
                    M[np.ix_(rest, rest)], M[np.ix_(rest, kept)])
        A0 = 0.5 * (Ab[:, 0] + Ab[:, 1])
        Br = np.empty((Ab.shape[0], kept.size, Bb.shape[2]))
        Cr = np.empty((Ab.shape[0], Cb.shape[1], kept.size))
        Dr = np.empty_like(sub.D)
        for k in range(Ab.shape[0]):
            M = A0[k]
            A22 = M[np.ix_(rest, rest)]
            X = np.linalg.solve(A22, np.hstack([M[np.ix_(rest, kept)], Bb[k][rest]]))
            Br[k] = Bb[k][kept] - M[np.ix_(kept, rest)] @ X[:, kept.size:]
            Cr[k] = Cb[k][:, kept] - Cb[k][:, rest] @ X[:, :kept.size]
            Dr[k] = sub.D[k] - Cb[k][:, rest] @ X[:, kept.size:]
        return ReducedSubsystem(Ar, Br, Cr, Dr, kept, mode, err, notes)
    Ar = Ab[:, :, ix[0], ix[1]]
    return ReducedSubsystem(Ar, Bb[:, kept, :], Cb[:, :, kept], sub.D.copy(), kept, "truncate",
                            err, notes)


def reassemble(rho_grid, rate_bound, parts, D, meta=None):
    """Block-concatenate reduced parts into one reduced model.

    ``parts`` is a list of ``(A_vertex, B, C)`` with shapes (N, 2, r, r),
    (N, r, n_u), (N, n_y, r); ``D`` is the (N, n_y, n_u) feedthrough, which
    collects any residualization corrections.
    """
    N = len(rho_grid)
    sizes = [p[0].shape[2] for p in parts]
    n = int(sum(sizes))
    n_u, n_y = D.shape[2], D.shape[1]
    Av = np.zeros((N, 2, n, n))
    B = np.zeros((N, n, n_u))
    C = np.zeros((N, n_y, n))
    off = 0
    for (A_p, B_p, C_p), r in zip(parts, sizes):
        if A_p.shape != (N, 2, r, r) or B_p.shape != (N, r, n_u) or C_p.shape != (N, n_y, r):
            raise AssertionError("reduced part has inconsistent dimensions")
        Av[:, :, off:off + r, off:off + r] = A_p
        B[:, off:off + r] = B_p
        C[:, :, off:off + r] = C_p
        off += r
    return ReducedLpvModel(np.asarray(rho_grid), Av, B, C, D, rate_bound, dict(meta or {}))


def export_singular_values(path, factors):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["j", "k", "rho", "sigma"])
        for j in range(factors.S.shape[1]):
            for k, r in enumerate(factors.rho_grid):
                w.writerow([j, k, repr(float(r)), repr(float(factors.S[k, j]))])
