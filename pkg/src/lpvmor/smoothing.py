"""Eigenvector smoothing across the grid and complex/real repairs.

Eigenvectors returned by a dense eigen-solver are defined only up to a
right factor: a phase for simple eigenvalues, an invertible ``d x d``
matrix for a ``d``-fold eigenvalue.  Consecutive grid points are aligned by
the unconstrained complex Procrustes problem
``min_Q ||V_prev - V_next Q||_F``, whose solution is a linear least-squares
problem in ``vec(Q)``.
"""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .linalg import normalize_phase

log = logging.getLogger(__name__)


class EigenspaceDiscontinuityError(np.linalg.LinAlgError):
    """The Procrustes factor between two grid points is nearly singular."""


class RepairError(ValueError):
    """A complex/real repair would perturb the model beyond the budget."""


Q_COND_MAX = 1e8


def _real_embedding(M):
    return np.block([[M.real, -M.imag], [M.imag, M.real]])


def procrustes_step(V_prev, V_next, cond_max=Q_COND_MAX, where=None):
    """Solve ``min_Q ||V_prev - V_next Q||_F`` over complex ``d x d`` Q.

    The columns of ``Q`` are stacked into one unknown vector, giving
    ``(I_d kron V_next) vec(Q) = vec(V_prev)``; the complex system is solved
    through its real embedding with a pseudo-inverse.

    Raises
    ------
    EigenspaceDiscontinuityError
        If ``cond(Q) > cond_max``.
    """
    V_prev = np.atleast_2d(np.asarray(V_prev, dtype=complex))
    V_next = np.atleast_2d(np.asarray(V_next, dtype=complex))
    if V_prev.shape != V_next.shape:
        raise ValueError("eigenvector blocks must have equal shapes")
    n, d = V_next.shape
    K = np.kron(np.eye(d), V_next)
    rhs = V_prev.reshape(-1, order="F")
    sol = np.linalg.pinv(_real_embedding(K)) @ np.concatenate([rhs.real, rhs.imag])
    q = sol[: d * d] + 1j * sol[d * d:]
    Q = q.reshape(d, d, order="F")
    cond = np.linalg.cond(Q)
    if not np.isfinite(cond) or cond > cond_max:
        at = "" if where is None else f" at transition {where}"
        raise EigenspaceDiscontinuityError(
            f"eigenspace discontinuity{at}: Procrustes factor condition number {cond:.3g}")
    return Q


def procrustes_residual(V_prev, V_next, Q):
    return float(np.linalg.norm(V_prev - V_next @ Q))


def choose_start(matrices):
    """Grid index with the best-conditioned eigenvector matrix (first on ties)."""
    conds = [np.linalg.cond(V) for V in matrices]
    return int(np.argmin(conds))


@dataclass
class SmoothingReport:
    start_index: int = 0
    residuals: dict = field(default_factory=dict)
    trivial_residuals: dict = field(default_factory=dict)
    max_derivative_before: float = float("nan")
    max_derivative_after: float = float("nan")
    mean_derivative_before: float = float("nan")
    mean_derivative_after: float = float("nan")
    repairs: list = field(default_factory=list)
    norm_warnings: list = field(default_factory=list)

    @property
    def improvement(self):
        return self.max_derivative_before / self.max_derivative_after

    def to_dict(self):
        out = asdict(self)
        out["residuals"] = {str(k): list(map(float, v)) for k, v in self.residuals.items()}
        out["trivial_residuals"] = {str(k): list(map(float, v))
                                    for k, v in self.trivial_residuals.items()}
        return out

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


def smooth_sequence(blocks, start, real=False, label=None, report=None):
    """Align a sequence of eigenvector blocks ``blocks[k]`` (n x d).

    Starting from ``start`` the sequence is processed outward in both
    directions; each block is right-multiplied by the Procrustes factor that
    best matches its already-aligned neighbour, so the accumulated factor
    at every point is the product of the stepwise solutions.

    Returns
    -------
    smoothed : (N, n, d) array
    residuals : (N-1,) array
        ``||Vbar_k - V_{k+1} Q||_F`` (forward side) or its mirror (backward
        side) for every transition ``k -> k+1``.
    """
    B = np.asarray(blocks, dtype=float if real else complex)
    N = B.shape[0]
    out = B.copy()
    res = np.zeros(max(N - 1, 0))
    trivial = np.zeros(max(N - 1, 0))
    for k in range(start + 1, N):
        Q = procrustes_step(out[k - 1], B[k], where=(k - 1, k))
        if real:
            Q = Q.real
        out[k] = B[k] @ Q
        res[k - 1] = procrustes_residual(out[k - 1], B[k], Q)
        trivial[k - 1] = np.linalg.norm(out[k - 1] - B[k])
    for k in range(start - 1, -1, -1):
        Q = procrustes_step(out[k + 1], B[k], where=(k, k + 1))
        if real:
            Q = Q.real
        out[k] = B[k] @ Q
        res[k] = procrustes_residual(out[k + 1], B[k], Q)
        trivial[k] = np.linalg.norm(out[k + 1] - B[k])
    if report is not None and label is not None:
        report.residuals[label] = res
        report.trivial_residuals[label] = trivial
        norms = np.linalg.norm(out, axis=1)
        if norms.size and (norms.min() < 0.1 or norms.max() > 10):
            report.norm_warnings.append(
                f"unit {label}: column norms drift to [{norms.min():.3g}, {norms.max():.3g}]")
    return out, res


# --- complex/real repair ------------------------------------------------

def _real_span(V, d):
    """Orthonormal real basis (n x d) of the real-closed span of ``V``."""
    U, _, _ = np.linalg.svd(np.hstack([V.real, V.imag]), full_matrices=False)
    return U[:, :d]


def repair_complex_real(result, groups, model, budget=1e-3, near_constant_tol=1e-6):
    """Remove isolated complex excursions of real multiplicity groups.

    A group is repaired when its members are all real at some grid points
    and complex at others.  At each complex point the group's eigenvalues
    are replaced by their real parts (by the group's trajectory average when
    the group is nearly constant), its eigenvectors by a real orthonormal
    basis of the same invariant subspace, and ``A_k`` by the matching
    low-rank correction.

    Returns
    -------
    result, model : repaired copies (the inputs are returned unchanged if
        nothing needs repair)
    repairs : list of dict
        One entry per repaired grid point with ``group``, ``k`` and
        ``relative_change`` = ``||dA_k|| / ||A_k||``.

    Raises
    ------
    RepairError
        If a correction exceeds ``budget``.
    """
    todo = []
    for gid, g in enumerate(groups):
        if len(g) < 2 or any(i in result.integrators for i in g):
            continue
        cplx = np.any(result.values[:, g].imag != 0, axis=1)
        if cplx.any() and not cplx.all():
            todo.append((gid, g, np.flatnonzero(cplx)))
    if not todo:
        return result, model, []

    result = copy.deepcopy(result)
    A = model.A.copy()
    repairs = []
    for gid, g, points in todo:
        vals = result.values[:, g]
        spread = np.max(np.abs(vals - vals.mean())) / max(1.0, np.abs(vals).max())
        avg = float(vals.real.mean()) if spread <= near_constant_tol else None
        for k in points:
            Vk = result.vectors[k]
            W = np.linalg.inv(Vk)
            P = Vk[:, g] @ W[g, :]
            R = _real_span(Vk[:, g], len(g))
            mu = np.full(len(g), avg) if avg is not None else np.sort(vals[k].real)
            Ak = A[k]
            new_part = R @ np.diag(mu) @ np.linalg.pinv(R) @ P
            dA = (new_part - Ak @ P).real
            rel = float(np.linalg.norm(dA, 2) / max(np.linalg.norm(Ak, 2), 1e-300))
            if rel > budget:
                raise RepairError(
                    f"repair of group {gid} at grid point {k} changes A by "
                    f"{rel:.3g} (budget {budget:.1g}): assumption of constant "
                    "eigenvalue character is violated")
            A[k] = Ak + dA
            result.values[k, g] = mu
            Rn = normalize_phase(R.astype(complex)).real.astype(complex)
            result.vectors[k][:, g] = Rn
            repairs.append({"group": gid, "members": list(map(int, g)), "k": int(k),
                            "relative_change": rel,
                            "max_abs_imag": float(np.max(np.abs(vals[k].imag)))})
            log.info("repaired group %d at k=%d (relative change %.3g)", gid, k, rel)
        for i in g:
            t = result.trajectories[i]
            t.values = result.values[:, i].copy()
            t.vectors = result.vectors[:, :, i].copy()
            t.partner = None
    return result, model.replace(A=A), repairs
