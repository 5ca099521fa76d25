"""Eigenvalue trajectory tracking across the scheduling grid.

Eigenvalues at consecutive grid points are paired by a minimum-cost perfect
matching whose costs measure dynamic similarity: each continuous eigenvalue
is sampled with a short time step, unstable samples are reflected into the
unit disk, and disk points are compared with the pseudo-hyperbolic
distance, optionally weighted by eigenvector misalignment (one minus the
modal assurance criterion).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .assignment import min_cost_assignment, row_tie_gaps, second_best_gap
from .linalg import NearDefectiveError, eig_decompose


class TrackingError(ValueError):
    """Raised when an eigenvalue violates the tracking preconditions."""


@dataclass(frozen=True)
class TrackingConfig:
    sampling_time: Union[float, str] = "auto"
    mac_weighting: bool = True
    tol_int: float = 1e-8
    multiplicity_threshold: float = 1e-4
    stability_tol: float = 1e-9
    cluster_mac_weighting: bool = False

    def __post_init__(self):
        if self.sampling_time != "auto":
            if not float(self.sampling_time) > 0:
                raise ValueError("sampling_time must be positive or 'auto'")


@dataclass
class EigenGrid:
    """Per-grid-point eigenvalues ``values[k]`` and unit eigenvectors
    ``vectors[k][:, i]``.  Ordering at each point is arbitrary."""

    rho_grid: np.ndarray
    values: np.ndarray
    vectors: np.ndarray

    @property
    def N(self):
        return self.values.shape[0]

    @property
    def n(self):
        return self.values.shape[1]


@dataclass
class ModeTrajectory:
    index: int
    values: np.ndarray
    vectors: np.ndarray
    stability: str
    integrator: bool = False
    partner: Optional[int] = None
    group: Optional[int] = None

    @property
    def is_complex(self):
        return bool(np.all(self.values.imag != 0))

    @property
    def is_real(self):
        return bool(np.all(self.values.imag == 0))


@dataclass
class TrackingResult:
    """Consistently ordered trajectories.

    ``values[k, i]`` / ``vectors[k, :, i]`` belong to trajectory ``i``;
    ``permutations[k]`` maps the eigen-solver order at ``k + 1`` onto the
    trajectory order.
    """

    rho_grid: np.ndarray
    values: np.ndarray
    vectors: np.ndarray
    sampling_time: float
    trajectories: list
    permutations: list = field(default_factory=list)
    transition_costs: list = field(default_factory=list)
    integrators: tuple = ()

    @property
    def n(self):
        return self.values.shape[1]

    def labels(self):
        return [t.stability for t in self.trajectories]

    def census(self):
        out = {"stable": 0, "unstable": 0, "mixed": 0, "integrator": 0}
        for t in self.trajectories:
            out["integrator" if t.integrator else t.stability] += 1
        return out


# --- grid eigen-decomposition --------------------------------------------

def decompose_grid(model, cond_max=1e12):
    """Eigen-decompose every ``A_k`` of a grid model."""
    N, n = model.N, model.n_x
    values = np.empty((N, n), dtype=complex)
    vectors = np.empty((N, n, n), dtype=complex)
    for k in range(N):
        try:
            values[k], vectors[k] = eig_decompose(model.A[k], cond_max=cond_max)
        except NearDefectiveError as exc:
            raise NearDefectiveError(f"grid point {k} (rho={model.rho_grid[k]:.6g}): {exc}") from exc
    return EigenGrid(model.rho_grid.copy(), values, vectors)


# --- distances ------------------------------------------------------------

def auto_sampling_time(values, tol_int=0.0):
    mags = np.abs(np.asarray(values))
    mags = mags[mags > tol_int]
    top = float(mags.max()) if mags.size else 0.0
    return 0.01 if top == 0 else min(0.01, 0.5 / top)


def resolve_sampling_time(values, config):
    if config.sampling_time == "auto":
        return auto_sampling_time(values, config.tol_int)
    return float(config.sampling_time)


def to_disk(lam, Ts):
    """Map continuous eigenvalues into the open unit disk.

    Stable eigenvalues are sampled, ``exp(lam * Ts)``; unstable samples are
    reflected across the unit circle, ``z -> 1 / conj(z)``.
    """
    lam = np.asarray(lam, dtype=complex)
    if np.any(np.abs(lam.imag) * Ts >= np.pi):
        raise TrackingError(
            f"aliasing: |Im(lambda)| * Ts >= pi for Ts={Ts:.3g}; use a smaller sampling time")
    z = np.exp(lam * Ts)
    mag = np.abs(z)
    if np.any(np.abs(mag - 1.0) <= 1e-12):
        bad = lam.ravel()[np.argmin(np.abs(mag - 1.0).ravel())]
        raise TrackingError(f"imaginary-axis eigenvalue {bad:.6g} cannot be mapped into the disk")
    out = np.where(lam.real > 0, 1.0 / np.conj(z), z)
    return out if out.ndim else complex(out)


def hyperbolic_distance(z1, z2):
    """Pseudo-hyperbolic distance ``|z1 - z2| / |1 - conj(z1) z2|``."""
    z1 = np.asarray(z1, dtype=complex)
    z2 = np.asarray(z2, dtype=complex)
    if np.any(np.abs(z1) >= 1) or np.any(np.abs(z2) >= 1):
        raise TrackingError("hyperbolic distance needs points inside the unit disk")
    out = np.abs(z1 - z2) / np.abs(1.0 - np.conj(z1) * z2)
    return out if out.ndim else float(out)


def weighted_distance(lam1, v1, lam2, v2, config=None, Ts=None):
    """Hyperbolic distance of two eigenvalues times ``1 - |v1^H v2|``."""
    config = config or TrackingConfig()
    if Ts is None:
        Ts = resolve_sampling_time([lam1, lam2], config)
    h = hyperbolic_distance(to_disk(lam1, Ts), to_disk(lam2, Ts))
    if not config.mac_weighting:
        return h
    mac = min(1.0, abs(np.vdot(v1, v2)))
    return h * (1.0 - mac)


def cost_matrix(z_prev, V_prev, z_next, V_next, mac_weighting=True):
    """Pairwise matching costs between two grid points (disk-mapped values)."""
    H = np.abs(z_prev[:, None] - z_next[None, :]) / np.abs(
        1.0 - np.conj(z_prev)[:, None] * z_next[None, :])
    if mac_weighting:
        mac = np.minimum(np.abs(V_prev.conj().T @ V_next), 1.0)
        H = H * (1.0 - mac)
    return H


# --- integrators ----------------------------------------------------------

def detect_integrators(eigengrid, tol_int=1e-8):
    """Per-grid-point indices of eigenvalues with ``|lambda| <= tol_int``.

    Returns an (N, m) integer array; row ``k`` lists the integrator indices
    at grid point ``k`` in ascending order.  The count ``m`` must be the same
    at every grid point.
    """
    small = np.abs(eigengrid.values) <= tol_int
    counts = small.sum(axis=1)
    if np.any(counts != counts[0]):
        k = int(np.flatnonzero(counts != counts[0])[0])
        raise TrackingError(
            f"number of near-zero eigenvalues changes at grid point {k}; "
            "an eigenvalue touches the imaginary axis on the grid")
    m = int(counts[0])
    return np.array([np.flatnonzero(row) for row in small], dtype=int).reshape(eigengrid.N, m)


# --- matching -------------------------------------------------------------

def _stability(values, tol):
    re = values.real
    if np.all(re < -tol):
        return "stable"
    if np.all(re > tol):
        return "unstable"
    return "mixed"


def match_grid(eigengrid, config=None):
    """Assemble consistently ordered eigenvalue trajectories.

    The eigen-solver ordering at the first grid point is the reference;
    each following point is paired with its predecessor by a minimum-cost
    perfect matching.  Integrators are excluded from the matching and
    paired in index order.
    """
    config = config or TrackingConfig()
    N, n = eigengrid.N, eigengrid.n
    integ = detect_integrators(eigengrid, config.tol_int)
    nonint_vals = np.concatenate([np.delete(eigengrid.values[k], integ[k])
                                  for k in range(N)]) if n else np.zeros(0)
    Ts = resolve_sampling_time(nonint_vals, config)

    values = np.empty((N, n), dtype=complex)
    vectors = np.empty((N, n, n), dtype=complex)
    order = np.arange(n)
    values[0] = eigengrid.values[0]
    vectors[0] = eigengrid.vectors[0]
    integ_traj = integ[0].copy()
    moving = np.setdiff1d(np.arange(n), integ_traj)
    permutations, costs = [np.arange(n)], []
    for k in range(N - 1):
        nxt_moving = np.setdiff1d(np.arange(n), integ[k + 1])
        zp = to_disk(values[k, moving], Ts)
        zn = to_disk(eigengrid.values[k + 1, nxt_moving], Ts)
        C = cost_matrix(zp, vectors[k][:, moving], zn,
                        eigengrid.vectors[k + 1][:, nxt_moving], config.mac_weighting)
        perm, total = min_cost_assignment(C)
        order = np.empty(n, dtype=int)
        order[moving] = nxt_moving[perm]
        order[integ_traj] = integ[k + 1]
        values[k + 1] = eigengrid.values[k + 1, order]
        vectors[k + 1] = eigengrid.vectors[k + 1][:, order]
        permutations.append(order)
        costs.append((total, C))

    trajectories = [
        ModeTrajectory(i, values[:, i].copy(), vectors[:, :, i].copy(),
                       _stability(values[:, i], config.stability_tol),
                       integrator=bool(i in set(integ_traj.tolist())))
        for i in range(n)
    ]
    result = TrackingResult(eigengrid.rho_grid.copy(), values, vectors, Ts,
                            trajectories, permutations,
                            [c[0] for c in costs], tuple(int(i) for i in integ_traj))
    result._cost_matrices = [c[1] for c in costs]
    _link_conjugates(result, config)
    return result


def transition_tie_gaps(result, per_row=False):
    """Gap between the best and second-best matching at every transition.

    With ``per_row`` an (N-1, n) array holds, for each trajectory, the gap
    to the best matching that assigns it differently (inf for integrators).
    """
    mats = getattr(result, "_cost_matrices", [])
    if not per_row:
        return np.array([second_best_gap(C) for C in mats])
    moving = np.setdiff1d(np.arange(result.n), result.integrators)
    out = np.full((len(mats), result.n), np.inf)
    for k, C in enumerate(mats):
        out[k, moving] = row_tie_gaps(C)
    return out


def _link_conjugates(result, config):
    """Pair conjugate trajectories and keep each member on one half-plane."""
    N, n = result.values.shape
    values, vectors = result.values, result.vectors
    for i in range(n):
        result.trajectories[i].partner = None
    done = set()
    for i in range(n):
        if i in done or not np.all(values[:, i].imag != 0):
            continue
        cands = [j for j in range(n) if j != i and j not in done
                 and np.all(values[:, j].imag != 0)]
        best, best_err = None, np.inf
        for j in cands:
            # either member may sit in the upper half-plane at a given point
            errk = np.minimum(np.abs(values[:, j] - np.conj(values[:, i])),
                              np.abs(values[:, i] - np.conj(values[:, j])))
            err = float(np.max(errk))
            if err < best_err:
                best, best_err = j, err
        scale = max(1.0, float(np.max(np.abs(values[:, i]))))
        if best is None or best_err > 1e-9 * scale:
            continue
        j = best
        sign0 = np.sign(values[0, i].imag)
        for k in range(N):
            if np.sign(values[k, i].imag) != sign0:
                values[k, [i, j]] = values[k, [j, i]]
                vectors[k][:, [i, j]] = vectors[k][:, [j, i]]
                result.permutations[k][[i, j]] = result.permutations[k][[j, i]]
        for idx in (i, j):
            t = result.trajectories[idx]
            t.values = values[:, idx].copy()
            t.vectors = vectors[:, :, idx].copy()
            t.stability = _stability(t.values, config.stability_tol)
        result.trajectories[i].partner = j
        result.trajectories[j].partner = i
        done.update((i, j))


# --- trajectory metric and multiplicity ----------------------------------

def trajectory_distance(values_i, values_j, Ts):
    """Worst-case hyperbolic distance between two trajectories, taking the
    closer of ``tau_j`` and its conjugate."""
    zi = to_disk(np.asarray(values_i), Ts)
    zj = to_disk(np.asarray(values_j), Ts)
    direct = np.max(hyperbolic_distance(zi, zj))
    mirrored = np.max(hyperbolic_distance(zi, np.conj(zj)))
    return float(min(direct, mirrored))


def _pairwise(Z, conj_branch=True, V=None):
    """(n, n) trajectory distances for disk-mapped values ``Z`` (N, n).

    With eigenvectors ``V`` (N, n_x, n) every pointwise distance is weighted
    by ``1 - |v_i^H v_j|`` (conjugated vectors on the conjugate branch).
    """
    n = Z.shape[1]
    out = np.zeros((n, n))
    for i in range(n):
        zi = Z[:, i:i + 1]
        h = np.abs(zi - Z) / np.abs(1.0 - np.conj(zi) * Z)
        if V is not None:
            h = h * (1.0 - np.minimum(np.abs(np.einsum("ka,kab->kb", V[:, :, i].conj(), V)), 1.0))
        d = np.max(h, axis=0)
        if conj_branch:
            Zc = np.conj(Z)
            hc = np.abs(zi - Zc) / np.abs(1.0 - np.conj(zi) * Zc)
            if V is not None:
                hc = hc * (1.0 - np.minimum(np.abs(np.einsum("ka,kab->kb", V[:, :, i].conj(),
                                                             V.conj())), 1.0))
            d = np.minimum(d, np.max(hc, axis=0))
        out[i] = d
    out = np.maximum(out, out.T)
    np.fill_diagonal(out, 0.0)
    return out


def distance_matrix(result, indices=None, conj_branch=True, mac_weighting=False):
    """Pairwise trajectory distances for the selected trajectories
    (default: every non-integrator trajectory)."""
    if indices is None:
        indices = [i for i in range(result.n) if i not in set(result.integrators)]
    idx = np.asarray(indices, dtype=int)
    Z = to_disk(result.values[:, idx], result.sampling_time)
    V = result.vectors[:, :, idx] if mac_weighting else None
    return _pairwise(np.atleast_2d(Z), conj_branch, V)


def detect_multiplicity(result, threshold=1e-4):
    """Group trajectories that stay within ``threshold`` of each other.

    The direct branch of the trajectory distance is used so that a
    conjugate pair is never mistaken for a repeated eigenvalue.  Integrators
    form one group.  Returns a list of sorted index lists; every trajectory
    appears in exactly one group, and ``trajectory.group`` is set.
    """
    n = result.n
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    integ = list(result.integrators)
    for a in integ[1:]:
        parent[find(a)] = find(integ[0])
    moving = [i for i in range(n) if i not in set(integ)]
    if moving and threshold > 0:
        D = distance_matrix(result, moving, conj_branch=False)
        for a in range(len(moving)):
            for b in range(a + 1, len(moving)):
                if D[a, b] < threshold:
                    parent[find(moving[b])] = find(moving[a])
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    ordered = sorted(groups.values(), key=lambda g: g[0])
    for gid, g in enumerate(ordered):
        for i in g:
            result.trajectories[i].group = gid
    return ordered


def export_trajectories_csv(result, path):
    """Write ``k, rho, traj_index, re_lambda, im_lambda, stability_label`` rows."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "rho", "traj_index", "re_lambda", "im_lambda", "stability_label"])
        for t in result.trajectories:
            label = "integrator" if t.integrator else t.stability
            for k, lam in enumerate(t.values):
                w.writerow([k, repr(float(result.rho_grid[k])), t.index,
                            repr(float(lam.real)), repr(float(lam.imag)), label])
