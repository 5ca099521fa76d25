"""Parameter-varying modal transformation.

The state basis is assembled unit by unit from the smoothed eigenvectors:

* ``real``: a single real eigenvalue; the column is its eigenvector.
* ``pair``: a single conjugate pair, represented by its member with positive
  imaginary part at the first grid point; columns ``[Re v, Im v]`` give the
  block ``[[a, b], [-b, a]]`` for ``lambda = a + ib``.
* ``span``: any multiplicity group (closed under conjugation); columns are
  a real orthonormal basis of the invariant subspace and the block is a
  general real ``d x d`` matrix.  Eigenvectors of repeated eigenvalues can
  be nearly parallel, so the basis comes from an ordered Schur form when the
  state matrices are available.

The rate term of the modal form is ``E(rho, rhodot) = -T^{-1} dT/drho rhodot``
with ``dT/drho`` from a natural cubic spline through the local transforms.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import MatrixSpline, invariant_subspace
from .model import GridLpvModel, ReducedLpvModel
from .smoothing import _real_span, choose_start, smooth_sequence

COND_MAX = 1e12


class SingularTransformError(np.linalg.LinAlgError):
    """A local modal transform is numerically singular."""


@dataclass
class ModalUnit:
    kind: str
    members: list
    partners: list = field(default_factory=list)

    @property
    def size(self):
        return 2 * len(self.members) if self.kind == "pair" else len(self.members)

    @property
    def trajectories(self):
        return sorted(self.members + self.partners)


def _collisions(result, tol):
    """Pairs of trajectories that meet at some grid point.

    Where two eigenvalues coincide (within ``tol`` relative) the individual
    eigenvectors are ill-defined, while the invariant subspace of the pair
    stays smooth, so both trajectories are placed in one unit.
    """
    skip = set(result.integrators)
    idx = [i for i in range(result.n) if i not in skip]
    if len(idx) < 2 or tol <= 0:
        return []
    Z = result.values[:, idx]
    scale = np.maximum(1.0, np.abs(Z))
    out = []
    for a in range(len(idx) - 1):
        d = np.abs(Z[:, a:a + 1] - Z[:, a + 1:]) / scale[:, a:a + 1]
        for b in np.flatnonzero(np.min(d, axis=0) <= tol):
            out.append((idx[a], idx[a + 1 + b]))
    return out


def build_units(result, groups, collision_tol=1e-4):
    """Partition trajectories into modal units ordered by smallest member.

    Groups linked by conjugate partners are merged; a merged set made of a
    group and its exact conjugate becomes one ``pair`` unit.  Groups whose
    trajectories meet at a grid point are merged as well.
    """
    n = result.n
    owner = {}
    for gid, g in enumerate(groups):
        for i in g:
            owner[i] = gid
    parent = list(range(len(groups)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for t in result.trajectories:
        if t.partner is not None:
            parent[find(owner[t.index])] = find(owner[t.partner])
    for i, j in _collisions(result, collision_tol):
        parent[find(owner[i])] = find(owner[j])
    sets = {}
    for gid in range(len(groups)):
        sets.setdefault(find(gid), []).append(gid)

    units = []
    for gids in sets.values():
        members = sorted(i for gid in gids for i in groups[gid])
        vals = result.values[:, members]
        if len(members) == 1:
            units.append(ModalUnit("real", members))
            continue
        if len(members) == 2 and len(gids) == 2 and not np.all(vals.imag == 0):
            g0, g1 = (sorted(groups[g]) for g in gids)
            linked = all(result.trajectories[i].partner in g1 for i in g0) and \
                all(result.trajectories[i].partner in g0 for i in g1)
            if linked and len(g0) == len(g1):
                canon = g0 if result.values[0, g0[0]].imag > 0 else g1
                other = g1 if canon is g0 else g0
                units.append(ModalUnit("pair", list(canon), list(other)))
                continue
        units.append(ModalUnit("span", members))
    units.sort(key=lambda u: min(u.trajectories))
    assert sum(len(u.trajectories) for u in units) == n
    return units


def _unit_blocks(result, unit, A=None):
    """Raw (unsmoothed) basis blocks of a unit, shape (N, n, d), and realness."""
    V = result.vectors[:, :, unit.members]
    if unit.kind == "real":
        return V.real.copy(), True
    if unit.kind == "pair":
        return V.copy(), False
    d = len(unit.members)
    rest = np.setdiff1d(np.arange(result.n), unit.members)
    out = np.empty((V.shape[0], V.shape[1], d))
    for k, Vk in enumerate(V):
        basis = None
        if A is not None:
            basis = invariant_subspace(A[k], result.values[k, unit.members],
                                       result.values[k, rest])
        out[k] = _real_span(Vk, d) if basis is None else basis
    return out, True


def _columns(blocks, unit):
    """Real transform columns (N, n, size) from basis blocks."""
    if unit.kind != "pair":
        return np.real(blocks)
    N, n, d = blocks.shape
    cols = np.empty((N, n, 2 * d))
    cols[:, :, 0::2] = blocks.real
    cols[:, :, 1::2] = blocks.imag
    return cols


def build_local_transforms(result, groups, smooth=True, start=None, report=None, A=None):
    """Real local modal transforms at every grid point.

    ``A`` (the grid state matrices) enables Schur-based bases for ``span``
    units; without it their bases come from the eigenvectors.

    Returns
    -------
    T : (N, n, n) real array
        Smoothed transforms (raw phase-normalized ones if ``smooth`` is off).
    units : list of ModalUnit
    T_raw : (N, n, n) real array
        The transforms built from unsmoothed eigenvectors.
    """
    units = build_units(result, groups)
    N, n = result.values.shape
    if start is None:
        start = choose_start(result.vectors)
    if report is not None:
        report.start_index = int(start)
    T = np.empty((N, n, n))
    T_raw = np.empty((N, n, n))
    col = 0
    for uid, unit in enumerate(units):
        blocks, real = _unit_blocks(result, unit, A)
        raw = _columns(blocks, unit)
        T_raw[:, :, col:col + unit.size] = raw
        if smooth:
            sm, _ = smooth_sequence(blocks, start, real=real, label=uid, report=report)
            T[:, :, col:col + unit.size] = _columns(sm, unit)
        else:
            T[:, :, col:col + unit.size] = raw
        col += unit.size
    for k in range(N):
        c = np.linalg.cond(T[k])
        if not np.isfinite(c) or c > COND_MAX:
            raise SingularTransformError(
                f"local modal transform at grid point {k} is singular (cond {c:.3g})")
    return T, units, T_raw


def max_transform_derivative(rho_grid, T):
    """Largest entry of ``|dT/drho|`` over knots and interval midpoints, and
    the mean of the per-point maxima."""
    spline = MatrixSpline(rho_grid, T)
    mids = 0.5 * (rho_grid[1:] + rho_grid[:-1])
    pts = np.sort(np.concatenate([rho_grid, mids]))
    per_point = np.abs(spline.derivative(pts)).reshape(pts.size, -1).max(axis=1)
    return float(per_point.max()), float(per_point.mean())


@dataclass
class ModalForm:
    """Modal-form grid model.

    ``A_bar[k]`` is the exact similarity ``T_k^{-1} A_k T_k``; its off-block
    part is numerical residue, measured by :meth:`offblock_residual`.
    ``E_vertex[k, s]`` is the rate term at ``nu_s`` in ``(-delta, +delta)``.
    """

    rho_grid: np.ndarray
    rate_bound: float
    T: np.ndarray
    T_inv: np.ndarray
    dT: np.ndarray
    units: list
    A_bar: np.ndarray
    B_bar: np.ndarray
    C_bar: np.ndarray
    D: np.ndarray
    E_vertex: np.ndarray
    neglect_E: bool = False
    spline: MatrixSpline = None

    @property
    def block_sizes(self):
        return [u.size for u in self.units]

    @property
    def offsets(self):
        return np.concatenate([[0], np.cumsum(self.block_sizes)]).astype(int)

    @property
    def n(self):
        return self.A_bar.shape[1]

    def block_mask(self):
        n = self.n
        mask = np.zeros((n, n), dtype=bool)
        off = self.offsets
        for a, b in zip(off[:-1], off[1:]):
            mask[a:b, a:b] = True
        return mask

    def block_diagonal(self):
        return np.where(self.block_mask()[None], self.A_bar, 0.0)

    def offblock_residual(self):
        """Per grid point ``||offblock(A_bar_k)|| / ||A_bar_k||`` (2-norms)."""
        mask = self.block_mask()
        out = np.empty(self.A_bar.shape[0])
        for k, Ak in enumerate(self.A_bar):
            off = np.where(mask, 0.0, Ak)
            out[k] = np.linalg.norm(off, 2) / max(np.linalg.norm(Ak, 2), 1e-300)
        return out

    def unit_of_state(self):
        off = self.offsets
        out = np.empty(self.n, dtype=int)
        for u in range(len(self.units)):
            out[off[u]:off[u + 1]] = u
        return out

    def as_grid_model(self, with_rate_term=True):
        """Block-diagonal modal system, with the rate term at the vertices."""
        Ad = self.block_diagonal()
        if not with_rate_term or self.rate_bound == 0:
            return GridLpvModel(self.rho_grid, Ad, self.B_bar, self.C_bar, self.D,
                                self.rate_bound)
        Av = Ad[:, None] + self.E_vertex
        return ReducedLpvModel(self.rho_grid, Av, self.B_bar, self.C_bar, self.D,
                               self.rate_bound)


def assemble_modal(model, T, units):
    """Transform a grid model with local transforms ``T[k]``."""
    rho = model.rho_grid
    N = model.N
    T = np.asarray(T, dtype=float)
    T_inv = np.empty_like(T)
    for k in range(N):
        c = np.linalg.cond(T[k])
        if not np.isfinite(c) or c > COND_MAX:
            raise SingularTransformError(
                f"local modal transform at grid point {k} is singular (cond {c:.3g})")
        T_inv[k] = np.linalg.inv(T[k])
    spline = MatrixSpline(rho, T)
    dT = spline.derivative(rho)
    A_bar = T_inv @ model.A @ T
    B_bar = T_inv @ model.B
    C_bar = model.C @ T
    delta = model.rate_bound
    E1 = -(T_inv @ dT)
    E_vertex = np.stack([E1 * (-delta), E1 * delta], axis=1)
    if delta == 0:
        E_vertex = np.zeros_like(E_vertex)
    return ModalForm(rho.copy(), float(delta), T, T_inv, dT, list(units), A_bar,
                     B_bar, C_bar, model.D.copy(), E_vertex, spline=spline)


# --- significance of the rate term ---------------------------------------

@dataclass
class CouplingReport:
    E_norms: list
    discrepancy: float
    per_scenario: list
    midpoint_residual: float
    recommendation: str
    note: str = ""

    def to_dict(self):
        return {
            "E_norms": [float(x) for x in self.E_norms],
            "discrepancy": float(self.discrepancy),
            "per_scenario": [float(x) for x in self.per_scenario],
            "midpoint_residual": float(self.midpoint_residual),
            "recommendation": self.recommendation,
            "note": self.note,
        }


def triangular_sweep(rho_min, rho_max, delta):
    """Triangle wave from ``rho_min`` to ``rho_max`` and back at slope delta."""
    span = rho_max - rho_min
    half = span / delta
    t_end = 2.0 * half

    def rho(t):
        t = min(max(t, 0.0), t_end)
        return rho_min + delta * t if t <= half else rho_max - delta * (t - half)

    def rhodot(t):
        return delta if t < half else -delta

    return rho, rhodot, t_end


def midpoint_residual(model, modal):
    """Largest relative block-diagonalization defect between grid points.

    At interval midpoints the interpolated system is transformed with the
    spline ``T(rho)`` and compared with the interpolated modal matrix.
    """
    rho = model.rho_grid
    worst = 0.0
    Ad = modal.block_diagonal()
    for k in range(rho.size - 1):
        r = 0.5 * (rho[k] + rho[k + 1])
        Tm = modal.spline(r)
        Am = 0.5 * (model.A[k] + model.A[k + 1])
        lhs = np.linalg.solve(Tm, Am @ Tm)
        rhs = 0.5 * (Ad[k] + Ad[k + 1])
        worst = max(worst, np.linalg.norm(lhs - rhs, 2) / max(np.linalg.norm(rhs, 2), 1e-300))
    return float(worst)


def coupling_significance(modal, states=None, drop_tol=0.05, dt=None, model=None,
                          chirp_band=(0.01, 10.0)):
    """Decide whether the rate term of the modal form can be dropped.

    The modal system restricted to ``states`` (default: all) is simulated
    with and without the rate term along a triangular parameter sweep at
    the rate bound, excited by a unit step and a linear chirp on each input.
    The relative L2 output discrepancy (worst scenario) is compared with
    ``drop_tol``.
    """
    from .validation import SimulationDiverged, simulate

    norms = [float(np.linalg.norm(modal.E_vertex[k, 1], 2)) for k in range(modal.E_vertex.shape[0])]
    mid = midpoint_residual(model, modal) if model is not None else float("nan")
    delta = modal.rate_bound
    idx = np.arange(modal.n) if states is None else np.asarray(states, dtype=int)
    if delta == 0 or idx.size == 0 or max(norms) == 0:
        return CouplingReport(norms, 0.0, [], mid, "drop")
    ix = np.ix_(idx, idx)
    Ad = modal.block_diagonal()[:, ix[0], ix[1]]
    Ev = modal.E_vertex[:, :, ix[0], ix[1]]
    B = modal.B_bar[:, idx, :]
    C = modal.C_bar[:, :, idx]
    without = GridLpvModel(modal.rho_grid, Ad, B, C, modal.D, delta)
    with_e = ReducedLpvModel(modal.rho_grid, Ad[:, None] + Ev, B, C, modal.D, delta)
    rho_fn, rhodot_fn, t_end = triangular_sweep(modal.rho_grid[0], modal.rho_grid[-1], delta)
    if dt is None:
        lam = max(np.abs(np.linalg.eigvals(Ad[k])).max() for k in (0, Ad.shape[0] // 2, -1))
        dt = min(0.01, 1.0 / max(lam, 1e-12), t_end / 200.0)
    n_u = B.shape[2]
    f0, f1 = chirp_band

    def u_fn(t):
        # columns: step on each input, then chirp on each input
        U = np.zeros((n_u, 2 * n_u))
        phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / t_end * t * t)
        for j in range(n_u):
            U[j, j] = 1.0
            U[j, n_u + j] = np.sin(phase)
        return U

    try:
        _, y1 = simulate(with_e, rho_fn, u_fn, t_end, dt, rhodot_fn=rhodot_fn)
        _, y0 = simulate(without, rho_fn, u_fn, t_end, dt, rhodot_fn=rhodot_fn)
    except SimulationDiverged as exc:
        return CouplingReport(norms, float("inf"), [], mid, "keep", note=str(exc))
    per = []
    for s in range(y1.shape[2]):
        den = np.linalg.norm(y1[:, :, s])
        per.append(float(np.linalg.norm(y1[:, :, s] - y0[:, :, s]) / den) if den > 0 else 0.0)
    worst = max(per)
    modal.neglect_E = worst <= drop_tol
    return CouplingReport(norms, worst, per, mid, "drop" if modal.neglect_E else "keep")
