"""Comparison of full and reduced models in frequency and time domain."""
from __future__ import annotations

import csv
import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .model import ReducedLpvModel, interpolate


class ResolventError(np.linalg.LinAlgError):
    """``j omega`` coincides with an eigenvalue of A."""


class SimulationDiverged(RuntimeError):
    """State norm exceeded the overflow guard during integration."""


OVERFLOW_GUARD = 1e12


def frequency_grid(lo=1e-3, hi=1e3, count=400):
    """Log-spaced angular frequencies."""
    if not (0 < lo < hi) or count < 1:
        raise ValueError("frequency grid needs 0 < lo < hi and count >= 1")
    return np.logspace(np.log10(lo), np.log10(hi), int(count))


def freq_response(G, omega):
    """``C (j omega I - A)^{-1} B + D`` for one frequency or an array.

    Returns an (n_y, n_u) matrix for scalar ``omega`` and an (m, n_y, n_u)
    stack otherwise.
    """
    w = np.atleast_1d(np.asarray(omega, dtype=float))
    A, B, C, D = (np.atleast_2d(np.asarray(M, dtype=float)) for M in (G.A, G.B, G.C, G.D))
    n = A.shape[0] if A.size else 0
    if n == 0:
        out = np.broadcast_to(D.astype(complex), (w.size,) + D.shape).copy()
    else:
        lam, V = np.linalg.eig(A)
        gap = np.min(np.abs(1j * w[:, None] - lam[None, :]), axis=1)
        bad = np.flatnonzero(gap <= 1e-12 * np.maximum(1.0, np.abs(w)))
        if bad.size:
            raise ResolventError(f"resolvent singular at omega={w[bad[0]]:.6g}")
        out = _modal_response(B, C, D, w, lam, V)
        if out is None:
            M = 1j * w[:, None, None] * np.eye(n)[None] - A[None]
            X = np.linalg.solve(M, np.broadcast_to(B.astype(complex), (w.size,) + B.shape))
            out = C[None] @ X + D[None]
    return out[0] if np.ndim(omega) == 0 else out


def _modal_response(B, C, D, w, lam, V, cond_max=1e6):
    """Diagonalized response; None when the eigenbasis is too ill-conditioned."""
    if np.linalg.cond(V) > cond_max:
        return None
    Bm = np.linalg.solve(V, B)
    Cm = C @ V
    R = 1.0 / (1j * w[:, None] - lam[None, :])
    return np.einsum("yi,wi,iu->wyu", Cm, R, Bm) + D[None]


def _graph_basis(P):
    """Orthonormal bases of the graphs of a response stack: columns spanning ``[P; I]``."""
    m, _, nu = P.shape
    G = np.concatenate([P, np.broadcast_to(np.eye(nu), (m, nu, nu))], axis=1)
    Q, _ = np.linalg.qr(G)
    return Q


def chordal_distance(P1, P2):
    """Per-frequency chordal distance between two response stacks (m, ny, nu).

    Equals the largest singular value of
    ``(I + P2 P2^*)^{-1/2} (P1 - P2) (I + P1^* P1)^{-1/2}``, evaluated as the
    sine of the largest principal angle between the graphs of ``P1`` and
    ``P2``: with orthonormal graph bases ``Q1, Q2`` it is the norm of
    ``Q1 - Q2 Q2^* Q1``.  This form is accurate to roundoff in absolute terms
    even when the responses are large.
    """
    P1 = np.asarray(P1, dtype=complex)
    P2 = np.asarray(P2, dtype=complex)
    Q1 = _graph_basis(P1)
    Q2 = _graph_basis(P2)
    R = Q1 - Q2 @ (np.conj(np.swapaxes(Q2, -1, -2)) @ Q1)
    s = np.linalg.svd(R, compute_uv=False)
    return np.clip(s[..., 0], 0.0, 1.0)


def nu_gap(G1, G2, fgrid):
    """Largest chordal distance between two LTI systems over ``fgrid``."""
    return float(np.max(chordal_distance(freq_response(G1, fgrid), freq_response(G2, fgrid))))


def default_rho_samples(rho_grid):
    """Grid points and interval midpoints."""
    mids = 0.5 * (rho_grid[1:] + rho_grid[:-1])
    return np.sort(np.concatenate([rho_grid, mids]))


def gap_matrix(full, reduced, fgrid, rho_samples=None):
    """Chordal distance for every (rho sample, frequency) pair, shape (R, W).

    Reduced models are evaluated at zero parameter rate.
    """
    if (full.n_u, full.n_y) != (reduced.n_u, reduced.n_y):
        raise ValueError("full and reduced models have different input/output dimensions")
    if rho_samples is None:
        rho_samples = default_rho_samples(full.rho_grid)
    out = np.empty((len(rho_samples), len(fgrid)))
    for r, rho in enumerate(rho_samples):
        P1 = freq_response(interpolate(full, rho), fgrid)
        P2 = freq_response(interpolate(reduced, rho), fgrid)
        out[r] = chordal_distance(P1, P2)
    return out


def pointwise_gap(full, reduced, fgrid, rho_samples=None):
    """Max-over-frequency gap for each parameter sample."""
    return gap_matrix(full, reduced, fgrid, rho_samples).max(axis=1)


def frequencywise_gap(full, reduced, fgrid, rho_samples=None):
    """Max-over-parameter gap for each frequency."""
    return gap_matrix(full, reduced, fgrid, rho_samples).max(axis=0)


# --- time domain --------------------------------------------------------

class _StateMatrices:
    """Fast linear interpolation of grid matrices for the integrator."""

    def __init__(self, model):
        self.rho = model.rho_grid
        self.reduced = isinstance(model, ReducedLpvModel)
        if self.reduced:
            self.A0 = model.A
            self.A1 = 0.5 * (model.A_vertex[:, 1] - model.A_vertex[:, 0])
            self.delta = model.rate_bound
        else:
            self.A0 = model.A
        self.B, self.C, self.D = model.B, model.C, model.D

    def _bracket(self, rho):
        g = self.rho
        rho = min(max(rho, g[0]), g[-1])
        k = min(max(int(np.searchsorted(g, rho, side="right")) - 1, 0), g.size - 2)
        return k, (rho - g[k]) / (g[k + 1] - g[k])

    @staticmethod
    def _lerp(S, k, th):
        return S[k] + th * (S[k + 1] - S[k]) if th else S[k]

    def AB(self, rho, rhodot):
        k, th = self._bracket(rho)
        A = self._lerp(self.A0, k, th)
        if self.reduced and self.delta > 0 and rhodot != 0:
            A = A + (rhodot / self.delta) * self._lerp(self.A1, k, th)
        return A, self._lerp(self.B, k, th)

    def CD(self, rho):
        k, th = self._bracket(rho)
        return self._lerp(self.C, k, th), self._lerp(self.D, k, th)


def simulate(model, rho_fn, u_fn, t_end, dt, rhodot_fn=None, x0=None, check=True):
    """Fixed-step RK4 simulation of a grid LPV model.

    Parameters
    ----------
    model : GridLpvModel or ReducedLpvModel
    rho_fn, rhodot_fn : callables of time
        Scheduling trajectory and its derivative.  Without ``rhodot_fn`` a
        central difference of ``rho_fn`` is used.
    u_fn : callable of time
        Input, shape (n_u,) or (n_u, m) for ``m`` simultaneous runs.
    t_end, dt : float

    Returns
    -------
    t : (K,) array
    y : (K, n_y) or (K, n_y, m) array
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if rhodot_fn is None:
        h = 1e-6
        rhodot_fn = lambda t: (rho_fn(t + h) - rho_fn(t - h)) / (2 * h)  # noqa: E731
    mats = _StateMatrices(model)
    steps = int(round(t_end / dt))
    t = np.arange(steps + 1) * dt
    if check:
        rs = np.array([rho_fn(s) for s in t])
        rd = np.array([rhodot_fn(s) for s in t])
        g = model.rho_grid
        if rs.min() < g[0] - 1e-12 or rs.max() > g[-1] + 1e-12:
            warnings.warn("scheduling trajectory leaves the grid range; values are clamped")
        if np.abs(rd).max() > model.rate_bound * (1 + 1e-9) + 1e-12:
            warnings.warn("scheduling rate exceeds the model's rate bound")
    u0 = np.asarray(u_fn(0.0), dtype=float)
    x = np.zeros((model.n_x,) + u0.shape[1:]) if x0 is None else np.array(x0, dtype=float)

    def f(s, x):
        A, B = mats.AB(rho_fn(s), rhodot_fn(s))
        return A @ x + B @ np.asarray(u_fn(s), dtype=float)

    def out(s, x):
        C, D = mats.CD(rho_fn(s))
        return C @ x + D @ np.asarray(u_fn(s), dtype=float)

    ys = [out(0.0, x)]
    for i in range(steps):
        s = t[i]
        k1 = f(s, x)
        k2 = f(s + dt / 2, x + dt / 2 * k1)
        k3 = f(s + dt / 2, x + dt / 2 * k2)
        k4 = f(s + dt, x + dt * k3)
        x = x + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > OVERFLOW_GUARD:
            raise SimulationDiverged(f"state norm exceeded {OVERFLOW_GUARD:.0e} at t={t[i + 1]:.6g}")
        ys.append(out(t[i + 1], x))
    return t, np.array(ys)


def sinusoidal_schedule(rho_grid, rate_bound, fraction=0.9):
    """``rho(t) = mid + a sin(w t)`` inside the grid with ``|rhodot| <= delta``."""
    mid = 0.5 * (rho_grid[0] + rho_grid[-1])
    a = 0.5 * fraction * (rho_grid[-1] - rho_grid[0])
    w = rate_bound / a if rate_bound > 0 else 0.0
    return (lambda t: mid + a * np.sin(w * t)), (lambda t: a * w * np.cos(w * t))


def simulation_discrepancy(full, reduced, t_end=10.0, dt=1e-3, rho_fn=None, rhodot_fn=None):
    """Relative L2 output difference of full and reduced model under steps.

    Returns a dict with the relative error per input channel, or a
    divergence note.
    """
    if rho_fn is None:
        rho_fn, rhodot_fn = sinusoidal_schedule(full.rho_grid, full.rate_bound)
    u = lambda t: np.eye(full.n_u)  # noqa: E731
    try:
        t, y1 = simulate(full, rho_fn, u, t_end, dt, rhodot_fn=rhodot_fn, check=False)
        _, y2 = simulate(reduced, rho_fn, u, t_end, dt, rhodot_fn=rhodot_fn, check=False)
    except SimulationDiverged as exc:
        return {"diverged": True, "note": str(exc)}
    rel = []
    for j in range(full.n_u):
        den = np.linalg.norm(y1[:, :, j])
        rel.append(float(np.linalg.norm(y1[:, :, j] - y2[:, :, j]) / den) if den > 0 else 0.0)
    return {"diverged": False, "relative_l2": rel, "t_end": t_end, "dt": dt}


def pole_map(model):
    """Rows ``(k, rho, re, im)`` of the eigenvalues at every grid point."""
    rows = []
    A = model.A
    for k, r in enumerate(model.rho_grid):
        lam = np.linalg.eigvals(A[k])
        lam = lam[np.lexsort((lam.imag, lam.real))]
        rows.extend((k, float(r), float(z.real), float(z.imag)) for z in lam)
    return rows


# --- report and CSV -----------------------------------------------------

@dataclass
class ValidationReport:
    rho_samples: list
    pointwise: list
    omega: list
    frequencywise: list
    simulation: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)

    @property
    def max_gap(self):
        return float(max(self.pointwise)) if self.pointwise else 0.0

    def to_dict(self):
        return {
            "max_pointwise_gap": self.max_gap,
            "rho_samples": [float(x) for x in self.rho_samples],
            "pointwise_gap": [float(x) for x in self.pointwise],
            "omega": [float(x) for x in self.omega],
            "frequencywise_gap": [float(x) for x in self.frequencywise],
            "simulation": self.simulation,
            "runtime": self.runtime,
        }


def validate(full, reduced, fgrid=None, rho_samples=None, simulate_steps=True,
             sim_t_end=10.0, sim_dt=1e-3):
    """Gap profiles and (optionally) a time-domain comparison."""
    t0 = time.perf_counter()
    if fgrid is None:
        fgrid = frequency_grid()
    if rho_samples is None:
        rho_samples = default_rho_samples(full.rho_grid)
    G = gap_matrix(full, reduced, fgrid, rho_samples)
    t1 = time.perf_counter()
    sim = {}
    if simulate_steps:
        sim = simulation_discrepancy(full, reduced, sim_t_end, sim_dt)
    t2 = time.perf_counter()
    return ValidationReport(list(rho_samples), list(G.max(axis=1)), list(fgrid),
                            list(G.max(axis=0)), sim,
                            {"gap_seconds": t1 - t0, "simulation_seconds": t2 - t1})


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def export_validation(report, outdir, prefix=""):
    """Write pointwise/frequency-wise gap CSVs and the JSON report."""
    os.makedirs(outdir, exist_ok=True)
    paths = {
        "pointwise": os.path.join(outdir, f"{prefix}gap_pointwise.csv"),
        "frequencywise": os.path.join(outdir, f"{prefix}gap_frequency.csv"),
        "report": os.path.join(outdir, f"{prefix}validation.json"),
    }
    write_rows(paths["pointwise"], ["rho", "gap"], zip(report.rho_samples, report.pointwise))
    write_rows(paths["frequencywise"], ["omega", "gap"], zip(report.omega, report.frequencywise))
    with open(paths["report"], "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
    return paths


def export_simulation(path, t, y):
    y = np.asarray(y)
    header = ["t"] + [f"y_{i + 1}" for i in range(y.shape[1])]
    write_rows(path, header, (np.concatenate([[ti], yi]) for ti, yi in zip(t, y)))


def export_pole_map(path, model):
    write_rows(path, ["k", "rho", "re", "im"], pole_map(model))
