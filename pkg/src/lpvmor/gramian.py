"""Affine parameter-varying Gramians of cluster subsystems.

Gramians take the form ``X(rho) = X0 + rho X1``.  With ``nu_s = +-delta``
and vertex state matrices ``A_{k,s}`` they must satisfy

* observability:    ``nu_s X1 + A^T X + X A + C^T C < 0``
* controllability: ``-nu_s X1 + A X + X A^T + B B^T < 0``

at every grid point and both rate vertices.  Controllability conditions are
handled as observability conditions of the dual system ``(A^T, B^T)`` with
the rate sign flipped.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .linalg import NotHurwitzError, solve_lyapunov

log = logging.getLogger(__name__)

ROUNDOFF = 1e-12


@dataclass
class AffineGramian:
    X0: np.ndarray
    X1: np.ndarray

    def __post_init__(self):
        self.X0 = 0.5 * (np.asarray(self.X0, float) + np.asarray(self.X0, float).T)
        self.X1 = 0.5 * (np.asarray(self.X1, float) + np.asarray(self.X1, float).T)

    def evaluate(self, rho):
        rho = np.asarray(rho, dtype=float)
        if rho.ndim == 0:
            return self.X0 + float(rho) * self.X1
        return self.X0[None] + rho[:, None, None] * self.X1[None]

    def derivative(self):
        return self.X1

    def scaled(self, kappa, alpha=0.0, D=None):
        X0 = kappa * self.X0 + (alpha * D if D is not None else 0.0)
        return AffineGramian(X0, kappa * self.X1)

    def to_dict(self):
        return {"X0": self.X0.tolist(), "X1": self.X1.tolist()}


@dataclass
class Subsystem:
    """Cluster dynamics on the grid: ``A[k]``, vertex terms ``E[k, s]``."""

    rho_grid: np.ndarray
    A: np.ndarray
    E: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    rate_bound: float

    @property
    def n(self):
        return self.A.shape[1]

    @property
    def nu(self):
        return np.array([-self.rate_bound, self.rate_bound])

    def vertex_matrices(self):
        """(N, 2, n, n) state matrices at the rate vertices."""
        return self.A[:, None] + self.E

    def dual(self):
        At = np.swapaxes(self.A, -1, -2)
        Et = np.swapaxes(self.E, -1, -2)[:, ::-1]  # dual rate sign
        return Subsystem(self.rho_grid, At, Et, np.swapaxes(self.C, -1, -2),
                         np.swapaxes(self.B, -1, -2), np.swapaxes(self.D, -1, -2),
                         self.rate_bound)

    @classmethod
    def lti(cls, A, B, C, D=None, rho_grid=(0.0, 1.0), rate_bound=0.0):
        rho = np.asarray(rho_grid, dtype=float)
        N = rho.size
        A = np.broadcast_to(np.atleast_2d(A), (N,) + np.atleast_2d(A).shape).copy()
        B = np.broadcast_to(np.atleast_2d(B), (N,) + np.atleast_2d(B).shape).copy()
        C = np.broadcast_to(np.atleast_2d(C), (N,) + np.atleast_2d(C).shape).copy()
        D = np.zeros((N, C.shape[1], B.shape[2])) if D is None else np.broadcast_to(
            np.atleast_2d(D), (N, C.shape[1], B.shape[2])).copy()
        return cls(rho, A, np.zeros((N, 2) + A.shape[1:]), B, C, D, float(rate_bound))


def default_margin(sub):
    return 1e-6 * max(np.linalg.norm(Ak, 2) for Ak in sub.A)


# --- residuals and verification -----------------------------------------

def _obs_residuals(sub, X):
    """Observability inequality matrices, shape (N, 2, n, n)."""
    Av = sub.vertex_matrices()
    Xk = X.evaluate(sub.rho_grid)[:, None]
    Q = np.swapaxes(sub.C, -1, -2) @ sub.C
    nu = sub.nu[None, :, None, None]
    R = nu * X.X1 + np.swapaxes(Av, -1, -2) @ Xk + Xk @ Av + Q[:, None]
    return 0.5 * (R + np.swapaxes(R, -1, -2))


def _max_eigs(R):
    return np.linalg.eigvalsh(R)[..., -1]


@dataclass
class LmiReport:
    obs_max_eig: np.ndarray
    ctrb_max_eig: np.ndarray
    min_eig_obs: float
    min_eig_ctrb: float
    margin: float
    feasible: bool

    def to_dict(self):
        return {
            "feasible": bool(self.feasible),
            "margin": float(self.margin),
            "obs_max_eig": float(np.max(self.obs_max_eig)),
            "ctrb_max_eig": float(np.max(self.ctrb_max_eig)),
            "min_gramian_eig_obs": float(self.min_eig_obs),
            "min_gramian_eig_ctrb": float(self.min_eig_ctrb),
        }


def _min_pd(sub, X):
    return float(np.min(np.linalg.eigvalsh(X.evaluate(sub.rho_grid))[:, 0]))


def _allowance(sub, X):
    scale = max(1.0, float(np.max(np.abs(X.evaluate(sub.rho_grid)))))
    scale *= max(1.0, float(np.max(np.abs(sub.vertex_matrices()))))
    return ROUNDOFF * scale


def verify_lmi(sub, X_o, X_c, margin=None):
    """Largest eigenvalues of both inequalities at every (rho_k, nu_s).

    The pair is feasible when every value is ``<= -margin`` (up to a
    roundoff allowance) and both Gramians are positive definite on the grid.
    """
    if margin is None:
        margin = default_margin(sub)
    eo = _max_eigs(_obs_residuals(sub, X_o))
    # the dual system lists its rate vertices in reverse order
    ec = _max_eigs(_obs_residuals(sub.dual(), X_c))[:, ::-1]
    po, pc = _min_pd(sub, X_o), _min_pd(sub, X_c)
    tol_o, tol_c = _allowance(sub, X_o), _allowance(sub, X_c)
    feasible = bool(np.all(eo <= -margin + tol_o) and np.all(ec <= -margin + tol_c)
                    and po > 0 and pc > 0)
    return LmiReport(eo, ec, po, pc, float(margin), feasible)


# --- initialization -------------------------------------------------------

def _check_hurwitz(sub):
    Av = sub.vertex_matrices()
    for k in range(Av.shape[0]):
        for s in range(2):
            lam = np.linalg.eigvals(Av[k, s])
            if np.any(lam.real >= 0):
                bad = lam[np.argmax(lam.real)]
                raise NotHurwitzError(
                    f"frozen subsystem matrix at grid point {k}, rate vertex {s} has "
                    f"eigenvalue {bad:.6g}; separate unstable dynamics before computing Gramians")


def _fit_affine(rho, Xs):
    V = np.stack([np.ones_like(rho), rho], axis=1)
    coef, *_ = np.linalg.lstsq(V, Xs.reshape(rho.size, -1), rcond=None)
    n = Xs.shape[1]
    return AffineGramian(coef[0].reshape(n, n), coef[1].reshape(n, n))


def _pointwise(sub, gamma):
    Q = np.swapaxes(sub.C, -1, -2) @ sub.C
    n = sub.n
    Xs = np.stack([solve_lyapunov(sub.A[k], Q[k] + gamma * np.eye(n)) for k in range(sub.A.shape[0])])
    return _fit_affine(sub.rho_grid, Xs), Xs


def frozen_hankel_values(sub):
    """Hankel singular values of the frozen (zero-rate) subsystem at every
    grid point, each row in nonincreasing order."""
    out = np.empty((sub.A.shape[0], sub.n))
    for k in range(sub.A.shape[0]):
        Wo = solve_lyapunov(sub.A[k], sub.C[k].T @ sub.C[k])
        Wc = solve_lyapunov(sub.A[k].T, sub.B[k] @ sub.B[k].T)
        ev = np.linalg.eigvals(Wc @ Wo)
        out[k] = np.sort(np.sqrt(np.abs(ev.real)))[::-1]
    return out


def _inflate(sub, X, margin, beta_step=0.1, beta_max=10.0):
    """Smallest (1 + beta) scaling on the beta grid that passes the checks."""
    tol = _allowance(sub, X)
    for beta in np.arange(0.0, beta_max + 1e-9, beta_step):
        Y = X.scaled(1.0 + beta)
        # twice the margin leaves room for a strictly feasible barrier start
        if _min_pd(sub, Y) > 0 and np.all(_max_eigs(_obs_residuals(sub, Y)) <= -2 * margin + tol):
            return Y, float(beta), True
    return X, float("nan"), False


def _positive_floor(sub, X):
    """Uncertified fallback: the fit shifted to be positive definite on the
    grid (unchanged when it already is)."""
    lo = _min_pd(sub, X)
    if lo > 0:
        return X
    top = float(np.max(np.linalg.eigvalsh(X.evaluate(sub.rho_grid))[:, -1]))
    shift = -lo + 1e-6 * max(top, 1e-300)
    return AffineGramian(X.X0 + shift * np.eye(sub.n), X.X1)


def _fit_weighted(rho, Xs, w):
    V = np.stack([np.ones_like(rho), rho], axis=1) * np.sqrt(w)[:, None]
    rhs = (Xs * np.sqrt(w)[:, None, None]).reshape(rho.size, -1)
    coef, *_ = np.linalg.lstsq(V, rhs, rcond=None)
    n = Xs.shape[1]
    return AffineGramian(coef[0].reshape(n, n), coef[1].reshape(n, n))


def _violation(sub, X, margin):
    """Merit for the correction loop and the residual eigen-decomposition."""
    R = _obs_residuals(sub, X) + 2.0 * margin * np.eye(sub.n)
    w, U = np.linalg.eigh(R)
    return max(float(w[..., -1].max()) - _allowance(sub, X), -_min_pd(sub, X)), w, U


def _lyapunov_correction(sub, X, margin, iters=60, trace_cap=4.0):
    """Push an affine Gramian into the feasible set with Lyapunov updates.

    At every grid point the positive part of the vertex residuals (shifted
    by twice the margin) is collected into ``P_k`` and ``A_k^T Y_k + Y_k A_k
    = -P_k`` is solved.  Affine fits of ``Y_k`` (plain and weighted towards
    the violating points) at a few step lengths are tried and the one with
    the smallest remaining violation is taken.  Corrections are shaped like
    the violations, so directions that already satisfy the inequality stay
    untouched.  Returns None if the violation stops decreasing or the
    largest trace grows beyond ``trace_cap`` times its initial value.
    """
    rho = sub.rho_grid
    tr0 = float(np.trace(X.evaluate(rho), axis1=1, axis2=2).max())
    f, w, U = _violation(sub, X, margin)
    for _ in range(iters):
        if f <= 0 and _min_pd(sub, X) > 0:
            return X
        P = ((U * np.maximum(w, 0.0)[..., None, :]) @ np.swapaxes(U, -1, -2)).sum(axis=1)
        Y = np.stack([solve_lyapunov(sub.A[k], P[k]) for k in range(sub.A.shape[0])])
        wt = np.trace(P, axis1=1, axis2=2)
        wt = wt / wt.max()
        best = None
        for F in (_fit_affine(rho, Y), _fit_weighted(rho, Y, wt + 1e-3),
                  _fit_weighted(rho, Y, wt + 0.1)):
            for step in (2.0, 1.0, 0.5):
                Z = AffineGramian(X.X0 + step * F.X0, X.X1 + step * F.X1)
                fz, wz, Uz = _violation(sub, Z, margin)
                if best is None or fz < best[0]:
                    best = (fz, Z, wz, Uz)
        if not best[0] < f:
            return None
        f, X, w, U = best
        if np.trace(X.evaluate(rho), axis1=1, axis2=2).max() > trace_cap * tr0:
            return None
    return None


def _diagonal_certificate(sub, blocks):
    """Block-diagonal constant matrix that is a strict Lyapunov function for
    every diagonal block at the middle grid point, normalized to norm 1."""
    n = sub.n
    mid = sub.A[sub.A.shape[0] // 2]
    D = np.zeros((n, n))
    for a, b in blocks:
        D[a:b, a:b] = solve_lyapunov(mid[a:b, a:b], np.eye(b - a))
    return D / np.linalg.norm(D, 2)


def _certify(sub, X, margin, blocks, kappas=(1.0, 2.0, 11.0), alpha_max=1e6, iters=40):
    """Search ``kappa X + alpha D`` with bisection on ``alpha``.

    Returns the feasible candidate with the smallest summed trace, or None.
    """
    D = _diagonal_certificate(sub, blocks)
    nu = sub.nu[None, :, None, None]
    Av = sub.vertex_matrices()
    At = np.swapaxes(Av, -1, -2)
    RD = At @ D + D @ Av
    RD = 0.5 * (RD + np.swapaxes(RD, -1, -2))
    Q = (np.swapaxes(sub.C, -1, -2) @ sub.C)[:, None]
    Xk = X.evaluate(sub.rho_grid)[:, None]
    R0 = nu * X.X1 + At @ Xk + Xk @ Av
    R0 = 0.5 * (R0 + np.swapaxes(R0, -1, -2))
    Xg = X.evaluate(sub.rho_grid)
    target = -2.0 * margin

    def ok(kappa, alpha):
        R = kappa * R0 + Q + alpha * RD
        if np.max(_max_eigs(R)) > target:
            return False
        return np.min(np.linalg.eigvalsh(kappa * Xg + alpha * D)[:, 0]) > 0

    best = None
    for kappa in kappas:
        if not ok(kappa, alpha_max):
            continue
        lo, hi = 0.0, alpha_max
        if ok(kappa, 0.0):
            hi = 0.0
        else:
            for _ in range(iters):
                mid = np.sqrt(lo * hi) if lo > 0 else hi / 1e6 if hi > 1 else 0.5 * hi
                if ok(kappa, mid):
                    hi = mid
                else:
                    lo = mid
                if hi - lo <= 1e-6 * hi:
                    break
        cand = X.scaled(kappa, hi, D)
        tr = float(np.trace(cand.evaluate(sub.rho_grid), axis1=1, axis2=2).sum())
        if best is None or tr < best[0]:
            best = (tr, cand, kappa, hi)
    return best


@dataclass
class GramianResult:
    X_o: AffineGramian
    X_c: AffineGramian
    report: LmiReport
    accepted: bool
    trace_history: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    beta: tuple = (float("nan"), float("nan"))

    def to_dict(self):
        return {"accepted": bool(self.accepted), "lmi": self.report.to_dict(),
                "trace_history": [float(t) for t in self.trace_history],
                "notes": list(self.notes),
                "beta": [float(b) for b in self.beta]}


def init_pointwise(sub, margin=None, gamma=None, blocks=None):
    """Pointwise Lyapunov solutions, affine fit and inflation.

    ``gamma`` adds ``gamma I`` to the Lyapunov right-hand sides so that the
    fitted Gramians satisfy the inequalities strictly (default: twice the
    margin).  If scalar inflation does not reach feasibility, violation-shaped
    Lyapunov corrections are tried, and after those a
    ``kappa X + alpha D`` correction with a block-diagonal ``D`` aligned to
    ``blocks`` (list of (start, stop) state ranges) is searched.

    Returns
    -------
    X_o, X_c : AffineGramian
    info : dict with ``beta``, ``feasible`` flags and notes
    """
    _check_hurwitz(sub)
    if margin is None:
        margin = default_margin(sub)
    if gamma is None:
        gamma = 2.0 * margin
    if blocks is None:
        blocks = [(i, i + 1) for i in range(sub.n)]
    out, info = [], {"beta": [], "feasible": [], "notes": []}
    for which, s in (("observability", sub), ("controllability", sub.dual())):
        X, _ = _pointwise(s, gamma)
        Y, beta, ok = _inflate(s, X, margin)
        if not ok:
            Z = _lyapunov_correction(s, X, margin)
            if Z is not None:
                Y, ok = Z, True
                info["notes"].append(f"{which}: feasible after Lyapunov correction")
        if not ok:
            found = _certify(s, X, margin, blocks)
            if found is not None:
                _, Y, kappa, alpha = found
                ok = True
                info["notes"].append(f"{which}: certified with kappa={kappa:g}, alpha={alpha:.3g}")
            else:
                Y = _positive_floor(s, X)
                info["notes"].append(f"{which}: no certificate found at rate {sub.rate_bound:g}")
        info["beta"].append(beta)
        info["feasible"].append(ok)
        out.append(Y)
    return out[0], out[1], info


# --- barrier refinement -------------------------------------------------

def _sym_basis(n):
    idx = [(i, j) for i in range(n) for j in range(i, n)]
    E = np.zeros((len(idx), n, n))
    for p, (i, j) in enumerate(idx):
        E[p, i, j] = 1.0
        E[p, j, i] = 1.0
    return E


def _half_step_data(sub, X_other, margin, pd_floor):
    """Affine constraint data ``S_j(x) = S0_j + sum_p x_p S_jp > 0`` and the
    objective vector for the observability half-step with ``X_other`` fixed.

    Variables: ``x = [vec_sym(X0), vec_sym(X1)]``.
    """
    n = sub.n
    E = _sym_basis(n)
    Av = sub.vertex_matrices()
    N = Av.shape[0]
    rho = sub.rho_grid
    Q = np.swapaxes(sub.C, -1, -2) @ sub.C
    S0, S = [], []
    for k in range(N):
        for s, nu in enumerate(sub.nu):
            A = Av[k, s]
            G = np.swapaxes(A, -1, -2)[None] @ E + E @ A[None]
            # S = -(nu X1 + A^T X + X A + Q + margin I)
            S0.append(-(Q[k] + margin * np.eye(n)))
            S.append(np.concatenate([-G, -(nu * E + rho[k] * G)], axis=0))
    for r in (rho[0], rho[-1]):
        S0.append(-pd_floor * np.eye(n))
        S.append(np.concatenate([E, r * E], axis=0))
    Xg = X_other.evaluate(rho)
    tr = np.einsum("pij,kji->pk", E, Xg)
    c = np.concatenate([tr.sum(axis=1), (tr * rho[None]).sum(axis=1)])
    return np.array(S0), np.array(S), c, E


def _from_vec(x, n, E):
    m = E.shape[0]
    X0 = np.einsum("p,pij->ij", x[:m], E)
    X1 = np.einsum("p,pij->ij", x[m:], E)
    return AffineGramian(X0, X1)


def barrier_minimize(S0, S, c, x0, tol=1e-7, mu=10.0, max_newton=60, t0=None):
    """Minimize ``c^T x`` subject to ``S0_j + sum_p x_p S_jp > 0``.

    Log-det barrier path following with damped Newton steps from the
    strictly feasible point ``x0``.
    """
    J, m = S.shape[0], S.shape[1]
    n = S0.shape[1]
    x = np.array(x0, dtype=float)

    def mats(x):
        return S0 + np.einsum("p,jpab->jab", x, S)

    def feasible(M):
        try:
            np.linalg.cholesky(M)
            return True
        except np.linalg.LinAlgError:
            return False

    if not feasible(mats(x)):
        raise ValueError("barrier start point is not strictly feasible")
    nbar = J * n
    t = t0 if t0 is not None else max(1.0, nbar / max(abs(c @ x), 1e-12))
    while nbar / t > tol * max(1.0, abs(c @ x)):
        for _ in range(max_newton):
            M = mats(x)
            L = np.linalg.cholesky(M)
            Linv = np.linalg.inv(L)
            # W_jp = L^{-1} S_jp L^{-T}; grad = t c - sum tr(W); hess = sum <W_p, W_q>
            W = Linv[:, None] @ S @ np.swapaxes(Linv, -1, -2)[:, None]
            g = t * c - np.einsum("jpaa->p", W)
            Wr = np.swapaxes(W.reshape(J, m, n * n), 0, 1).reshape(m, J * n * n)
            H = Wr @ Wr.T
            try:
                dx = -np.linalg.solve(H, g)
            except np.linalg.LinAlgError:
                dx = -np.linalg.lstsq(H, g, rcond=None)[0]
            dec = float(-g @ dx)
            if dec / 2 <= 1e-10:
                break
            step = 1.0
            f0 = t * (c @ x) - 2 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum()
            while step > 1e-12:
                xn = x + step * dx
                Mn = mats(xn)
                if feasible(Mn):
                    Ln = np.linalg.cholesky(Mn)
                    fn = t * (c @ xn) - 2 * np.log(np.diagonal(Ln, axis1=1, axis2=2)).sum()
                    if fn <= f0 - 0.25 * step * dec:
                        break
                step *= 0.5
            if step <= 1e-12:
                break
            x = xn
        t *= mu
    return x


def refine_alternating(sub, X_o, X_c, margin=None, max_iters=20, rel_tol=1e-3,
                       pd_floor=None, barrier_tol=1e-7):
    """Alternating trace minimization of ``sum_k tr(X_o(rho_k) X_c(rho_k))``.

    Each half-step keeps one Gramian fixed and solves the remaining linear
    objective problem under its inequalities with the barrier method.  A
    half-step is kept only if it does not increase the objective, so the
    trace history is nonincreasing.

    Returns
    -------
    X_o, X_c, LmiReport, history, notes
    """
    if margin is None:
        margin = default_margin(sub)
    n = sub.n
    if pd_floor is None:
        pd_floor = 1e-9
    rho = sub.rho_grid

    def objective(Xo, Xc):
        return float(np.einsum("kij,kji->", Xo.evaluate(rho), Xc.evaluate(rho)))

    notes = []
    history = [objective(X_o, X_c)]
    dual = sub.dual()
    for it in range(max_iters):
        for which in ("obs", "ctrb"):
            s, fixed, cur = (sub, X_c, X_o) if which == "obs" else (dual, X_o, X_c)
            S0, S, c, E = _half_step_data(s, fixed, margin, pd_floor)
            x0 = np.concatenate([cur.X0[np.triu_indices(n)], cur.X1[np.triu_indices(n)]])
            try:
                x = barrier_minimize(S0, S, c, x0, tol=barrier_tol)
            except (ValueError, np.linalg.LinAlgError) as exc:
                notes.append(f"iteration {it} {which}: {exc}")
                continue
            cand = _from_vec(x, n, E)
            new = objective(cand, X_c) if which == "obs" else objective(X_o, cand)
            if new <= history[-1]:
                if which == "obs":
                    X_o = cand
                else:
                    X_c = cand
                history.append(new)
            else:
                history.append(history[-1])
        prev = history[-3] if len(history) >= 3 else history[0]
        if prev - history[-1] <= rel_tol * abs(prev):
            break
    return X_o, X_c, verify_lmi(sub, X_o, X_c, margin), history, notes


def compute_gramians(sub, backend="pointwise", margin=None, max_iters=20, blocks=None,
                     barrier_max_size=20):
    """Gramians of one cluster subsystem with the configured backend."""
    if margin is None:
        margin = default_margin(sub)
    X_o, X_c, info = init_pointwise(sub, margin, blocks=blocks)
    report = verify_lmi(sub, X_o, X_c, margin)
    history, notes = [], list(info["notes"])
    if backend == "barrier" and sub.n <= barrier_max_size and report.feasible:
        X_o, X_c, report, history, more = refine_alternating(sub, X_o, X_c, margin, max_iters)
        notes.extend(more)
    elif backend == "barrier" and sub.n > barrier_max_size:
        notes.append(f"cluster of size {sub.n} exceeds the barrier limit; pointwise Gramians kept")
    if not report.feasible:
        notes.append("Gramians not certified")
    return GramianResult(X_o, X_c, report, report.feasible, history, notes, tuple(info["beta"]))
