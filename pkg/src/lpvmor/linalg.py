"""Numerical kernels shared across the reduction pipeline."""
from __future__ import annotations

import numpy as np
from scipy import interpolate, linalg


class NearDefectiveError(np.linalg.LinAlgError):
    """Eigenvector matrix too ill-conditioned for a modal decomposition."""


class NotHurwitzError(np.linalg.LinAlgError):
    """Lyapunov equation requested for a matrix with a non-stable eigenvalue."""


COND_MAX = 1e12


def normalize_phase(V):
    """Scale columns to unit norm with the largest-magnitude entry real positive."""
    V = np.asarray(V, dtype=complex)
    norms = np.linalg.norm(V, axis=0)
    V = V / norms
    # argmax of |v| is shared by conjugate columns, so conjugate pairs stay conjugate
    idx = np.argmax(np.abs(V), axis=0)
    pivots = V[idx, np.arange(V.shape[1])]
    return V * (np.conj(pivots) / np.abs(pivots))


def eig_decompose(A, cond_max=COND_MAX):
    """Eigenvalues and unit eigenvectors of a real square matrix.

    Complex eigenvalues come in adjacent conjugate pairs with conjugate
    eigenvectors.  Each eigenvector is scaled so that its largest-magnitude
    entry is real and positive.

    Raises
    ------
    NearDefectiveError
        If the eigenvector matrix has condition number above ``cond_max``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"eig_decompose needs a square matrix, got shape {A.shape}")
    if A.shape[0] == 0:
        return np.zeros(0, complex), np.zeros((0, 0), complex)
    lam, V = np.linalg.eig(A)
    lam = lam.astype(complex)
    V = normalize_phase(V)
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > cond_max:
        # per-eigenvalue condition numbers locate the offending cluster
        try:
            W = np.linalg.inv(V)
            kappa = np.linalg.norm(W, axis=1)
        except np.linalg.LinAlgError:
            kappa = np.full(lam.size, np.inf)
        worst = int(np.argmax(kappa))
        scale = max(1.0, abs(lam[worst]))
        cluster = np.flatnonzero(np.abs(lam - lam[worst]) <= 1e-4 * scale)
        names = ", ".join(f"{lam[i]:.6g}" for i in cluster)
        raise NearDefectiveError(
            f"near-defective matrix: eigenvector condition number {cond:.3g} "
            f"exceeds {cond_max:.1g}; eigenvalue cluster {{{names}}}")
    return lam, V


def solve_lyapunov(A, Q):
    """Solve ``A^T X + X A + Q = 0`` for a Hurwitz ``A``.

    Uses the Schur-based Bartels-Stewart solver of SciPy; the result is
    symmetrized.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    lam = np.linalg.eigvals(A)
    bad = np.flatnonzero(lam.real >= 0)
    if bad.size:
        raise NotHurwitzError(
            f"matrix is not Hurwitz: eigenvalue {lam[bad[0]]:.6g} has "
            "nonnegative real part")
    X = linalg.solve_continuous_lyapunov(A.T, -Q)
    return 0.5 * (X + X.T)


def invariant_subspace(A, selected, others=()):
    """Real orthonormal basis of the invariant subspace of ``A`` belonging to
    the eigenvalues ``selected`` (closed under conjugation).

    An ordered real Schur form moves every eigenvalue lying closer to the
    selection than half its distance to ``others`` to the leading block.
    Returns None when the count does not match ``len(selected)``.
    """
    sel = np.asarray(selected, dtype=complex)
    oth = np.asarray(others, dtype=complex)
    if oth.size:
        radius = 0.5 * float(np.min(np.abs(sel[:, None] - oth[None, :])))
    else:
        radius = np.inf
    if radius == 0.0:
        return None

    def pick(re, im):
        return bool(np.min(np.abs(sel - complex(re, im))) < radius)

    _, Z, sdim = linalg.schur(np.asarray(A, dtype=float), output="real", sort=pick)
    if sdim != sel.size:
        return None
    return Z[:, :sdim]


def complex_lstsq(M, R):
    """Least-squares solution of ``M X = R`` in the Frobenius norm.

    Returns ``(X, rank_deficient)``.  For rank-deficient ``M`` the minimum
    norm solution is returned and the flag is set.
    """
    M = np.atleast_2d(np.asarray(M))
    R = np.asarray(R)
    squeeze = R.ndim == 1
    if squeeze:
        R = R[:, None]
    dtype = np.result_type(M.dtype, R.dtype, float)
    X, _, rank, _ = np.linalg.lstsq(M.astype(dtype), R.astype(dtype), rcond=None)
    if squeeze:
        X = X[:, 0]
    return X, bool(rank < M.shape[1])


class MatrixSpline:
    """Natural cubic spline through matrix-valued knot data.

    Every entry is interpolated independently; values and first derivatives
    are continuous across interior knots.
    """

    def __init__(self, knots, values):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values)
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("spline needs at least two knots")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("spline knots must be strictly increasing")
        if values.shape[0] != knots.size:
            raise ValueError("one value per knot is required")
        self.knots = knots
        self.shape = values.shape[1:]
        self._values = values
        flat = values.reshape(knots.size, -1)
        if knots.size == 2:
            # two knots: the natural spline is the straight line
            self._spline = interpolate.make_interp_spline(knots, flat, k=1)
        else:
            self._spline = interpolate.CubicSpline(knots, flat, axis=0,
                                                   bc_type="natural")
        self._deriv = self._spline.derivative()

    @property
    def coefficients(self):
        """Per-interval polynomial coefficients, shape (4, N-1, n_entries)."""
        return getattr(self._spline, "c", None)

    def evaluate(self, rho):
        rho = np.asarray(rho, dtype=float)
        out = self._spline(rho)
        # exact knot reproduction
        hit = np.searchsorted(self.knots, rho)
        if rho.ndim == 0:
            k = int(hit)
            if k < self.knots.size and self.knots[k] == rho:
                return self._values[k].copy()
            return out.reshape(self.shape)
        out = out.reshape(rho.shape + self.shape)
        for pos in np.ndindex(rho.shape):
            k = int(hit[pos])
            if k < self.knots.size and self.knots[k] == rho[pos]:
                out[pos] = self._values[k]
        return out

    def derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        return self._deriv(rho).reshape(rho.shape + self.shape)

    __call__ = evaluate


def spline_fit(knots, values):
    """Fit a :class:`MatrixSpline` through one matrix per knot."""
    return MatrixSpline(knots, values)
