"""Random grid LPV benchmark systems with known eigenvalue trajectories.

Generation proceeds in four steps:

1. a block-diagonal modal matrix ``A0(rho)`` is assembled from eigenvalue
   templates (real and complex, parameter-varying or constant, repeated,
   integrators, axis-crossing);
2. constant ``B0, C0, D0`` are drawn at random;
3. the system is transformed by ``T(rho) = T0 (I + rho S)``, where ``T0`` is
   a random well-conditioned matrix and ``S`` is nonzero on a random subset
   of 2x2 diagonal blocks;
4. every matrix entry is fitted by a degree-``d`` polynomial on ``N0``
   samples and evaluated on the final ``N``-point grid.

The ground truth (per-trajectory eigenvalue functions, family labels, the
transform parameters and the post-fit eigenvalue drift) is kept alongside
the model.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np
from numpy.polynomial import chebyshev

from .assignment import min_cost_assignment
from .model import GridLpvModel

FAMILIES = (
    "pv_real", "pv_complex", "constant_real", "constant_complex", "repeated_real",
    "repeated_complex", "integrator", "mixed_real", "mixed_complex", "transition",
)

DEFAULT_COUNTS = {
    "pv_real": 21,
    "pv_complex": 14,
    "constant_real": 6,
    "constant_complex": 4,
    "repeated_real": 2,
    "repeated_complex": 1,
    "integrator": 2,
    "mixed_real": 3,
    "mixed_complex": 1,
    "transition": 1,
}


class BenchmarkError(ValueError):
    """Invalid benchmark specification or generation failure."""


def _states_per_item(family, multiplicity):
    size = 2 if family.endswith("complex") else 1
    if family.startswith("repeated") or family == "transition":
        size *= multiplicity
    return size


@dataclass
class BenchmarkSpec:
    """Benchmark composition.  ``counts`` holds the number of templates per
    family: complex families count conjugate pairs, repeated families and
    ``transition`` count multiplicity groups."""

    n_x: int = 80
    n_u: int = 2
    n_y: int = 2
    rho_min: float = 0.0
    rho_max: float = 1.0
    N0: int = 60
    N: int = 100
    degree: int = 14
    rate_bound: float = 0.05
    multiplicity: int = 2
    counts: dict = field(default_factory=lambda: dict(DEFAULT_COUNTS))
    varying_block_fraction: float = 0.25
    perturbation_scale: float = 1.0
    block_perturbation: str = "nilpotent"
    seed: int = 0
    max_retries: int = 20

    def __post_init__(self):
        unknown = set(self.counts) - set(FAMILIES)
        if unknown:
            raise BenchmarkError(f"unknown families: {sorted(unknown)}")
        counts = {f: int(self.counts.get(f, 0)) for f in FAMILIES}
        if any(c < 0 for c in counts.values()):
            raise BenchmarkError("family counts must be nonnegative")
        self.counts = counts
        total = self.total_states()
        if total != self.n_x:
            raise BenchmarkError(f"family block dimensions sum to {total}, expected n_x={self.n_x}")
        if self.degree >= self.N0:
            raise BenchmarkError("polynomial degree must be smaller than N0")
        if self.N < 2 or self.N0 < 2:
            raise BenchmarkError("grids need at least two points")
        if not self.rho_max > self.rho_min:
            raise BenchmarkError("rho_max must exceed rho_min")
        if self.rate_bound < 0:
            raise BenchmarkError("rate_bound must be nonnegative")
        if self.multiplicity < 1:
            raise BenchmarkError("multiplicity must be positive")
        if self.block_perturbation not in ("nilpotent", "general"):
            raise BenchmarkError("block_perturbation must be 'nilpotent' or 'general'")

    def total_states(self):
        return sum(c * _states_per_item(f, self.multiplicity) for f, c in self.counts.items())

    @classmethod
    def from_dict(cls, data):
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise BenchmarkError(f"unknown benchmark spec keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return asdict(self)


def family_catalog():
    """Eigenvalue templates per family and the ranges their parameters are
    drawn from (``a`` decay, ``c`` frequency)."""
    return {
        "pv_real": {"template": "lambda = -a - b*rho", "a": [0.1, 10.0], "b": "a * U[-0.5, 1.0]"},
        "pv_complex": {"template": "lambda = -a - b*rho +/- i(c + e*rho)", "a": [0.1, 10.0],
                       "b": "a * U[-0.5, 1.0]", "c": [0.1, 20.0], "e": "c * U[-0.5, 0.5]"},
        "constant_real": {"template": "lambda = -a", "a": [0.1, 10.0]},
        "constant_complex": {"template": "lambda = -a +/- i c", "a": [0.1, 10.0], "c": [0.1, 20.0]},
        "repeated_real": {"template": "multiplicity copies of -a - b*rho",
                          "a": [0.1, 10.0], "b": "a * U[-0.5, 1.0]"},
        "repeated_complex": {"template": "multiplicity copies of -a - b*rho +/- i(c + e*rho)",
                             "a": [0.1, 10.0], "b": "a * U[-0.5, 1.0]", "c": [0.1, 20.0],
                             "e": "c * U[-0.5, 0.5]"},
        "integrator": {"template": "lambda = 0"},
        "mixed_real": {"template": "lambda = -a + b*rho, a/b inside the parameter range",
                       "b": [0.5, 10.0], "a": "b * root, root in the middle 60% of the range"},
        "mixed_complex": {"template": "lambda = -a + b*rho +/- i(c + e*rho)", "b": [0.5, 10.0],
                          "a": "b * root", "c": [0.1, 20.0], "e": "c * U[-0.5, 0.5]"},
        "transition": {"template": "multiplicity copies of the constant -a",
                       "a": [0.1, 10.0]},
    }


@dataclass
class GroundTruth:
    rho_grid0: np.ndarray
    rho_grid: np.ndarray
    values0: np.ndarray
    values: np.ndarray
    family: list
    class_id: list
    params: list
    T0: np.ndarray
    S: np.ndarray
    drift: np.ndarray
    seed: int
    attempts: int = 1

    def census(self):
        out = {"stable": 0, "unstable": 0, "mixed": 0, "integrator": 0}
        for f in self.family:
            if f == "integrator":
                out["integrator"] += 1
            elif f.startswith("mixed"):
                out["mixed"] += 1
            else:
                out["stable"] += 1
        return out

    def to_dict(self):
        cplx = lambda Z: {"re": np.real(Z).tolist(), "im": np.imag(Z).tolist()}  # noqa: E731
        return {
            "seed": self.seed,
            "attempts": self.attempts,
            "rho_grid0": self.rho_grid0.tolist(),
            "rho_grid": self.rho_grid.tolist(),
            "values0": cplx(self.values0),
            "values": cplx(self.values),
            "family": list(self.family),
            "class_id": list(map(int, self.class_id)),
            "params": self.params,
            "T0": self.T0.tolist(),
            "S": self.S.tolist(),
            "drift": self.drift.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        cplx = lambda z: np.asarray(z["re"]) + 1j * np.asarray(z["im"])  # noqa: E731
        return cls(np.asarray(d["rho_grid0"]), np.asarray(d["rho_grid"]), cplx(d["values0"]),
                   cplx(d["values"]), list(d["family"]), list(d["class_id"]), d["params"],
                   np.asarray(d["T0"]), np.asarray(d["S"]), np.asarray(d["drift"]),
                   int(d["seed"]), int(d.get("attempts", 1)))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


# --- step 1: modal matrix -----------------------------------------------

def _crossing_root(rng, grids, lo, hi):
    spacing = min(np.min(np.diff(g)) for g in grids)
    for _ in range(1000):
        r = lo + (hi - lo) * rng.uniform(0.2, 0.8)
        if all(np.min(np.abs(g - r)) > 0.25 * spacing for g in grids):
            return r
    raise BenchmarkError("could not place an axis crossing away from the grids")


def _draw_blocks(spec, rng, grids):
    """List of (family, size, params, class) items in shuffled order."""
    items = []
    lo, hi = spec.rho_min, spec.rho_max
    for fam in FAMILIES:
        for _ in range(spec.counts[fam]):
            p = {}
            if fam in ("pv_real", "pv_complex", "repeated_real", "repeated_complex"):
                p["a"] = float(rng.uniform(0.1, 10.0))
                p["b"] = float(p["a"] * rng.uniform(-0.5, 1.0))
            elif fam in ("constant_real", "constant_complex", "transition"):
                p["a"] = float(rng.uniform(0.1, 10.0))
                p["b"] = 0.0
            elif fam in ("mixed_real", "mixed_complex"):
                b = float(rng.uniform(0.5, 10.0))
                root = _crossing_root(rng, grids, lo, hi)
                # Re(lambda) = -a + b*rho vanishes at rho = root
                p["a"] = b * root
                p["b"] = -b
            if fam.endswith("complex"):
                p["c"] = float(rng.uniform(0.1, 20.0))
                p["e"] = 0.0 if fam == "constant_complex" else float(p["c"] * rng.uniform(-0.5, 0.5))
            items.append((fam, p))
    order = rng.permutation(len(items))
    return [items[i] for i in order]


def _block_values(fam, p, rho):
    """Eigenvalues (len(rho), m) of one template, in block column order."""
    if fam == "integrator":
        return np.zeros((rho.size, 1), dtype=complex)
    re = -p["a"] - p["b"] * rho
    if "c" in p:
        im = p["c"] + p["e"] * rho
        return np.stack([re + 1j * im, re - 1j * im], axis=1)
    return re[:, None].astype(complex)


def _modal_matrix(items, rho, multiplicity):
    """A0 on the points ``rho`` and the per-state eigenvalue functions."""
    blocks, vals, fams, classes = [], [], [], []
    cls = 0
    for fam, p in items:
        v = _block_values(fam, p, rho)
        copies = multiplicity if (fam.startswith("repeated") or fam == "transition") else 1
        base_cls = cls
        cls += v.shape[1]
        for _ in range(copies):
            if v.shape[1] == 2:
                a, b = v[:, 0].real, v[:, 0].imag
                blk = np.zeros((rho.size, 2, 2))
                blk[:, 0, 0] = blk[:, 1, 1] = a
                blk[:, 0, 1] = b
                blk[:, 1, 0] = -b
            else:
                blk = v.real[:, :, None].copy()
            blocks.append(blk)
            vals.append(v)
            fams.extend([fam] * v.shape[1])
            classes.extend(range(base_cls, base_cls + v.shape[1]))
    n = sum(b.shape[1] for b in blocks)
    A0 = np.zeros((rho.size, n, n))
    off = 0
    for blk in blocks:
        m = blk.shape[1]
        A0[:, off:off + m, off:off + m] = blk
        off += m
    return A0, np.concatenate(vals, axis=1), fams, classes


# --- step 3: similarity transform -----------------------------------------

def _random_T0(rng, n):
    U, _ = np.linalg.qr(rng.standard_normal((n, n)))
    V, _ = np.linalg.qr(rng.standard_normal((n, n)))
    s = np.exp(rng.uniform(0.0, np.log(10.0), n))
    return (U * s) @ V.T


def _random_S(rng, n, fraction, scale, kind):
    S = np.zeros((n, n))
    nblocks = n // 2
    count = int(round(fraction * nblocks))
    for b in sorted(rng.choice(nblocks, size=count, replace=False)):
        i = 2 * b
        if kind == "nilpotent":
            # rank-one with u orthogonal to v: (I + rho S)^{-1} = I - rho S
            th = rng.uniform(0, 2 * np.pi)
            u = np.array([np.cos(th), np.sin(th)])
            v = np.array([-u[1], u[0]])
            S[i:i + 2, i:i + 2] = scale * rng.uniform(0.5, 3.0) * np.outer(u, v)
        else:
            S[i:i + 2, i:i + 2] = scale * rng.uniform(-1.0, 1.0, (2, 2))
    return S


def _transform(T0, S, rho):
    n = T0.shape[0]
    return np.stack([T0 @ (np.eye(n) + r * S) for r in rho])


# --- step 4: polynomial deformation ---------------------------------------

def _poly_refit(x0, Y, degree, x, lo, hi):
    """Least-squares Chebyshev fit per column of ``Y`` and evaluation at ``x``."""
    def scale(t):
        return (2.0 * (np.asarray(t) - lo) / (hi - lo)) - 1.0
    flat = Y.reshape(Y.shape[0], -1)
    coef = chebyshev.chebfit(scale(x0), flat, degree)
    out = chebyshev.chebval(scale(x), coef).T
    return out.reshape((len(x),) + Y.shape[1:])


def _match_truth(lam, truth):
    """Assign computed eigenvalues to truth entries; returns lam in truth order."""
    C = np.abs(lam[:, None] - truth[None, :])
    perm, _ = min_cost_assignment(C.T)
    return lam[perm]


def _label(values, fam, tol_int=1e-8, tol=1e-9):
    if fam == "integrator":
        return bool(np.all(np.abs(values) <= tol_int))
    if fam.startswith("mixed"):
        re = values.real
        return bool(np.any(re < -tol) and np.any(re > tol) and np.all(np.abs(re) > tol))
    return bool(np.all(values.real < -tol))


def generate(spec=None, **overrides):
    """Generate a benchmark model and its ground truth.

    Deterministic for a given ``spec.seed``.

    Raises
    ------
    BenchmarkError
        If no acceptable instance is found within ``spec.max_retries``.
    """
    if spec is None:
        spec = BenchmarkSpec(**overrides)
    elif overrides:
        spec = BenchmarkSpec(**{**spec.to_dict(), **overrides})
    rng = np.random.default_rng(spec.seed)
    lo, hi = spec.rho_min, spec.rho_max
    rho0 = np.linspace(lo, hi, spec.N0)
    rho = np.linspace(lo, hi, spec.N)
    n = spec.n_x
    items = _draw_blocks(spec, rng, (rho0, rho))
    A00, vals0, fams, classes = _modal_matrix(items, rho0, spec.multiplicity)
    A0N, valsN, _, _ = _modal_matrix(items, rho, spec.multiplicity)
    B0 = rng.standard_normal((n, spec.n_u))
    C0 = rng.standard_normal((spec.n_y, n))
    D0 = np.zeros((spec.n_y, spec.n_u))
    params = [{"family": f, **p} for f, p in items]

    for attempt in range(1, spec.max_retries + 1):
        T0 = _random_T0(rng, n)
        S = _random_S(rng, n, spec.varying_block_fraction, spec.perturbation_scale,
                      spec.block_perturbation)
        T = _transform(T0, S, rho0)
        if max(np.linalg.cond(Tk) for Tk in T) > 1e4:
            continue
        Tinv = np.linalg.inv(T)
        A = T @ A00 @ Tinv
        Bs = T @ B0
        Cs = C0[None] @ Tinv
        Ds = np.broadcast_to(D0, (spec.N0,) + D0.shape)
        AN = _poly_refit(rho0, A, spec.degree, rho, lo, hi)
        BN = _poly_refit(rho0, Bs, spec.degree, rho, lo, hi)
        CN = _poly_refit(rho0, Cs, spec.degree, rho, lo, hi)
        DN = _poly_refit(rho0, np.asarray(Ds), spec.degree, rho, lo, hi)
        ok = True
        fitted = np.empty_like(valsN)
        for k in range(spec.N):
            lam, V = np.linalg.eig(AN[k])
            if np.linalg.cond(V) > 1e10:
                ok = False
                break
            fitted[k] = _match_truth(lam, valsN[k])
        if not ok:
            continue
        if not all(_label(fitted[:, i], fams[i]) for i in range(n)):
            continue
        drift = np.max(np.abs(fitted - valsN), axis=0)
        model = GridLpvModel(rho, AN, BN, CN, DN, spec.rate_bound)
        truth = GroundTruth(rho0, rho, vals0, valsN, fams, classes, params, T0, S, drift,
                            spec.seed, attempt)
        return model, truth
    raise BenchmarkError(
        f"no acceptable instance within {spec.max_retries} attempts; try a different seed")
