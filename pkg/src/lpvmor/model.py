"""Grid-based LPV models and their JSON exchange format.

A :class:`GridLpvModel` stores LTI snapshots ``(A_k, B_k, C_k, D_k)`` of a
continuous-time LPV system at the scheduling values ``rho_1 < ... < rho_N``
together with a bound on ``|d rho / dt|``.  Between grid points the model is
interpolated linearly.

A :class:`ReducedLpvModel` additionally depends on the parameter rate: its
state matrix is stored at the two rate vertices ``rhodot = -delta`` and
``rhodot = +delta`` of every grid point.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class ModelError(ValueError):
    """Raised for malformed or inconsistent model data."""


@dataclass(frozen=True)
class LtiSnapshot:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    rho: float = float("nan")

    @property
    def n_x(self):
        return self.A.shape[0]


def _as_matrix(value, shape, name, k):
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ModelError(f"point {k}: matrix {name} is not numeric") from exc
    if arr.size == 0:
        arr = arr.reshape(shape)
    if arr.ndim != 2 or arr.shape != tuple(shape):
        raise ModelError(
            f"dimension mismatch at point {k}: {name} has shape {arr.shape}, "
            f"expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ModelError(f"non-finite entry at point {k} in matrix {name}")
    return arr


def _check_grid(rho_grid):
    rho = np.asarray(rho_grid, dtype=float)
    if rho.ndim != 1 or rho.size < 2:
        raise ModelError("rho_grid must hold at least two values")
    if not np.all(np.isfinite(rho)):
        raise ModelError("non-finite entry in rho_grid")
    if np.any(np.diff(rho) <= 0):
        raise ModelError("non-monotone grid: rho_grid must be strictly increasing")
    return rho


@dataclass(frozen=True)
class GridLpvModel:
    """State-space matrices sampled on a scheduling-parameter grid.

    Parameters
    ----------
    rho_grid : (N,) array
        Strictly increasing scheduling values.
    A, B, C, D : arrays of shape (N, n, n), (N, n, m), (N, p, n), (N, p, m)
        Stacked snapshot matrices.
    rate_bound : float
        Bound ``delta`` on the absolute parameter rate.
    """

    rho_grid: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    rate_bound: float = 0.0

    def __post_init__(self):
        rho = _check_grid(self.rho_grid)
        N = rho.size
        A = np.asarray(self.A, dtype=float)
        B = np.asarray(self.B, dtype=float)
        C = np.asarray(self.C, dtype=float)
        D = np.asarray(self.D, dtype=float)
        for name, arr in (("A", A), ("B", B), ("C", C), ("D", D)):
            if arr.ndim != 3 or arr.shape[0] != N:
                raise ModelError(f"{name} must be stacked over the {N} grid points")
            if not np.all(np.isfinite(arr)):
                k = int(np.argwhere(~np.isfinite(arr))[0][0])
                raise ModelError(f"non-finite entry at point {k} in matrix {name}")
        n, m, p = A.shape[1], B.shape[2], C.shape[1]
        expected = {"A": (n, n), "B": (n, m), "C": (p, n), "D": (p, m)}
        for name, arr in (("A", A), ("B", B), ("C", C), ("D", D)):
            if arr.shape[1:] != expected[name]:
                raise ModelError(
                    f"dimension mismatch: {name} has shape {arr.shape[1:]}, "
                    f"expected {expected[name]}")
        delta = float(self.rate_bound)
        if not np.isfinite(delta) or delta < 0:
            raise ModelError("rate_bound must be a nonnegative finite number")
        object.__setattr__(self, "rho_grid", rho)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "rate_bound", delta)

    @property
    def n_x(self):
        return self.A.shape[1]

    @property
    def n_u(self):
        return self.B.shape[2]

    @property
    def n_y(self):
        return self.C.shape[1]

    @property
    def N(self):
        return self.rho_grid.size

    def snapshot(self, k):
        return LtiSnapshot(self.A[k], self.B[k], self.C[k], self.D[k],
                           float(self.rho_grid[k]))

    def replace(self, **changes):
        fields = dict(rho_grid=self.rho_grid, A=self.A, B=self.B, C=self.C,
                      D=self.D, rate_bound=self.rate_bound)
        fields.update(changes)
        return GridLpvModel(**fields)


@dataclass(frozen=True)
class ReducedLpvModel:
    """Rate-dependent grid model produced by the reduction.

    ``A_vertex[k, s]`` is the state matrix at ``(rho_k, nu_s)`` with
    ``nu = (-delta, +delta)``.  B, C, D depend on ``rho`` only.
    """

    rho_grid: np.ndarray
    A_vertex: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    rate_bound: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        rho = _check_grid(self.rho_grid)
        N = rho.size
        Av = np.asarray(self.A_vertex, dtype=float)
        B = np.asarray(self.B, dtype=float)
        C = np.asarray(self.C, dtype=float)
        D = np.asarray(self.D, dtype=float)
        if Av.ndim != 4 or Av.shape[:2] != (N, 2) or Av.shape[2] != Av.shape[3]:
            raise ModelError("A_vertex must have shape (N, 2, n, n)")
        n = Av.shape[2]
        if B.shape[:2] != (N, n) or C.shape[0] != N or C.shape[2] != n:
            raise ModelError("B and C must match the reduced state dimension")
        if D.shape != (N, C.shape[1], B.shape[2]):
            raise ModelError("D has inconsistent shape")
        for name, arr in (("A", Av), ("B", B), ("C", C), ("D", D)):
            if not np.all(np.isfinite(arr)):
                raise ModelError(f"non-finite entry in reduced matrix {name}")
        delta = float(self.rate_bound)
        if not np.isfinite(delta) or delta < 0:
            raise ModelError("rate_bound must be a nonnegative finite number")
        object.__setattr__(self, "rho_grid", rho)
        object.__setattr__(self, "A_vertex", Av)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "rate_bound", delta)
        meta = {"unstable_states": 0, "integrators": 0}
        meta.update(self.meta or {})
        object.__setattr__(self, "meta", meta)

    @property
    def n_x(self):
        return self.A_vertex.shape[2]

    @property
    def n_u(self):
        return self.B.shape[2]

    @property
    def n_y(self):
        return self.C.shape[1]

    @property
    def N(self):
        return self.rho_grid.size

    @property
    def A(self):
        """State matrices at zero parameter rate (mean of the two vertices)."""
        return 0.5 * (self.A_vertex[:, 0] + self.A_vertex[:, 1])

    @property
    def rhodot_vertices(self):
        return np.array([-self.rate_bound, self.rate_bound])

    def snapshot(self, k, rhodot=0.0):
        return LtiSnapshot(self.state_matrix_at_vertex(k, rhodot), self.B[k],
                           self.C[k], self.D[k], float(self.rho_grid[k]))

    def state_matrix_at_vertex(self, k, rhodot=0.0):
        A0 = 0.5 * (self.A_vertex[k, 0] + self.A_vertex[k, 1])
        if self.rate_bound == 0.0 or rhodot == 0.0:
            return A0
        half = 0.5 * (self.A_vertex[k, 1] - self.A_vertex[k, 0])
        return A0 + (rhodot / self.rate_bound) * half


def _bracket(rho_grid, rho):
    lo, hi = rho_grid[0], rho_grid[-1]
    if not (lo <= rho <= hi):
        raise ModelError(f"rho={rho} outside the grid range [{lo}, {hi}]")
    k = int(np.searchsorted(rho_grid, rho, side="right")) - 1
    k = min(max(k, 0), rho_grid.size - 2)
    theta = (rho - rho_grid[k]) / (rho_grid[k + 1] - rho_grid[k])
    return k, theta


def _lerp(stack, k, theta):
    if theta == 0.0:
        return stack[k].copy()
    if theta == 1.0:
        return stack[k + 1].copy()
    return (1.0 - theta) * stack[k] + theta * stack[k + 1]


def interpolate(model, rho, rhodot=0.0):
    """Frozen LTI system at ``rho`` by entrywise linear interpolation.

    For a :class:`ReducedLpvModel` the state matrix is additionally
    interpolated linearly in ``rhodot`` between the rate vertices.
    """
    rho = float(rho)
    k, theta = _bracket(model.rho_grid, rho)
    if isinstance(model, ReducedLpvModel):
        Av = model.A_vertex
        A0 = 0.5 * (_lerp(Av[:, 0], k, theta) + _lerp(Av[:, 1], k, theta))
        if model.rate_bound > 0 and rhodot != 0.0:
            half = 0.5 * (_lerp(Av[:, 1], k, theta) - _lerp(Av[:, 0], k, theta))
            A0 = A0 + (rhodot / model.rate_bound) * half
        A = A0
    else:
        A = _lerp(model.A, k, theta)
    return LtiSnapshot(A, _lerp(model.B, k, theta), _lerp(model.C, k, theta),
                       _lerp(model.D, k, theta), rho)


# --- JSON I/O -------------------------------------------------------------

def model_to_dict(model):
    points = []
    A_pts = model.A
    for k in range(model.N):
        points.append({
            "rho": float(model.rho_grid[k]),
            "A": A_pts[k].tolist(),
            "B": model.B[k].tolist(),
            "C": model.C[k].tolist(),
            "D": model.D[k].tolist(),
        })
    out = {
        "n_x": int(model.n_x),
        "n_u": int(model.n_u),
        "n_y": int(model.n_y),
        "rho_grid": [float(r) for r in model.rho_grid],
        "rate_bound": float(model.rate_bound),
        "points": points,
    }
    if isinstance(model, ReducedLpvModel):
        nu = model.rhodot_vertices
        out["vertex_points"] = [
            {"rho": float(model.rho_grid[k]), "rhodot": float(nu[s]),
             "A": model.A_vertex[k, s].tolist()}
            for k in range(model.N) for s in range(2)
        ]
        out["meta"] = {key: (int(v) if isinstance(v, (int, np.integer)) else v)
                       for key, v in model.meta.items()}
    return out


def model_from_dict(data):
    try:
        n, m, p = int(data["n_x"]), int(data["n_u"]), int(data["n_y"])
        rho = _check_grid(data["rho_grid"])
        points = data["points"]
        delta = float(data.get("rate_bound", 0.0))
    except (KeyError, TypeError) as exc:
        raise ModelError(f"parse error: missing or invalid field {exc}") from exc
    if len(points) != rho.size:
        raise ModelError(f"expected {rho.size} points, found {len(points)}")
    A, B, C, D = [], [], [], []
    for k, pt in enumerate(points):
        try:
            A.append(_as_matrix(pt["A"], (n, n), "A", k))
            B.append(_as_matrix(pt["B"], (n, m), "B", k))
            C.append(_as_matrix(pt["C"], (p, n), "C", k))
            D.append(_as_matrix(pt["D"], (p, m), "D", k))
        except KeyError as exc:
            raise ModelError(f"parse error: point {k} lacks matrix {exc}") from exc
        if "rho" in pt and float(pt["rho"]) != rho[k]:
            raise ModelError(f"point {k}: rho does not match rho_grid")
    stack = lambda mats, shape: np.array(mats).reshape((rho.size,) + shape)
    if "vertex_points" in data:
        vps = data["vertex_points"]
        if len(vps) != 2 * rho.size:
            raise ModelError(f"expected {2 * rho.size} vertex points, found {len(vps)}")
        Av = np.empty((rho.size, 2, n, n))
        for idx, vp in enumerate(vps):
            k, s = divmod(idx, 2)
            expected_nu = delta if s else -delta
            if float(vp["rho"]) != rho[k] or float(vp["rhodot"]) != expected_nu:
                raise ModelError(f"vertex point {idx} is out of (rho, rhodot) order")
            Av[k, s] = _as_matrix(vp["A"], (n, n), "A", k)
        return ReducedLpvModel(rho, Av, stack(B, (n, m)), stack(C, (p, n)),
                               stack(D, (p, m)), delta, dict(data.get("meta", {})))
    return GridLpvModel(rho, stack(A, (n, n)), stack(B, (n, m)),
                        stack(C, (p, n)), stack(D, (p, m)), delta)


def load_model(path):
    """Read a grid or reduced model from a JSON file and validate it."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelError(f"parse error: {exc}") from exc
    return model_from_dict(data)


def save_model(model, path):
    """Write ``model`` as JSON.  Floats are written in round-trip form."""
    Path(path).write_text(json.dumps(model_to_dict(model)))
