import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpvmor.linalg import (MatrixSpline, NearDefectiveError, NotHurwitzError, complex_lstsq,
                           eig_decompose, invariant_subspace, solve_lyapunov, spline_fit)
from lpvmor.model import (GridLpvModel, ModelError, ReducedLpvModel, interpolate, load_model,
                          model_to_dict, save_model)

from oracles import kron_lyapunov, random_stable


def grid_model(rng, n=2, N=3, m=1, p=1, delta=0.1):
    rho = np.linspace(0.0, 1.0, N)
    return GridLpvModel(rho, rng.standard_normal((N, n, n)), rng.standard_normal((N, n, m)),
                        rng.standard_normal((N, p, n)), rng.standard_normal((N, p, m)), delta)


def reduced_model(rng, n=2, N=3, m=1, p=1, delta=0.1):
    rho = np.linspace(0.0, 1.0, N)
    return ReducedLpvModel(rho, rng.standard_normal((N, 2, n, n)),
                           rng.standard_normal((N, n, m)), rng.standard_normal((N, p, n)),
                           rng.standard_normal((N, p, m)), delta,
                           {"unstable_states": 1, "integrators": 0})


# --- model I/O ------------------------------------------------------------

def test_load_well_formed_file(tmp_path):
    m = grid_model(np.random.default_rng(0))
    path = tmp_path / "m.json"
    save_model(m, path)
    back = load_model(path)
    assert back.N == 3 and back.n_x == 2


def test_non_monotone_grid_rejected(tmp_path):
    d = model_to_dict(grid_model(np.random.default_rng(1)))
    d["rho_grid"] = [0.0, 0.0, 1.0]
    for pt, r in zip(d["points"], d["rho_grid"]):
        pt["rho"] = r
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    with pytest.raises(ModelError, match="non-monotone grid"):
        load_model(path)


def test_wrong_shape_names_point(tmp_path):
    d = model_to_dict(grid_model(np.random.default_rng(2)))
    d["points"][2]["A"] = [[1.0, 2.0, 3.0]]
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    with pytest.raises(ModelError, match="point 2"):
        load_model(path)


def test_non_finite_entry_rejected(tmp_path):
    d = model_to_dict(grid_model(np.random.default_rng(3)))
    text = json.dumps(d).replace(json.dumps(d["points"][1]["B"][0][0]), "NaN", 1)
    path = tmp_path / "bad.json"
    path.write_text(text)
    with pytest.raises(ModelError, match="non-finite"):
        load_model(path)


def test_parse_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ModelError, match="parse error"):
        load_model(path)


def test_grid_round_trip_bit_exact(tmp_path):
    m = grid_model(np.random.default_rng(4), n=4, N=5, m=2, p=3)
    save_model(m, tmp_path / "m.json")
    back = load_model(tmp_path / "m.json")
    for name in ("rho_grid", "A", "B", "C", "D"):
        assert np.array_equal(getattr(m, name), getattr(back, name))
    assert back.rate_bound == m.rate_bound


def test_reduced_round_trip_keeps_vertices(tmp_path):
    r = reduced_model(np.random.default_rng(5), n=3, N=4)
    save_model(r, tmp_path / "r.json")
    back = load_model(tmp_path / "r.json")
    assert isinstance(back, ReducedLpvModel)
    assert np.array_equal(back.A_vertex, r.A_vertex)
    assert back.meta["unstable_states"] == 1
    d = json.loads((tmp_path / "r.json").read_text())
    assert len(d["vertex_points"]) == 2 * r.N
    assert {vp["rhodot"] for vp in d["vertex_points"]} == {-0.1, 0.1}


def test_save_to_unwritable_path(tmp_path):
    m = grid_model(np.random.default_rng(6))
    with pytest.raises(OSError):
        save_model(m, tmp_path / "missing_dir" / "m.json")


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(2, 6), st.integers(0, 2**31 - 1))
def test_round_trip_property(n, N, seed):
    import tempfile
    from pathlib import Path
    m = grid_model(np.random.default_rng(seed), n=n, N=N)
    with tempfile.TemporaryDirectory() as d:
        save_model(m, Path(d) / "m.json")
        back = load_model(Path(d) / "m.json")
    assert all(np.array_equal(getattr(m, a), getattr(back, a)) for a in ("A", "B", "C", "D"))


# --- interpolation ----------------------------------------------------------

def test_interpolate_at_knot_exact():
    m = grid_model(np.random.default_rng(7))
    s = interpolate(m, m.rho_grid[1])
    assert np.array_equal(s.A, m.A[1]) and np.array_equal(s.D, m.D[1])


def test_interpolate_midpoint_is_average():
    m = grid_model(np.random.default_rng(8))
    s = interpolate(m, 0.5 * (m.rho_grid[0] + m.rho_grid[1]))
    assert np.allclose(s.A, 0.5 * (m.A[0] + m.A[1]), atol=1e-15)


def test_interpolate_out_of_range():
    m = grid_model(np.random.default_rng(9))
    with pytest.raises(ModelError):
        interpolate(m, m.rho_grid[-1] + 1)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(0, 1))
def test_interpolation_affine_between_knots(theta, k):
    m = grid_model(np.random.default_rng(10))
    r = theta * m.rho_grid[k] + (1 - theta) * m.rho_grid[k + 1]
    s = interpolate(m, r)
    expect = theta * m.A[k] + (1 - theta) * m.A[k + 1]
    assert np.allclose(s.A, expect, atol=1e-12)


def test_reduced_interpolation_in_rate():
    r = reduced_model(np.random.default_rng(11))
    s = interpolate(r, r.rho_grid[0], rhodot=r.rate_bound)
    assert np.allclose(s.A, r.A_vertex[0, 1])
    s0 = interpolate(r, r.rho_grid[0])
    assert np.allclose(s0.A, 0.5 * (r.A_vertex[0, 0] + r.A_vertex[0, 1]))


# --- eigen-decomposition ----------------------------------------------------

def test_eig_diagonal():
    lam, V = eig_decompose(np.diag([-1.0, -2.0]))
    assert np.allclose(sorted(lam.real), [-2, -1])
    # each eigenvector is the matching unit basis vector
    for i in range(2):
        j = int(round(-lam[i].real)) - 1
        assert np.allclose(np.abs(V[:, i]), np.eye(2)[:, j])


def test_eig_rotation_conjugate_pair():
    lam, V = eig_decompose(np.array([[0.0, 1.0], [-1.0, 0.0]]))
    assert np.allclose(sorted(lam.imag), [-1, 1])
    assert np.isclose(lam[0], np.conj(lam[1]))
    assert np.allclose(V[:, 0], np.conj(V[:, 1]))


def test_eig_near_defective():
    with pytest.raises(NearDefectiveError, match="near-defective"):
        eig_decompose(np.array([[-1.0, 1.0], [0.0, -1.0]]))


def test_eig_non_square():
    with pytest.raises(ValueError):
        eig_decompose(np.zeros((2, 3)))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_eig_residual_and_phase(n, seed):
    A = np.random.default_rng(seed).standard_normal((n, n))
    try:
        lam, V = eig_decompose(A)
    except NearDefectiveError:
        return
    assert np.linalg.norm(A @ V - V * lam, axis=0).max() <= 1e-10 * max(np.linalg.norm(A, 2), 1)
    assert np.allclose(np.linalg.norm(V, axis=0), 1.0)
    piv = V[np.argmax(np.abs(V), axis=0), np.arange(n)]
    assert np.allclose(piv.imag, 0.0) and np.all(piv.real > 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_eigenvalues_invariant_under_similarity(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((n, n))
    T = rng.standard_normal((n, n)) + 3 * np.eye(n)
    if np.linalg.cond(T) > 1e3:
        return
    l1 = np.sort_complex(np.linalg.eigvals(A))
    l2 = np.sort_complex(eig_decompose(np.linalg.solve(T, A @ T))[0])
    assert np.allclose(l1, l2, atol=1e-8)


# --- Lyapunov -----------------------------------------------------------------

def test_lyapunov_scalar():
    assert np.allclose(solve_lyapunov(np.array([[-1.0]]), np.array([[1.0]])), 0.5)


def test_lyapunov_identity():
    assert np.allclose(solve_lyapunov(-np.eye(3), np.eye(3)), 0.5 * np.eye(3))


def test_lyapunov_random_against_kronecker_oracle():
    rng = np.random.default_rng(12)
    A = random_stable(rng, 20)
    B = rng.standard_normal((20, 2))
    X = solve_lyapunov(A, B @ B.T)
    R = A.T @ X + X @ A + B @ B.T
    assert np.linalg.norm(R) <= 1e-10 * (2 * np.linalg.norm(A) * np.linalg.norm(X))
    assert np.allclose(X, kron_lyapunov(A, B @ B.T), rtol=1e-8, atol=1e-10)


def test_lyapunov_not_hurwitz():
    with pytest.raises(NotHurwitzError, match="eigenvalue"):
        solve_lyapunov(np.diag([-1.0, 0.5]), np.eye(2))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2**31 - 1))
def test_lyapunov_pd_for_pd_rhs(n, seed):
    rng = np.random.default_rng(seed)
    A = random_stable(rng, n)
    M = rng.standard_normal((n, n))
    X = solve_lyapunov(A, M @ M.T + np.eye(n))
    assert np.array_equal(X, X.T)
    assert np.linalg.eigvalsh(X)[0] > 0


# --- complex least squares ------------------------------------------------------

def test_lstsq_square_identity():
    rng = np.random.default_rng(13)
    M = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    X, flag = complex_lstsq(M, M)
    assert np.allclose(X, np.eye(3)) and not flag


def test_lstsq_one_dimensional():
    X, _ = complex_lstsq(np.array([[1.0], [1j]]), np.array([[1j], [-1.0]]))
    assert np.allclose(X, [[1j]])


def test_lstsq_residual_orthogonal():
    rng = np.random.default_rng(14)
    M = rng.standard_normal((8, 3)) + 1j * rng.standard_normal((8, 3))
    R = rng.standard_normal((8, 2)) + 1j * rng.standard_normal((8, 2))
    X, _ = complex_lstsq(M, R)
    assert np.linalg.norm(M.conj().T @ (M @ X - R)) <= 1e-10 * np.linalg.norm(M) * np.linalg.norm(R)


def test_lstsq_rank_deficient_flag():
    M = np.array([[1.0, 2.0], [2.0, 4.0], [3.0, 6.0]])
    _, flag = complex_lstsq(M, np.ones((3, 1)))
    assert flag


# --- splines --------------------------------------------------------------------

def test_spline_constant_zero_derivative():
    s = spline_fit(np.linspace(0, 1, 5), np.ones((5, 2, 2)))
    assert np.allclose(s.derivative(np.linspace(0, 1, 11)), 0.0)


def test_spline_linear_slope():
    x = np.linspace(0, 2, 6)
    vals = np.stack([np.array([[2 * t, -t]]) for t in x])
    s = spline_fit(x, vals)
    d = s.derivative(np.linspace(0, 2, 13))
    assert np.allclose(d[:, 0, 0], 2.0) and np.allclose(d[:, 0, 1], -1.0)


def test_spline_sine_derivative():
    x = np.linspace(0, np.pi, 50)
    s = spline_fit(x, np.sin(x)[:, None, None])
    mids = 0.5 * (x[1:] + x[:-1])
    assert np.max(np.abs(s.derivative(mids)[:, 0, 0] - np.cos(mids))) <= 1e-4


def test_spline_exact_at_knots():
    rng = np.random.default_rng(15)
    x = np.sort(rng.uniform(0, 1, 7))
    v = rng.standard_normal((7, 3, 2))
    s = spline_fit(x, v)
    assert all(np.array_equal(s.evaluate(x[k]), v[k]) for k in range(7))
    assert np.array_equal(s.evaluate(x), v)


def test_spline_needs_two_knots():
    with pytest.raises(ValueError):
        MatrixSpline([0.0], np.ones((1, 2, 2)))


def test_spline_derivative_matches_finite_differences():
    rng = np.random.default_rng(16)
    x = np.linspace(0, 1, 12)
    v = np.cumsum(rng.standard_normal((12, 2, 2)), axis=0)
    s = spline_fit(x, v)
    h = 1e-6
    pts = 0.5 * (x[1:-2] + x[2:-1])
    fd = (s.evaluate(pts + h) - s.evaluate(pts - h)) / (2 * h)
    d = s.derivative(pts)
    assert np.max(np.abs(fd - d)) <= 1e-6 * max(1.0, np.max(np.abs(d)))


def test_spline_continuity_across_knots():
    rng = np.random.default_rng(17)
    x = np.linspace(0, 1, 8)
    s = spline_fit(x, rng.standard_normal((8, 2, 2)))
    e = 1e-9
    for k in range(1, 7):
        assert np.allclose(s.derivative(x[k] - e), s.derivative(x[k] + e), atol=1e-5)


# --- invariant subspaces --------------------------------------------------------

def test_invariant_subspace_of_pair():
    rng = np.random.default_rng(18)
    A = random_stable(rng, 6, complex_pairs=1)
    lam = np.linalg.eigvals(A)
    sel = lam[np.abs(lam.imag) > 0]
    rest = lam[np.abs(lam.imag) == 0]
    Z = invariant_subspace(A, sel, rest)
    assert Z.shape == (6, 2)
    # invariance: A Z stays in span(Z)
    P = Z @ Z.T
    assert np.linalg.norm(A @ Z - P @ A @ Z) <= 1e-10 * np.linalg.norm(A)
