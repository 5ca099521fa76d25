"""Shared pipeline fragments for tests."""
import numpy as np

from lpvmor import modal, smoothing, tracking
from lpvmor.gramian import Subsystem

ACCEPTANCE_LINES = []


def report_criterion(number, ok, detail):
    """Record and print one PASS/FAIL line for an acceptance criterion."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def modal_form(model, smooth=True):
    """Run tracking, multiplicity grouping, repair and modal assembly."""
    eg = tracking.decompose_grid(model)
    res = tracking.match_grid(eg)
    groups = tracking.detect_multiplicity(res)
    res, model_r, repairs = smoothing.repair_complex_real(res, groups, model)
    T, units, T_raw = modal.build_local_transforms(res, groups, smooth, A=model_r.A)
    return res, model_r, modal.assemble_modal(model_r, T, units), T, T_raw


def resolvent_response(A, B, C, D, omega):
    """``C (jwI - A)^{-1} B + D`` by direct linear solves."""
    n = A.shape[0]
    return np.array([C @ np.linalg.solve(1j * w * np.eye(n) - A, B) + D for w in omega])


def frozen_tf_error(model, mf, omega):
    """Worst relative 2-norm mismatch between the grid model and the
    block-diagonal modal form over all grid points."""
    Ad = mf.block_diagonal()
    worst = 0.0
    for k in range(model.N):
        P1 = resolvent_response(model.A[k], model.B[k], model.C[k], model.D[k], omega)
        P2 = resolvent_response(Ad[k], mf.B_bar[k], mf.C_bar[k], mf.D[k], omega)
        num = np.linalg.norm(P1 - P2, ord=2, axis=(1, 2))
        den = np.maximum(np.linalg.norm(P1, ord=2, axis=(1, 2)), 1e-300)
        worst = max(worst, float(np.max(num / den)))
    return worst


def lpv_sub(n=2, N=11, delta=0.05, seed=0):
    """Small parameter-varying subsystem with a mild rate term."""
    rng = np.random.default_rng(seed)
    rho = np.linspace(0, 1, N)
    M = rng.standard_normal((n, n))
    A0 = -(M @ M.T / n + np.eye(n)) + 0.5 * (M - M.T)
    A1 = 0.2 * rng.standard_normal((n, n))
    A = np.stack([A0 + r * A1 for r in rho])
    E1 = 0.05 * rng.standard_normal((n, n))
    E = np.stack([np.stack([-E1, E1])] * N)
    B = np.broadcast_to(rng.standard_normal((n, 1)), (N, n, 1)).copy()
    C = np.broadcast_to(rng.standard_normal((1, n)), (N, 1, n)).copy()
    return Subsystem(rho, A, E, B, C, np.zeros((N, 1, 1)), delta)
