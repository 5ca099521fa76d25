"""End-to-end acceptance checks, one test per criterion.

Every test records a PASS/FAIL line (printed and repeated in the pytest
terminal summary) before asserting.
"""
import json
import time

import numpy as np
import pytest

from lpvmor import benchmark, modal, tracking
from lpvmor.assignment import min_cost_assignment
from lpvmor.cli import main
from lpvmor.clustering import hac_complete_link
from lpvmor.gramian import verify_lmi
from lpvmor.linalg import solve_lyapunov
from lpvmor.model import GridLpvModel
from lpvmor.pipeline import PipelineConfig, reduce_model
from lpvmor.validation import simulate

from helpers import frozen_tf_error, modal_form, report_criterion, resolvent_response
from oracles import (expm_step_response, hankel_singular_values, naive_complete_link,
                     permutation_costs, random_stable, small_spec, truth_labels)

E2E_SEEDS = (1, 2, 3, 4, 5)
TRACKING_SEEDS = tuple(range(1, 11))


def check(number, ok, detail):
    line = report_criterion(number, bool(ok), detail)
    assert ok, line


def independent_max_eigs(sub, X, dual):
    """Largest eigenvalue of each inequality matrix, assembled from scratch."""
    out = np.empty((sub.rho_grid.size, 2))
    for k, r in enumerate(sub.rho_grid):
        Xk = X.X0 + r * X.X1
        for s, nu in enumerate((-sub.rate_bound, sub.rate_bound)):
            Av = sub.A[k] + sub.E[k, s]
            if dual:
                R = -nu * X.X1 + Av @ Xk + Xk @ Av.T + sub.B[k] @ sub.B[k].T
            else:
                R = nu * X.X1 + Av.T @ Xk + Xk @ Av + sub.C[k].T @ sub.C[k]
            out[k, s] = np.linalg.eigvalsh(0.5 * (R + R.T))[-1]
    return out


@pytest.fixture(scope="module")
def e2e_runs():
    """Default-configuration reductions of five seeded 80-state benchmarks."""
    runs = []
    for seed in E2E_SEEDS:
        model, truth = benchmark.generate(seed=seed)
        t0 = time.perf_counter()
        res = reduce_model(model, PipelineConfig())
        runs.append((seed, model, res, time.perf_counter() - t0))
    return runs


@pytest.fixture(scope="module")
def tracking_models():
    return [(seed,) + benchmark.generate(seed=seed) for seed in TRACKING_SEEDS]


# --- 1 ------------------------------------------------------------------------------

def test_criterion_01_hungarian_vs_exhaustive():
    rng = np.random.default_rng(1)
    solver_time, bad = 0.0, 0
    for trial in range(1000):
        n = int(rng.integers(1, 9))
        if trial % 2:
            C = rng.integers(0, 6, (n, n)).astype(float)
        else:
            C = rng.uniform(-10, 10, (n, n))
        t0 = time.perf_counter()
        perm, _ = min_cost_assignment(C)
        solver_time += time.perf_counter() - t0
        P, totals = permutation_costs(C)
        idx = int(np.flatnonzero(np.all(P == perm[None], axis=1))[0])
        bad += totals[idx] != totals.min()
    check(1, bad == 0 and solver_time < 10,
          f"{1000 - bad}/1000 optimal (exact), solver time {solver_time:.2f} s")


# --- 2 ------------------------------------------------------------------------------

def test_criterion_02_hac_vs_naive():
    rng = np.random.default_rng(2)
    solver_time, bad = 0.0, 0
    for trial in range(200):
        n = int(rng.integers(2, 65))
        X = rng.integers(0, 8, (n, n)).astype(float) if trial % 2 else rng.uniform(0, 1, (n, n))
        H = np.triu(X, 1)
        H = H + H.T
        t0 = time.perf_counter()
        d = hac_complete_link(H)
        solver_time += time.perf_counter() - t0
        bad += d.merges != naive_complete_link(H)
    check(2, bad == 0 and solver_time < 30,
          f"{200 - bad}/200 merge sequences identical, solver time {solver_time:.2f} s")


# --- 3 ------------------------------------------------------------------------------

def test_criterion_03_lyapunov_residual():
    rng = np.random.default_rng(3)
    worst, pd, t0 = 0.0, True, time.perf_counter()
    for n in range(1, 51):
        for _ in range(3):
            A = random_stable(rng, n)
            M = rng.standard_normal((n, n))
            Q = M @ M.T + 1e-3 * np.eye(n)
            X = solve_lyapunov(A, Q)
            R = A.T @ X + X @ A + Q
            rel = np.linalg.norm(R) / (2 * np.linalg.norm(A) * np.linalg.norm(X)
                                       + np.linalg.norm(Q))
            worst = max(worst, rel)
            pd &= bool(np.linalg.eigvalsh(X)[0] > 0)
    elapsed = time.perf_counter() - t0
    check(3, worst <= 1e-8 and pd and elapsed < 10,
          f"worst relative residual {worst:.2e}, all PD: {pd}, {elapsed:.2f} s")


# --- 4 ------------------------------------------------------------------------------

def test_criterion_04_hyperbolic_metric():
    exact = tracking.hyperbolic_distance(0.5, -0.5) == 0.8
    rng = np.random.default_rng(4)

    def disk(m):
        r = np.sqrt(rng.uniform(0, 0.999, m))
        return r * np.exp(2j * np.pi * rng.uniform(size=m))

    a, b, c = disk(10000), disk(10000), disk(10000)
    dab, dba = tracking.hyperbolic_distance(a, b), tracking.hyperbolic_distance(b, a)
    sym = np.max(np.abs(dab - dba))
    in_range = bool(np.all((dab >= 0) & (dab < 1)))
    zero = np.max(tracking.hyperbolic_distance(a, a))
    positive = bool(np.all(dab[a != b] > 0))
    tri = np.max(dab - tracking.hyperbolic_distance(a, c) - tracking.hyperbolic_distance(c, b))
    ok = exact and sym <= 1e-12 and in_range and zero <= 1e-12 and positive and tri <= 1e-12
    check(4, ok, f"h(0.5,-0.5)=0.8 exact: {exact}; symmetry {sym:.1e}, d(a,a) {zero:.1e}, "
                 f"triangle excess {max(tri, 0):.1e}")


# --- 5 ------------------------------------------------------------------------------

def test_criterion_05_modal_form():
    t0 = time.perf_counter()
    w = np.logspace(-2, 2, 20)
    worst_off = worst_tf = 0.0
    for i in range(20):
        model, _ = benchmark.generate(small_spec(20 + i, 100 + i))
        _, model_r, mf, _, _ = modal_form(model)
        worst_off = max(worst_off, float(mf.offblock_residual().max()))
        worst_tf = max(worst_tf, frozen_tf_error(model_r, mf, w))
    elapsed = time.perf_counter() - t0
    check(5, worst_off <= 1e-8 and worst_tf <= 1e-8 and elapsed < 120,
          f"off-block {worst_off:.1e}, transfer function {worst_tf:.1e}, {elapsed:.1f} s")


# --- 6 and 7 ------------------------------------------------------------------------------

def test_criterion_06_smoothing(tracking_models):
    t0 = time.perf_counter()
    ratios = []
    for _, model, _ in tracking_models:
        _, _, _, T, T_raw = modal_form(model)
        before, _ = modal.max_transform_derivative(model.rho_grid, T_raw)
        after, _ = modal.max_transform_derivative(model.rho_grid, T)
        ratios.append(before / after)
    elapsed = time.perf_counter() - t0
    good = sum(r >= 5 for r in ratios)
    check(6, good >= 8 and elapsed < 300,
          f"{good}/10 seeds at >= 5x (ratios {', '.join(f'{r:.1f}' for r in ratios)}), "
          f"{elapsed:.1f} s")


def test_criterion_07_tracking(tracking_models):
    t0 = time.perf_counter()
    worst, excluded = 1.0, 0
    per_seed = []
    for _, model, truth in tracking_models:
        res = tracking.match_grid(tracking.decompose_grid(model))
        gaps = tracking.transition_tie_gaps(res, per_row=True)
        lab = truth_labels(res.values, truth.values)
        ok = total = 0
        for k in range(model.N - 1):
            for i in range(model.n_x):
                if gaps[k, i] <= 1e-9:
                    excluded += 1
                    continue
                total += 1
                j0, j1 = lab[k, i], lab[k + 1, i]
                v0, v1 = truth.values[k + 1, j0], truth.values[k + 1, j1]
                ok += j0 == j1 or abs(v0 - v1) <= 1e-12 * max(1.0, abs(v0))
        per_seed.append(ok / total)
        worst = min(worst, ok / total)
    elapsed = time.perf_counter() - t0
    check(7, worst >= 0.99 and elapsed < 120,
          f"worst seed {100 * worst:.2f}% correct transitions, {excluded} tied excluded, "
          f"{elapsed:.1f} s")


# --- 8 ------------------------------------------------------------------------------

def test_criterion_08_lti_degeneracy():
    t0 = time.perf_counter()
    worst_sig, worst_ratio = 0.0, 0.0
    for seed in range(3):
        rng = np.random.default_rng(80 + seed)
        n = 12 + 4 * seed
        A = random_stable(rng, n)
        B, C, D = rng.standard_normal((n, 2)), rng.standard_normal((2, n)), np.zeros((2, 2))
        N = 5
        st = lambda M: np.stack([M] * N)  # noqa: E731
        model = GridLpvModel(np.linspace(0, 1, N), st(A), st(B), st(C), st(D), 0.0)
        cfg = PipelineConfig.from_dict({
            "gramian": {"margin": 0.0},
            "clustering": {"cut_threshold": 1e9, "max_cluster_size": n},
            "validation": {"in_reduce": False}})
        res = reduce_model(model, cfg)
        assert len(res.factors) == 1
        sig = hankel_singular_values(A, B, C)
        r = res.reduced.n_x
        kept = res.factors[0].sorted_sigma[:, :r]
        worst_sig = max(worst_sig, float(np.max(np.abs(kept - sig[:r]) / sig[:r])))
        w = np.logspace(-3, 3, 100)
        G = resolvent_response(A, B, C, D, w)
        red = res.reduced
        Gr = resolvent_response(red.A[0], red.B[0], red.C[0], red.D[0], w)
        err = np.linalg.norm(G - Gr, ord=2, axis=(1, 2)).max()
        worst_ratio = max(worst_ratio, err / (2 * sig[r:].sum()))
    elapsed = time.perf_counter() - t0
    check(8, worst_sig <= 1e-6 and worst_ratio <= 1 and elapsed < 30,
          f"kept HSV relative error {worst_sig:.1e}, H-inf error / bound {worst_ratio:.2f}, "
          f"{elapsed:.1f} s")


# --- 9 ------------------------------------------------------------------------------

def test_criterion_09_gramian_feasibility(e2e_runs):
    worst, accepted = -np.inf, 0
    for _, _, res, _ in e2e_runs:
        for sub, g in zip(res.subsystems, res.gramians):
            if not g.accepted:
                continue
            accepted += 1
            m = g.report.margin
            assert verify_lmi(sub, g.X_o, g.X_c, m).feasible
            worst = max(worst, float(np.max(independent_max_eigs(sub, g.X_o, False) + m)),
                        float(np.max(independent_max_eigs(sub, g.X_c, True) + m)))
    model, _ = benchmark.generate(small_spec(24, 7))
    cfg = PipelineConfig.from_dict({"gramian": {"backend": "barrier", "barrier_max_size": 10},
                                    "clustering": {"max_cluster_size": 10},
                                    "validation": {"in_reduce": False}})
    res = reduce_model(model, cfg)
    refined, monotone = 0, True
    for sub, g in zip(res.subsystems, res.gramians):
        h = np.asarray(g.trace_history)
        if h.size:
            refined += 1
            monotone &= bool(np.all(np.diff(h) <= 1e-8 * max(1.0, abs(h[0]))))
        if g.accepted:
            accepted += 1
            m = g.report.margin
            worst = max(worst, float(np.max(independent_max_eigs(sub, g.X_o, False) + m)),
                        float(np.max(independent_max_eigs(sub, g.X_c, True) + m)))
    check(9, worst <= 0 and refined > 0 and monotone,
          f"{accepted} accepted pairs, max(lambda_max + eps) = {worst:.2e}; "
          f"{refined} refined clusters, trace histories nonincreasing: {monotone}")


# --- 10 and 11 ------------------------------------------------------------------------

def test_criterion_10_end_to_end(e2e_runs):
    rows, ok = [], True
    for seed, model, res, elapsed in e2e_runs:
        gap = res.report.validation["max_pointwise_gap"]
        n_red = res.reduced.n_x
        ok &= elapsed < 600 and n_red <= 0.5 * model.n_x and gap <= 0.2
        rows.append(f"seed {seed}: n_red {n_red}, gap {gap:.3f}, {elapsed:.0f} s")
    check(10, ok, "; ".join(rows))


def test_criterion_11_cophenetic(e2e_runs):
    values = [res.report.clustering["cophenetic"] for _, _, res, _ in e2e_runs]
    good = sum(v >= 0.7 for v in values)
    check(11, good >= 4, f"{good}/5 at >= 0.7 ({', '.join(f'{v:.3f}' for v in values)})")


# --- 12 ------------------------------------------------------------------------------

def test_criterion_12_rk4_convergence():
    worst, ratios = 0.0, []
    for seed in range(5):
        rng = np.random.default_rng(120 + seed)
        n = 6
        A = random_stable(rng, n, max_abs=10.0)
        B, C, D = rng.standard_normal((n, 1)), rng.standard_normal((1, n)), np.zeros((1, 1))
        x0 = rng.standard_normal(n)
        st = lambda M: np.stack([M, M])  # noqa: E731
        model = GridLpvModel(np.array([0.0, 1.0]), st(A), st(B), st(C), st(D), 0.0)
        ref = expm_step_response(A, B, C, D, x0, np.ones(1), 2.0)[0]

        def err(dt):
            _, y = simulate(model, lambda s: 0.5, lambda s: np.ones(1), 2.0, dt,
                            rhodot_fn=lambda s: 0.0, x0=x0)
            return abs(y[-1, 0] - ref) / abs(ref)

        worst = max(worst, err(1e-3))
        ratios.append(err(1e-2) / err(5e-3))
    ok = worst <= 1e-6 and all(8 <= r <= 32 for r in ratios)
    check(12, ok, f"max error at dt=1e-3 {worst:.1e}; halving ratios "
                  f"{', '.join(f'{r:.1f}' for r in ratios)}")


# --- 13 ------------------------------------------------------------------------------

def test_criterion_13_determinism(tmp_path):
    model_path = tmp_path / "m.json"
    (tmp_path / "spec.json").write_text(json.dumps(small_spec(30, 13).to_dict()))
    assert main(["generate", "--config", str(tmp_path / "spec.json"),
                 "--out", str(model_path)]) == 0
    outputs = []
    for run, jobs in (("a", "1"), ("b", "1"), ("c", "2")):
        out = tmp_path / run / "r.json"
        assert main(["reduce", str(model_path), "--out", str(out), "--jobs", jobs]) == 0
        files = sorted(p for p in (tmp_path / run).rglob("*")
                       if p.is_file() and not p.name.endswith(".timings.json"))
        outputs.append({str(p.relative_to(tmp_path / run)): p.read_bytes() for p in files})
    same = outputs[0] == outputs[1] == outputs[2]
    check(13, same and len(outputs[0]) > 3,
          f"{len(outputs[0])} output files bit-identical across 3 runs: {same}")
