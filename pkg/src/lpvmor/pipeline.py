"""End-to-end reduction pipeline and its configuration."""
from __future__ import annotations

import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import MISSING, asdict, dataclass, field, fields
from typing import Optional, Union

import numpy as np

from . import balred, clustering, gramian, modal, smoothing, tracking, validation
from .linalg import NotHurwitzError

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Unknown or invalid configuration entry."""


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, message):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage


# --- configuration --------------------------------------------------------

@dataclass
class TrackingSection:
    sampling_time: Union[float, str] = "auto"
    tol_int: float = 1e-8
    multiplicity_threshold: float = 1e-4
    mac_weighting: bool = True
    cluster_mac_weighting: bool = False
    stability_tol: float = 1e-9


@dataclass
class SmoothingSection:
    repair_budget: float = 1e-3
    enabled: bool = True


@dataclass
class ModalSection:
    drop_tol: float = 0.05


@dataclass
class ClusteringSection:
    cut_threshold: Union[float, str] = "auto"
    max_cluster_size: Optional[int] = None
    e2_penalty_weight: float = 0.0


@dataclass
class GramianSection:
    backend: str = "pointwise"
    margin: Union[float, str] = "auto"
    max_iters: int = 20
    barrier_max_size: int = 20
    uncertified: str = "keep"


@dataclass
class BalredSection:
    eta: float = 1e-2
    orders: Optional[list] = None
    mode: str = "truncate"


@dataclass
class ValidationSection:
    freq_min: float = 1e-3
    freq_max: float = 1e3
    freq_count: int = 400
    rho_samples: Union[str, list] = "grid+midpoints"
    gap_bound: float = 0.2
    simulate: bool = False
    sim_t_end: float = 10.0
    sim_dt: float = 1e-3
    in_reduce: bool = True


@dataclass
class PipelineConfig:
    tracking: TrackingSection = field(default_factory=TrackingSection)
    smoothing: SmoothingSection = field(default_factory=SmoothingSection)
    modal: ModalSection = field(default_factory=ModalSection)
    clustering: ClusteringSection = field(default_factory=ClusteringSection)
    gramian: GramianSection = field(default_factory=GramianSection)
    balred: BalredSection = field(default_factory=BalredSection)
    validation: ValidationSection = field(default_factory=ValidationSection)
    seed: int = 0

    @classmethod
    def from_dict(cls, data):
        data = dict(data or {})
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        kwargs = {}
        for name, value in data.items():
            f = known[name]
            if f.default_factory is not MISSING:
                section = f.default_factory
                if not isinstance(value, dict):
                    raise ConfigError(f"section '{name}' must be an object")
                bad = set(value) - {g.name for g in fields(section)}
                if bad:
                    raise ConfigError(f"unknown keys in section '{name}': {sorted(bad)}")
                kwargs[name] = section(**value)
            else:
                kwargs[name] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        if path is None:
            return cls()
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self):
        return asdict(self)

    def validate(self):
        if self.gramian.backend not in ("pointwise", "barrier"):
            raise ConfigError("gramian.backend must be 'pointwise' or 'barrier'")
        if self.gramian.uncertified not in ("keep", "reduce"):
            raise ConfigError("gramian.uncertified must be 'keep' or 'reduce'")
        if self.balred.mode not in ("truncate", "residualize"):
            raise ConfigError("balred.mode must be 'truncate' or 'residualize'")
        cap = self.clustering.max_cluster_size
        if cap is not None and int(cap) < 2:
            raise ConfigError("clustering.max_cluster_size must be at least 2")
        if self.clustering.e2_penalty_weight < 0:
            raise ConfigError("clustering.e2_penalty_weight must be nonnegative")
        ts = self.tracking.sampling_time
        if ts != "auto" and not (isinstance(ts, (int, float)) and ts > 0):
            raise ConfigError("tracking.sampling_time must be positive or 'auto'")
        ct = self.clustering.cut_threshold
        if ct != "auto" and not isinstance(ct, (int, float)):
            raise ConfigError("clustering.cut_threshold must be a number or 'auto'")
        m = self.gramian.margin
        if m != "auto" and not (isinstance(m, (int, float)) and m >= 0):
            raise ConfigError("gramian.margin must be nonnegative or 'auto'")

    @property
    def cluster_cap(self):
        if self.clustering.max_cluster_size is not None:
            return int(self.clustering.max_cluster_size)
        return 20 if self.gramian.backend == "barrier" else 40


# --- report -----------------------------------------------------------------

@dataclass
class RunReport:
    config: dict
    stages: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    census: dict = field(default_factory=dict)
    smoothing: dict = field(default_factory=dict)
    coupling: dict = field(default_factory=dict)
    clustering: dict = field(default_factory=dict)
    clusters: list = field(default_factory=list)
    reduced_order: int = 0
    validation: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self, with_timings=False):
        out = asdict(self)
        if not with_timings:
            out.pop("timings")
        return out


@dataclass
class PipelineResult:
    reduced: object
    report: RunReport
    tracking: object = None
    modal: object = None
    dendrogram: object = None
    leaf_ids: list = None
    clusters: list = None
    factors: list = None
    subsystems: list = None
    gramians: list = None


def _margin(cfg, sub):
    return gramian.default_margin(sub) if cfg.gramian.margin == "auto" else float(cfg.gramian.margin)


def _cluster_gramians(cfg, sub, blocks):
    """Gramians and aligned balancing factors of one cluster subsystem.

    Factors are None when the cluster is passed through unreduced (Gramians
    not certified and ``gramian.uncertified == "keep"``).
    """
    margin = _margin(cfg, sub)
    try:
        g = gramian.compute_gramians(sub, cfg.gramian.backend, margin, cfg.gramian.max_iters,
                                     blocks=blocks, barrier_max_size=cfg.gramian.barrier_max_size)
    except NotHurwitzError as exc:
        # vertex dynamics not Hurwitz at the rate bound: fall back to frozen Gramians
        frozen = gramian.Subsystem(sub.rho_grid, sub.A, np.zeros_like(sub.E), sub.B, sub.C,
                                   sub.D, 0.0)
        X_o, X_c, _ = gramian.init_pointwise(frozen, margin, blocks=blocks)
        rep = gramian.verify_lmi(sub, X_o, X_c, margin)
        g = gramian.GramianResult(X_o, X_c, rep, False, [], [
            str(exc), "Gramians computed at zero rate; not certified at the rate bound"])
    if not g.accepted and cfg.gramian.uncertified == "keep":
        g.notes.append("cluster kept unreduced")
        return g, None
    try:
        factors = balred.align(balred.factorize(g.X_o, g.X_c, sub.rho_grid))
    except balred.BalancingError as exc:
        if g.accepted:
            raise
        g.notes.append(f"{exc}; cluster kept unreduced")
        return g, None
    return g, factors


def _passthrough(sub):
    n = sub.n
    sel = balred.OrderSelection(np.arange(n), np.full(n, np.nan), "uncertified")
    red = balred.ReducedSubsystem(sub.A[:, None] + sub.E, sub.B.copy(), sub.C.copy(),
                                  sub.D.copy(), np.arange(n), "none", 0.0,
                                  ["not reduced: Gramians not certified"])
    return sel, red


def _timed(report, name, fn, *args, **kwargs):
    t0 = time.perf_counter()
    try:
        out = fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - every stage failure is reported with its name
        raise StageError(name, f"{type(exc).__name__}: {exc}") from exc
    report.timings[name] = time.perf_counter() - t0
    report.stages.append(name)
    return out


def reduce_model(model, cfg=None, jobs=1):
    """Run the full reduction on a grid model.

    Stages: decompose, integrators, match, multiplicity, repair, smooth,
    modal, coupling, split, cluster, gramians and balancing, reassemble and
    (optionally) validate.
    """
    cfg = cfg or PipelineConfig()
    report = RunReport(config=cfg.to_dict())
    tc = cfg.tracking
    tcfg = tracking.TrackingConfig(tc.sampling_time, tc.mac_weighting, tc.tol_int,
                                   tc.multiplicity_threshold, tc.stability_tol,
                                   tc.cluster_mac_weighting)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        eg = _timed(report, "decompose", tracking.decompose_grid, model)
        _timed(report, "integrators", tracking.detect_integrators, eg, tc.tol_int)
        res = _timed(report, "match", tracking.match_grid, eg, tcfg)
        groups = _timed(report, "multiplicity", tracking.detect_multiplicity, res,
                        tc.multiplicity_threshold)
        res, model_r, repairs = _timed(report, "repair", smoothing.repair_complex_real, res,
                                       groups, model, cfg.smoothing.repair_budget)
        sm_report = smoothing.SmoothingReport(repairs=repairs)
        T, units, T_raw = _timed(report, "smooth", modal.build_local_transforms, res, groups,
                                 cfg.smoothing.enabled, None, sm_report,
                                 model_r.A)
        before = modal.max_transform_derivative(model.rho_grid, T_raw)
        after = modal.max_transform_derivative(model.rho_grid, T)
        sm_report.max_derivative_before, sm_report.mean_derivative_before = before
        sm_report.max_derivative_after, sm_report.mean_derivative_after = after
        report.smoothing = sm_report.to_dict()
        mf = _timed(report, "modal", modal.assemble_modal, model_r, T, units)

        integ = set(res.integrators)
        reducible_units, preserved_unstable, preserved_int = [], [], []
        for u, unit in enumerate(units):
            trajs = unit.trajectories
            if any(i in integ for i in trajs):
                preserved_int.append(u)
            elif all(res.trajectories[i].stability == "stable" for i in trajs):
                reducible_units.append(u)
            else:
                preserved_unstable.append(u)
        off = mf.offsets
        stable_states = [s for u in reducible_units for s in range(off[u], off[u + 1])]
        coup = _timed(report, "coupling", modal.coupling_significance, mf, stable_states,
                      cfg.modal.drop_tol, None, model_r)
        report.coupling = coup.to_dict()
        report.census = res.census()

        # clustering over the reducible trajectories
        leaf_ids = [i for u in reducible_units for i in units[u].trajectories]
        leaf_ids.sort()
        local = {t: j for j, t in enumerate(leaf_ids)}
        dend, clusters_leaf, coph, threshold = None, [], float("nan"), float("nan")

        def do_cluster():
            if not leaf_ids:
                return None, [], float("nan"), float("nan")
            H = tracking.distance_matrix(res, leaf_ids, mac_weighting=tc.cluster_mac_weighting)
            w = cfg.clustering.e2_penalty_weight
            if w > 0 and len(reducible_units) > 1:
                unit_of = {t: ui for ui, u in enumerate(reducible_units)
                           for t in units[u].trajectories}
                Wu = clustering.coupling_energy(mf, reducible_units)
                idx = np.array([unit_of[t] for t in leaf_ids])
                P = w * (1.0 - Wu[np.ix_(idx, idx)])
                P[idx[:, None] == idx[None, :]] = 0.0
                H = H + P
            pre = [[local[t] for t in units[u].trajectories] for u in reducible_units]
            d = clustering.hac_complete_link(H, pre)
            cl, thr = clustering.cut(d, cfg.clustering.cut_threshold, cfg.cluster_cap)
            c = clustering.cophenetic_coefficient(d, H) if len(leaf_ids) >= 3 else float("nan")
            return d, cl, c, thr

        dend, clusters_leaf, coph, threshold = _timed(report, "cluster", do_cluster)
        unit_of_traj = {t: u for u in reducible_units for t in units[u].trajectories}
        unit_clusters = []
        for cl in clusters_leaf:
            us = sorted({unit_of_traj[leaf_ids[j]] for j in cl})
            unit_clusters.append(us)
        cs = _timed(report, "split", clustering.permute_and_split, mf, unit_clusters,
                    preserved_unstable + preserved_int, threshold, not mf.neglect_E)
        part = cs.partition
        report.clustering = {
            "threshold": threshold,
            "cophenetic": coph,
            "cluster_sizes": part.cluster_sizes(),
            "max_cluster_size": cfg.cluster_cap,
            "dendrogram": dend.to_dict() if dend is not None else None,
            "leaf_trajectories": leaf_ids,
            "E2_max_norm": max(part.E2_norms) if part.E2_norms else 0.0,
        }

        # per-cluster Gramians and balancing
        orders = cfg.balred.orders

        def work(ell):
            A, E1, B, C, D = cs.subsystem(ell)
            sub = gramian.Subsystem(model.rho_grid, A, E1, B, C, D, model.rate_bound)
            blocks, pos = [], 0
            for u in part.unit_clusters[ell]:
                size = units[u].size
                blocks.append((pos, pos + size))
                pos += size
            return sub, _cluster_gramians(cfg, sub, blocks)

        def do_gramians():
            with ThreadPoolExecutor(max_workers=max(1, int(jobs))) as pool:
                return list(pool.map(work, range(len(part.ranges))))

        computed = _timed(report, "gramians", do_gramians)
        # model-wide reference: largest Hankel singular value over all
        # clusters, pointwise values standing in for uncertified ones
        peaks = [float(f.profile.max()) if f is not None else
                 float(gramian.frozen_hankel_values(sub).max())
                 for sub, (_, f) in computed if sub.n]
        reference = max(peaks, default=0.0)

        def do_balance():
            out = []
            for ell, (sub, (g, factors)) in enumerate(computed):
                if factors is None:
                    sel, red = _passthrough(sub)
                else:
                    order = None if orders is None else orders[ell]
                    sel = balred.select_order(factors, cfg.balred.eta, order, cfg.balred.mode,
                                              reference=reference)
                    red = balred.balance_and_truncate(sub, factors, sel, g.X_o, g.X_c)
                out.append((g, factors, sel, red))
            return out

        outcomes = _timed(report, "balance", do_balance)

        def do_reassemble():
            parts, D = [], model.D.copy()
            for g, factors, sel, red in outcomes:
                parts.append((red.A_vertex, red.B, red.C))
                D = D + (red.D - model.D)
            a, b = part.preserved_range
            if b > a:
                Ap = cs.A[:, a:b, a:b][:, None] + part.E1[:, :, a:b, a:b]
                parts.append((Ap, cs.B[:, a:b], cs.C[:, :, a:b]))
            n_int = sum(units[u].size for u in preserved_int)
            n_uns = sum(units[u].size for u in preserved_unstable)
            meta = {"unstable_states": int(n_uns), "integrators": int(n_int),
                    "cluster_orders": [int(o[2].order) for o in outcomes],
                    "cluster_sizes": part.cluster_sizes(),
                    "source_states": int(model.n_x)}
            return balred.reassemble(model.rho_grid, model.rate_bound, parts, D, meta)

        reduced = _timed(report, "reassemble", do_reassemble)
        for ell, (g, factors, sel, red) in enumerate(outcomes):
            report.clusters.append({
                "size": int(part.ranges[ell][1] - part.ranges[ell][0]),
                "trajectories": part.clusters[ell],
                "order": int(sel.order),
                "rule": sel.rule,
                "mode": red.mode,
                "gramians": g.to_dict(),
                "balancing_error": float(red.balancing_error),
                "notes": list(red.notes) + (list(factors.warnings) if factors else []),
            })
        report.reduced_order = int(reduced.n_x)
        if cfg.validation.in_reduce:
            vr = _timed(report, "validate", run_validation, model, reduced, cfg)
            report.validation = vr.to_dict()
    report.warnings = sorted({str(w.message) for w in caught})
    return PipelineResult(reduced, report, res, mf, dend, leaf_ids,
                          [[leaf_ids[j] for j in cl] for cl in clusters_leaf],
                          [o[1] for o in outcomes], [c[0] for c in computed],
                          [o[0] for o in outcomes])


def run_validation(full, reduced, cfg=None):
    cfg = cfg or PipelineConfig()
    v = cfg.validation
    fgrid = validation.frequency_grid(v.freq_min, v.freq_max, v.freq_count)
    if v.rho_samples == "grid+midpoints":
        rs = None
    elif v.rho_samples == "grid":
        rs = full.rho_grid
    else:
        rs = np.asarray(v.rho_samples, dtype=float)
    return validation.validate(full, reduced, fgrid, rs, v.simulate, v.sim_t_end, v.sim_dt)
