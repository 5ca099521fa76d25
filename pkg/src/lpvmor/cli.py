"""Command-line interface: ``generate``, ``reduce``, ``validate`` and ``info``.

Exit codes: 0 success, 1 input or stage failure, 2 usage error, 3 the
validated gap exceeds the configured bound.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import balred, benchmark, clustering, tracking, validation
from .model import ModelError, ReducedLpvModel, load_model, save_model
from .pipeline import ConfigError, PipelineConfig, StageError, reduce_model, run_validation

log = logging.getLogger("lpvmor")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_GAP = 0, 1, 2, 3


def _plain(obj):
    """JSON fallback for numpy scalars and arrays."""
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _dump(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True, default=_plain))


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc


def _sibling(out, suffix):
    out = Path(out)
    return out.with_name(out.stem + suffix)


# --- commands -------------------------------------------------------------

def cmd_generate(args):
    data = _read_json(args.config) if args.config else {}
    if args.seed is not None:
        data["seed"] = args.seed
    spec = benchmark.BenchmarkSpec.from_dict(data)
    model, truth = benchmark.generate(spec)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, out)
    truth.save(_sibling(out, ".truth.json"))
    print(f"wrote {out} (n_x={model.n_x}, N={model.N}) and {_sibling(out, '.truth.json')}")
    return EXIT_OK


def _load_config(args):
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if getattr(args, "seed", None) is not None:
        cfg.seed = int(args.seed)
    return cfg


def _write_artifacts(result, outdir):
    outdir.mkdir(parents=True, exist_ok=True)
    tracking.export_trajectories_csv(result.tracking, outdir / "trajectories.csv")
    clustering.export_clusters_csv(outdir / "clusters.csv", result.clusters)
    if result.dendrogram is not None:
        result.dendrogram.to_json(outdir / "dendrogram.json", result.leaf_ids)
    _dump(outdir / "smoothing.json", result.report.smoothing)
    for ell, factors in enumerate(result.factors):
        if factors is not None:
            balred.export_singular_values(outdir / f"singular_values_{ell}.csv", factors)


def cmd_reduce(args):
    cfg = _load_config(args)
    model = load_model(args.model)
    if isinstance(model, ReducedLpvModel):
        raise ModelError("reduce expects a grid model, not a reduced model")
    out = Path(args.out)
    report_path = _sibling(out, ".report.json")
    timings_path = _sibling(out, ".timings.json")
    art = out.with_name(out.stem + "_artifacts")
    written = [out, report_path, timings_path]
    try:
        result = reduce_model(model, cfg, jobs=args.jobs)
        out.parent.mkdir(parents=True, exist_ok=True)
        save_model(result.reduced, out)
        report = result.report.to_dict()
        timings = dict(result.report.timings)
        if report.get("validation"):
            # runtimes vary between runs; keep the report reproducible
            timings["validation_runtime"] = report["validation"].pop("runtime", {})
        _dump(report_path, report)
        _dump(timings_path, timings)
        _write_artifacts(result, art)
        if result.report.validation:
            vr = result.report.validation
            validation.write_rows(art / "gap_pointwise.csv", ["rho", "gap"],
                                  zip(vr["rho_samples"], vr["pointwise_gap"]))
            validation.write_rows(art / "gap_frequency.csv", ["omega", "gap"],
                                  zip(vr["omega"], vr["frequencywise_gap"]))
    except BaseException:
        for p in written:
            if p.exists():
                p.unlink()
        shutil.rmtree(art, ignore_errors=True)
        raise
    gap = result.report.validation.get("max_pointwise_gap") if result.report.validation else None
    msg = f"reduced {model.n_x} -> {result.reduced.n_x} states; wrote {out}"
    if gap is not None:
        msg += f"; max pointwise gap {gap:.4g}"
    print(msg)
    return EXIT_OK


def cmd_validate(args):
    cfg = _load_config(args)
    full = load_model(args.full)
    reduced = load_model(args.reduced)
    if (full.n_u, full.n_y) != (reduced.n_u, reduced.n_y):
        raise ModelError(f"input/output dimensions differ: full {full.n_u}x{full.n_y}, "
                         f"reduced {reduced.n_u}x{reduced.n_y}")
    if not np.array_equal(full.rho_grid, reduced.rho_grid):
        raise ModelError("models are defined on different parameter grids")
    rep = run_validation(full, reduced, cfg)
    outdir = Path(args.out) if args.out else Path(".")
    paths = validation.export_validation(rep, os.fspath(outdir))
    bound = cfg.validation.gap_bound
    print(f"max pointwise gap {rep.max_gap:.6g} (bound {bound:g}); wrote {paths['report']}")
    return EXIT_OK if rep.max_gap <= bound else EXIT_GAP


def cmd_info(args):
    model = load_model(args.model)
    reduced = isinstance(model, ReducedLpvModel)
    print(f"type: {'reduced' if reduced else 'grid'} model")
    print(f"states: {model.n_x}  inputs: {model.n_u}  outputs: {model.n_y}")
    print(f"grid: {model.N} points on [{model.rho_grid[0]:g}, {model.rho_grid[-1]:g}]  "
          f"rate bound: {model.rate_bound:g}")
    if reduced:
        print(f"vertices: {2 * model.N}")
        for key in sorted(model.meta):
            print(f"{key}: {model.meta[key]}")
    else:
        res = tracking.match_grid(tracking.decompose_grid(model))
        for key, value in res.census().items():
            print(f"{key}: {value}")
    if args.out:
        validation.export_pole_map(args.out, model)
        print(f"pole map written to {args.out}")
    return EXIT_OK


# --- entry point ----------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="lpvmor", description="LPV model order reduction")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="generate a seeded benchmark model")
    g.add_argument("--config", help="benchmark composition JSON")
    g.add_argument("--out", required=True, help="model JSON to write")
    g.add_argument("--seed", type=int, help="random seed (overrides the config)")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("reduce", help="reduce a grid model")
    r.add_argument("model", help="grid model JSON")
    r.add_argument("--config", help="pipeline configuration JSON")
    r.add_argument("--out", required=True, help="reduced model JSON to write")
    r.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                   help="worker threads for per-cluster stages")
    r.add_argument("--seed", type=int, help="seed recorded in the report")
    r.set_defaults(func=cmd_reduce)

    v = sub.add_parser("validate", help="compare a full and a reduced model")
    v.add_argument("full")
    v.add_argument("reduced")
    v.add_argument("--config", help="pipeline configuration JSON")
    v.add_argument("--out", help="directory for the gap CSVs and report")
    v.set_defaults(func=cmd_validate)

    i = sub.add_parser("info", help="summarize a model")
    i.add_argument("model")
    i.add_argument("--out", help="write the pole map as CSV")
    i.set_defaults(func=cmd_info)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "jobs", 1) is not None and getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be positive", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (ModelError, ConfigError, benchmark.BenchmarkError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
