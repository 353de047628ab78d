"""Command-line entry point: ``spdiag spep|svip|compare|disthist --config FILE``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 when at least
one model failed while the others completed.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import re
import sys
from importlib import metadata
from pathlib import Path

import numpy as np

from . import __version__, plots
from .comparators import comparison_table, cv_distances, format_table, run_cv
from .config import ExperimentConfig, load_config
from .dataset import Dataset, DistanceSummary, prediction_distances
from .diagnostics import records_to_csv, run_spatial_loo, spep
from .errors import ConfigError, DegenerateGeometryError, ParseError, SchemaError, SpdiagError
from .importance import build_svip, fit_pc_groups, make_channels

log = logging.getLogger("spdiag")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_PARTIAL = 4


def _slug(label: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", label)


def _versions() -> dict:
    out = {"python": platform.python_version()}
    for pkg in ("numpy", "scipy", "scikit-learn", "numba", "PyYAML"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:  # pragma: no cover
            out[pkg] = None
    out["spdiag"] = __version__
    return out


def _write_json(path: Path, obj):
    path.write_text(json.dumps(obj, indent=2, sort_keys=False) + "\n", encoding="utf-8")


def validate(cfg: ExperimentConfig, ds: Dataset, command: str):
    """Check every reference in the config before any model is fitted."""
    if command in ("spep", "svip") and not cfg.models:
        raise ConfigError(f"{command} needs at least one model")
    if command == "compare" and not (cfg.models and cfg.cv):
        raise ConfigError("compare needs models and cv schemes")
    for m in cfg.models:
        m.check_dataset(ds)
    for s in cfg.cv:
        s.check_dataset(ds)
    imp = cfg.importance
    for f in imp.features:
        if f not in ds.feature_names:
            raise SchemaError(f"importance feature {f!r} is not a dataset feature")
    for g, members in imp.groups.items():
        for f in members:
            if f not in ds.feature_names:
                raise SchemaError(f"group {g!r} member {f!r} is not a dataset feature")
    if command == "svip" and not (imp.features or imp.groups):
        raise ConfigError("svip needs importance features or groups")
    if command == "disthist" and not (cfg.grid or cfg.cv):
        raise ConfigError("disthist needs a prediction grid or cv schemes")


def _cv_points(cfg, ds, model_spec):
    pts = []
    for scheme in cfg.cv:
        res = run_cv(ds, model_spec, scheme, cfg.diagnostics.measure_for(ds))
        pts.append((model_spec.label, scheme.label, res.mean_distance, res.estimate))
    return pts


def cmd_spep(cfg: ExperimentConfig, ds: Dataset) -> dict:
    out = cfg.output
    status, profiles, cv_pts = {}, {}, []
    for m in cfg.models:
        try:
            run = run_spatial_loo(ds, m, cfg.diagnostics)
            prof = spep(run, cfg.diagnostics, label=m.label)
            slug = _slug(m.label)
            records_to_csv(run.records, out / f"spep_{slug}_records.csv")
            prof.to_csv(out / f"spep_{slug}.csv")
            prof.to_json(out / f"spep_{slug}.json")
            profiles[m.label] = prof
            cv_pts += _cv_points(cfg, ds, m)
            status[m.label] = {"status": "ok", "records": len(run.records), "skipped": run.n_skipped}
        except SpdiagError as exc:
            log.error("%s failed: %s", m.label, exc)
            status[m.label] = {"status": "failed", "error": str(exc)}
    if cv_pts:
        with open(out / "spep_cv_points.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["model", "estimator", "mean_distance", "error"])
            w.writerows(cv_pts)
    if cfg.plots.enabled and profiles:
        plots.write_svg(out / "spep.svg", plots.spep_figure(profiles, cv_pts, cfg.plots.sqrt_axis))
    return status


def cmd_svip(cfg: ExperimentConfig, ds: Dataset) -> dict:
    out = cfg.output
    imp = cfg.importance
    groups = fit_pc_groups(ds, imp.groups) if imp.groups else []
    if groups:
        _write_json(out / "pc_groups.json", {
            g.name: {"members": list(g.members), "dropped": list(g.dropped),
                     "explained_ratio": g.explained_ratio.tolist(), "loadings": g.loadings.tolist()}
            for g in groups})
    channels = make_channels(ds, imp.features, groups, imp.n_components)
    names = [c.name for c in channels]
    status, panels = {}, {n: {} for n in names}
    d = cfg.diagnostics
    for m in cfg.models:
        try:
            run = run_spatial_loo(ds, m, d, channels)
            sv = build_svip(run.records, d.breakpoints(), run.measure, names, d.min_bin_records,
                            d.smooth_window, seed=d.seed)
            slug = _slug(m.label)
            sv.to_csv(out / f"svip_{slug}.csv", model=m.label)
            _write_json(out / f"svip_{slug}.json", {"model": m.label, "measure": run.measure,
                                                     "profiles": sv.to_dict()})
            for n in names:
                panels[n][m.label] = sv.profiles[n]
            status[m.label] = {"status": "ok", "records": len(run.records), "skipped": run.n_skipped}
        except SpdiagError as exc:
            log.error("%s failed: %s", m.label, exc)
            status[m.label] = {"status": "failed", "error": str(exc)}
    if cfg.plots.enabled and any(panels.values()):
        plots.write_svg(out / "svip.svg", plots.svip_figure({k: v for k, v in panels.items() if v},
                                                            cfg.plots.sqrt_axis))
    return status


def cmd_compare(cfg: ExperimentConfig, ds: Dataset) -> dict:
    out = cfg.output
    status, results = {}, []
    measure = cfg.diagnostics.measure_for(ds)
    for m in cfg.models:
        try:
            mine = []
            for s in cfg.cv:
                res = run_cv(ds, m, s, measure)
                res.to_json(out / f"cv_{_slug(s.label)}_{_slug(m.label)}.json")
                res.distances_to_csv(out / f"cv_{_slug(s.label)}_{_slug(m.label)}_distances.csv")
                mine.append(res)
            results += mine
            status[m.label] = {"status": "ok"}
        except SpdiagError as exc:
            log.error("%s failed: %s", m.label, exc)
            status[m.label] = {"status": "failed", "error": str(exc)}
    rows = comparison_table(results)
    with open(out / "compare.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["estimator", "model", "measure", "error", "mean_distance"])
        w.writeheader()
        w.writerows(rows)
    text = format_table(rows)
    (out / "compare.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return status


def cmd_disthist(cfg: ExperimentConfig, ds: Dataset) -> dict:
    out = cfg.output
    bw = cfg.plots.histogram_bin_width
    scenarios: dict[str, np.ndarray] = {}
    grid = cfg.load_grid()
    if grid is not None:
        scenarios["prediction grid"] = prediction_distances(ds, grid)
    for s in cfg.cv:
        scenarios[s.label] = cv_distances(ds, s)
    summaries = {k: DistanceSummary.from_distances(v, bw) for k, v in scenarios.items()}
    _write_json(out / "disthist.json", {k: s.to_dict() for k, s in summaries.items()})
    for k, v in scenarios.items():
        with open(out / f"distances_{_slug(k)}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["distance"])
            w.writerows([repr(float(x))] for x in v)
    for k, s in summaries.items():
        print(f"{k:<22} n={s.n:<7} mean={s.mean:8.1f}  median={s.median:8.1f}  q1={s.q1:8.1f}  q3={s.q3:8.1f}")
    if cfg.plots.enabled:
        plots.write_svg(out / "disthist.svg", plots.histogram_figure(summaries))
    return {k: {"status": "ok", "mean": s.mean} for k, s in summaries.items()}


COMMANDS = {"spep": cmd_spep, "svip": cmd_svip, "compare": cmd_compare, "disthist": cmd_disthist}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spdiag", description="Spatial prediction error and importance profiles.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML or JSON experiment file")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--reps", type=int, help="spatial-LOO repetitions override")
        p.add_argument("--out", help="output directory override")
        p.add_argument("--no-plots", action="store_true", help="skip SVG output")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, seed=args.seed, reps=args.reps, out=args.out)
        if args.no_plots:
            cfg.plots.enabled = False
        ds = cfg.load_dataset()
        validate(cfg, ds, args.command)
        try:
            cfg.output.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ConfigError(f"cannot create output directory {cfg.output}: {exc}") from None
        status = COMMANDS[args.command](cfg, ds)
    except (ConfigError, SchemaError) as exc:
        print(f"spdiag: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, DegenerateGeometryError, FileNotFoundError) as exc:
        print(f"spdiag: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except SpdiagError as exc:
        print(f"spdiag: {exc}", file=sys.stderr)
        return EXIT_DATA

    _write_json(cfg.output / "manifest.json", {
        "command": args.command,
        "config": str(Path(args.config).resolve()),
        "config_hash": cfg.config_hash(),
        "seed": cfg.diagnostics.seed,
        "n_reps": cfg.diagnostics.n_reps,
        "versions": _versions(),
        "status": status,
    })
    failed = [k for k, v in status.items() if v.get("status") != "ok"]
    for k, v in status.items():
        print(f"{k}: {v['status']}" + (f" ({v['error']})" if "error" in v else ""), file=sys.stderr)
    return EXIT_PARTIAL if failed else EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
