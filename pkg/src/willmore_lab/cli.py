"""``willmore-lab``: command-line driver.

Exit codes: 0 success, 1 numerical failure, 2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .ambient import critical_point_of_scalar_curvature
from .barycenter import geometric_center
from .config import RunConfig, config_json, load_config
from .errors import ConfigError, SolverError, WillmoreLabError
from .flow import geodesic_sphere, minimize
from .functionals import REPORT_FIELDS, report_from_fields
from .suite import (
    BOUND_SPECS,
    RATE_SPECS,
    dat_series,
    error_budget,
    fit_rates,
    rate_table,
    records_from_csv,
    records_to_csv,
    run_ladder,
)
from .surface import Surface, geometry, sup_norm


def _clean(obj):
    """Replace non-finite floats by None so the JSON is standard."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def dump_json(obj) -> str:
    return json.dumps(_clean(obj), indent=1, sort_keys=True) + "\n"


def header(cfg: RunConfig | None) -> dict:
    out = {"program": "willmore-lab", "version": __version__}
    if cfg is not None:
        out["config"] = cfg.to_dict()
    return out


def _emit(text: str, stream=None):
    (stream or sys.stdout).write(text)


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _seed_point(chart, cfg_seed):
    """Configured seed, else the critical point of Sc, else the origin."""
    if cfg_seed is not None:
        return np.asarray(cfg_seed, dtype=float), None
    try:
        z = critical_point_of_scalar_curvature(chart)
        return z, z
    except SolverError:
        return np.zeros(3), None


# ---------------------------------------------------------------------------
# subcommands


def cmd_geometry(cfg: RunConfig, surface_file) -> dict:
    chart = cfg.chart()
    grid = cfg.make_grid()
    surf = Surface.load(surface_file)
    fields = geometry(chart, surf, grid)
    rep = report_from_fields(fields, grid)
    summary = {
        "n_nodes": grid.n_nodes,
        "H_min": float(fields.H.min()),
        "H_max": float(fields.H.max()),
        "Acirc_sup": sup_norm(fields, fields.Acirc),
        "rho_min": float(fields.rho.min()),
        "rho_max": float(fields.rho.max()),
    }
    return {**header(cfg), "report": rep.as_row(), "fields": summary}


def cmd_minimize(cfg: RunConfig, surface_file=None) -> dict:
    chart = cfg.chart()
    grid = cfg.make_grid()
    out = Path(cfg.output)
    mc = cfg.minimize
    if surface_file is not None:
        init = Surface.load(surface_file).resampled(grid.L)
    else:
        c, _ = _seed_point(chart, mc.center if mc.center is not None else cfg.ladder.seed)
        init = geodesic_sphere(chart, c, mc.radius, grid, cfg.geodesic_params())
    target = mc.target_area if mc.target_area is not None else 4.0 * math.pi * mc.radius**2
    surf, trace = minimize(chart, init, cfg.flow_params(target), grid)
    _write(out / "surface.json", surf.to_json() + "\n")
    _write(out / "trace.csv", trace.to_csv())
    rep = report_from_fields(geometry(chart, surf, grid), grid)
    result = {**header(cfg), "status": trace.status, "message": trace.message, "steps": len(trace.records) - 1, "report": rep.as_row()}
    _write(out / "minimize.json", dump_json(result))
    return result


def cmd_center(cfg: RunConfig, surface_file) -> dict:
    chart = cfg.chart()
    grid = cfg.make_grid()
    surf = Surface.load(surface_file)
    rep = geometric_center(chart, surf, grid, cfg.center_params())
    out = Path(cfg.output)
    result = {**header(cfg), "center": rep.to_dict()}
    _write(out / "center.json", dump_json(result))
    _write(out / "recentered.json", surf.recentered(grid, rep.p0).to_json() + "\n")
    return result


def cmd_suite(cfg: RunConfig, jobs: int = 1) -> dict:
    chart = cfg.chart()
    seed, zstar = _seed_point(chart, cfg.ladder.seed)
    results = run_ladder(chart, seed, cfg.areas(), cfg.ladder_params(), jobs=jobs, zstar=zstar)
    records = [r.record for r in results]
    out = Path(cfg.output)
    _write(out / "records.csv", records_to_csv(records))
    _write(out / "error_budget.csv", error_budget(records))
    for res in results:
        k = res.record.level
        if res.surface is not None:
            _write(out / "surfaces" / f"level_{k:02d}.json", res.surface.to_json() + "\n")
        if res.trace_csv:
            _write(out / "traces" / f"level_{k:02d}.csv", res.trace_csv)
    for sp in RATE_SPECS + BOUND_SPECS:
        _write(out / "dat" / f"{sp.name}.dat", dat_series(records, sp.name))
    run = {
        **header(cfg),
        "seed": [float(v) for v in seed],
        "critical_point": None if zstar is None else [float(v) for v in zstar],
        "levels": [{"level": r.level, "status": r.status, "R": r.R, "message": r.message} for r in records],
    }
    _write(out / "run.json", dump_json(run))
    rates = _rates_payload(records, cfg)
    _write(out / "rates.json", dump_json(rates))
    return {"records": records, "rates": rates}


def _rates_payload(records, cfg) -> dict:
    payload = header(cfg)
    try:
        fits = fit_rates(records)
    except WillmoreLabError as exc:
        payload.update(fits=[], all_pass=False, error=str(exc))
        return payload
    payload["fits"] = [f.to_dict() for f in fits]
    payload["all_pass"] = all(f.status != "FAIL" for f in fits)
    payload["table"] = rate_table(fits).splitlines()
    return payload


def cmd_rates(records_file, out_file=None) -> dict:
    try:
        text = Path(records_file).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {records_file}: {exc}") from exc
    records = records_from_csv(text)
    payload = header(None)
    fits = fit_rates(records)
    payload["fits"] = [f.to_dict() for f in fits]
    payload["all_pass"] = all(f.status != "FAIL" for f in fits)
    payload["table"] = rate_table(fits).splitlines()
    target = Path(out_file) if out_file else Path(records_file).with_name("rates.json")
    _write(target, dump_json(payload))
    return payload


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="YAML or JSON run configuration")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config entry, e.g. grid.L=24 (flags win)")
    common.add_argument("-o", "--output", help="output directory (overrides config.output)")

    p = argparse.ArgumentParser(prog="willmore-lab", description="Small area-constrained Willmore spheres in 3-manifolds.")
    p.add_argument("--version", action="version", version=f"willmore-lab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("geometry", parents=[common], help="evaluate functionals of a surface file")
    g.add_argument("surface")
    m = sub.add_parser("minimize", parents=[common], help="constrained Willmore solve")
    m.add_argument("--surface", help="initial surface (default: geodesic sphere)")
    c = sub.add_parser("center", parents=[common], help="geometric centre of a surface file")
    c.add_argument("surface")
    s = sub.add_parser("suite", parents=[common], help="run the dyadic estimate ladder")
    s.add_argument("-j", "--jobs", type=int, default=os.cpu_count() or 1, help="parallel ladder levels (default: CPU count)")
    r = sub.add_parser("rates", help="fit rates from a records.csv")
    r.add_argument("records")
    r.add_argument("-o", "--output", help="rates.json path (default: next to the records)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "rates":
            payload = cmd_rates(args.records, args.output)
            _emit("\n".join(payload["table"]) + "\n")
            return 0
        overrides = list(args.set)
        if args.output:
            overrides.append(f"output={json.dumps(args.output)}")
        cfg = load_config(args.config, overrides)
        _emit(f"# willmore-lab {__version__} config: {config_json(cfg)}\n")
        if args.command == "geometry":
            res = cmd_geometry(cfg, args.surface)
            row = res["report"]
            _emit(",".join(REPORT_FIELDS) + "\n" + ",".join(repr(float(row[k])) for k in REPORT_FIELDS) + "\n")
            _emit(dump_json(res["fields"]))
            return 0
        if args.command == "minimize":
            res = cmd_minimize(cfg, args.surface)
            _emit(dump_json({k: res[k] for k in ("status", "message", "steps", "report")}))
            if res["status"] != "converged":
                _emit(f"error: flow ended with status {res['status']}\n", sys.stderr)
                return 1
            return 0
        if args.command == "center":
            res = cmd_center(cfg, args.surface)
            _emit(dump_json(res["center"]))
            return 0
        if args.command == "suite":
            if args.jobs < 1:
                raise ConfigError("--jobs must be >= 1")
            res = cmd_suite(cfg, args.jobs)
            _emit(error_budget(res["records"]))
            rates = res["rates"]
            if "error" in rates:
                _emit(f"error: {rates['error']}\n", sys.stderr)
                return 1
            _emit("\n".join(rates["table"]) + "\n")
            return 0
    except ConfigError as exc:
        _emit(f"error: {exc}\n", sys.stderr)
        return 2
    except OSError as exc:
        _emit(f"error: {exc}\n", sys.stderr)
        return 2
    except WillmoreLabError as exc:
        _emit(f"error: {exc}\n", sys.stderr)
        return 1
    return 2  # pragma: no cover


if __name__ == "__main__":
    sys.exit(main())
