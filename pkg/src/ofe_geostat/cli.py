"""Command-line front end.

Every command reads one YAML run configuration; ``--seed``, ``--out`` and
``--threads`` override the matching config keys.  Outputs carry a
provenance header with the config hash, seed and package version.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .covariance import params_from_dict
from .design import DesignLayout, assign_design, build_design_matrix, write_mask
from .errors import GeostatError
from .field_data import (
    FieldGeometry,
    Lattice,
    aggregate_to_grid,
    align_rows,
    load_yield_points,
    read_grid,
    rotate_coordinates,
    trim_edges,
    write_grid,
)
from .inference import fit_ols, fit_reml, fit_report, select_model
from .simulation import MODELS, SimulationConfig, SyntheticField, run_effect_experiment, run_null_experiment
from .variogram import (
    DEFAULT_MIN_PAIRS,
    default_max_lag,
    empirical_variogram,
    fitted_curve,
    write_empirical,
    write_fitted,
)

logger = logging.getLogger("ofe_geostat")


class ConfigError(GeostatError, ValueError):
    pass


@dataclass
class RunConfig:
    out: Path
    seed: int = 0
    threads: int = 1
    input: Path | None = None
    grid_file: Path | None = None
    dx: float = 2.5
    dy: float = 2.5
    heading: float = 0.0
    row_width: float | None = None
    side_margin: float = 0.0
    headland_margin: float = 0.0
    designs: list[DesignLayout] = field(default_factory=list)
    models: tuple[str, ...] = MODELS
    max_iter: int = 500
    min_pairs: int = DEFAULT_MIN_PAIRS
    max_lag: float | None = None
    simulation: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def grid_path(self) -> Path:
        return self.grid_file if self.grid_file else self.out / "grid.csv"

    def provenance(self) -> dict:
        # the output location does not affect results
        content = {k: v for k, v in self.raw.items() if k != "out"}
        blob = json.dumps(content, sort_keys=True, default=str).encode()
        return {
            "config_sha256": hashlib.sha256(blob).hexdigest(),
            "seed": self.seed,
            "version": __version__,
        }

    def header(self) -> str:
        return " ".join(f"{k}={v}" for k, v in self.provenance().items())


def load_config(path, overrides: dict | None = None) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a mapping")
    for k, v in (overrides or {}).items():
        if v is not None:
            raw[k] = v
    base = path.parent

    def rel(p):
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else base / p

    pre = raw.get("preprocess", {}) or {}
    try:
        designs = [DesignLayout(**d) for d in raw.get("designs", []) or []]
        cfg = RunConfig(
            out=rel(raw.get("out", "results")),
            seed=int(raw.get("seed", 0)),
            threads=int(raw.get("threads", 1)),
            input=rel(raw.get("input")),
            grid_file=rel(raw.get("grid_file")),
            dx=float(pre.get("dx", 2.5)),
            dy=float(pre.get("dy", 2.5)),
            heading=float(pre.get("heading", 0.0)),
            row_width=None if pre.get("row_width") is None else float(pre["row_width"]),
            side_margin=float(pre.get("side_margin", 0.0)),
            headland_margin=float(pre.get("headland_margin", 0.0)),
            designs=designs,
            models=tuple(raw.get("models", MODELS)),
            max_iter=int((raw.get("fit") or {}).get("max_iter", 500)),
            min_pairs=int((raw.get("variogram") or {}).get("min_pairs", DEFAULT_MIN_PAIRS)),
            max_lag=(raw.get("variogram") or {}).get("max_lag"),
            simulation=dict(raw.get("simulation") or {}),
            raw=raw,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc
    if not (cfg.dx > 0 and cfg.dy > 0):
        raise ConfigError("grid spacing dx, dy must be positive")
    if cfg.side_margin < 0 or cfg.headland_margin < 0:
        raise ConfigError("margins must be non-negative")
    unknown = set(cfg.models) - set(MODELS)
    if unknown:
        raise ConfigError(f"unknown models: {sorted(unknown)}")
    if cfg.seed < 0:
        raise ConfigError("seed must be non-negative")
    return cfg


def _dump(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(_clean(doc), indent=2) + "\n")


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _require_grid(cfg: RunConfig):
    if not cfg.grid_path.exists():
        raise ConfigError(f"grid file not found: {cfg.grid_path} (run preprocess first)")
    return read_grid(cfg.grid_path)


def _require_designs(cfg: RunConfig):
    if not cfg.designs:
        raise ConfigError("config lists no designs")
    return cfg.designs


# ---- commands --------------------------------------------------------------

def cmd_preprocess(cfg: RunConfig) -> int:
    if cfg.input is None or not cfg.input.exists():
        raise ConfigError(f"input file not found: {cfg.input}")
    points = load_yield_points(cfg.input)
    pts = rotate_coordinates(points, cfg.heading)
    origin = None
    if cfg.row_width:
        pts = align_rows(pts, cfg.row_width)
        # aligned rows start at x = 0; keeps centerlines off cell boundaries
        origin = (0.0, min(p.y for p in pts))
    grid = aggregate_to_grid(pts, cfg.dx, cfg.dy, origin=origin)
    n_before = grid.n_valid
    geometry = FieldGeometry(headland_margin=cfg.headland_margin,
                             side_margin=cfg.side_margin, heading=cfg.heading)
    grid = trim_edges(grid, geometry)

    cfg.out.mkdir(parents=True, exist_ok=True)
    write_grid(grid, cfg.grid_path, header=cfg.header())
    summary = {
        "provenance": cfg.provenance(),
        "points_in": len(points) + len(points.bad_rows),
        "points_used": len(points),
        "bad_rows": [list(r) for r in points.bad_rows],
        "cells_total": grid.nx * grid.ny,
        "cells_occupied": n_before,
        "cells_trimmed": n_before - grid.n_valid,
        "cells_valid": grid.n_valid,
        "nx": grid.nx,
        "ny": grid.ny,
    }
    _dump(cfg.out / "preprocess_summary.json", summary)
    print(f"grid {grid.nx}x{grid.ny}, {grid.n_valid} valid cells -> {cfg.grid_path}")
    return 0


def cmd_design_preview(cfg: RunConfig) -> int:
    from .plotting import plot_design

    grid = _require_grid(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    for layout in _require_designs(cfg):
        mask = assign_design(grid, layout)
        write_mask(mask, cfg.out / f"mask_{layout.name}.csv", header=cfg.header())
        plot_design(grid, mask, cfg.out / f"design_{layout.name}.png", title=layout.name)
        print(f"{layout.name}: {mask.n_treated}/{grid.n_valid} cells treated")
    return 0


def cmd_fit(cfg: RunConfig) -> int:
    grid = _require_grid(cfg)
    cfg.out.mkdir(parents=True, exist_ok=True)
    y, cells = grid.vector(), grid.cells()
    any_ok = False
    for layout in _require_designs(cfg):
        X = build_design_matrix(assign_design(grid, layout))
        reports, spatial = {}, []
        for model in cfg.models:
            try:
                if model == "ols":
                    fit = fit_ols(y, X)
                else:
                    fit = fit_reml(y, X, cells, model, max_iter=cfg.max_iter)
                    spatial.append(fit)
            except GeostatError as exc:
                reports[model] = {"model": model, "error": f"{type(exc).__name__}: {exc}"}
                print(f"{layout.name}/{model}: fit failed: {exc}", file=sys.stderr)
                continue
            reports[model] = fit_report(fit)
            any_ok = True
        doc = {"provenance": cfg.provenance(), "design": layout.name, "models": reports}
        if len(spatial) >= 2:
            best = select_model(spatial)
            doc["selection"] = {
                "criterion": "AIC",
                "selected": best.model_kind,
                "aic": {f.model_kind: f.aic for f in spatial},
                "delta_aic": {f.model_kind: f.aic - best.aic for f in spatial},
                "aic_k": {f.model_kind: f.k for f in spatial},
            }
        _dump(cfg.out / f"fit_{layout.name}.json", doc)
        sel = doc.get("selection", {}).get("selected", "-")
        print(f"{layout.name}: {', '.join(reports)} fitted; AIC selects {sel}")
    return 0 if any_ok else 1


def _residual_variograms(cfg, grid, layout, model, report):
    X = build_design_matrix(assign_design(grid, layout))
    beta = np.array([c["beta"] for c in report["coefficients"]])
    resid = grid.vector() - X @ beta
    cells = grid.cells()
    params = params_from_dict(model, report["params"])
    empirical, fitted = [], {}
    for direction in ("x", "y"):
        max_lag = cfg.max_lag if cfg.max_lag else default_max_lag(cells, direction)
        v = empirical_variogram(resid, cells, direction, max_lag=max_lag, min_pairs=cfg.min_pairs)
        empirical.append(v)
        step = grid.dx if direction == "x" else grid.dy
        lags = np.arange(1, int(max_lag / step + 1e-9) + 1) * step
        fitted[direction] = fitted_curve(params, direction, lags)
    return empirical, fitted


def cmd_variogram(cfg: RunConfig) -> int:
    from .plotting import plot_variograms

    grid = _require_grid(cfg)
    done = 0
    for layout in _require_designs(cfg):
        path = cfg.out / f"fit_{layout.name}.json"
        if not path.exists():
            raise ConfigError(f"no fit report for design {layout.name}: {path} (run fit first)")
        fits = json.loads(path.read_text())["models"]
        for model in ("isotropic", "anisotropic"):
            report = fits.get(model)
            if not report or "error" in report:
                continue
            empirical, fitted = _residual_variograms(cfg, grid, layout, model, report)
            stem = cfg.out / f"variogram_{layout.name}_{model}"
            write_empirical(empirical, f"{stem}_empirical.csv", header=cfg.header())
            write_fitted(fitted, f"{stem}_fitted.csv", header=cfg.header())
            plot_variograms(empirical, fitted, f"{stem}.png", title=f"{layout.name} {model}")
            done += 1
    if not done:
        raise ConfigError("no successful spatial fits to draw variograms for")
    print(f"{done} variogram set(s) written to {cfg.out}")
    return 0


def _synthetic(block: dict) -> SyntheticField:
    model = dict(block["model"])
    kind = model.pop("kind", "isotropic")
    lattice = Lattice(int(block["nx"]), int(block["ny"]), float(block.get("dx", 1.0)),
                      float(block.get("dy", 1.0)))
    return SyntheticField(lattice, params_from_dict(kind, model), float(block.get("mean", 5.0)))


def cmd_simulate(cfg: RunConfig) -> int:
    from .plotting import plot_effects, plot_null

    sim = dict(cfg.simulation)
    synthetic = sim.pop("synthetic", None)
    generator = _synthetic(synthetic) if synthetic else None
    grid = None if generator else _require_grid(cfg)
    experiments = sim.pop("experiments", ["null", "effect"])
    unknown = set(experiments) - {"null", "effect"}
    if unknown:
        raise ConfigError(f"unknown experiments: {sorted(unknown)}")
    try:
        config = SimulationConfig(
            designs=_require_designs(cfg), models=cfg.models, seed=cfg.seed,
            threads=cfg.threads, max_iter=cfg.max_iter, **sim,
        )
    except TypeError as exc:
        raise ConfigError(f"invalid simulation settings: {exc}") from exc

    cfg.out.mkdir(parents=True, exist_ok=True)
    status = 0
    runners = {"null": (run_null_experiment, plot_null), "effect": (run_effect_experiment, plot_effects)}
    for name in experiments:
        run, plot = runners[name]
        report = run(grid, None, None, config, field_generator=generator)
        stem = cfg.out / f"simulation_{name}"
        report.write(f"{stem}.json", f"{stem}.csv", provenance=cfg.provenance())
        plot(report, f"{stem}.png")
        for arm in report.arms:
            if arm.n_ok == 0:
                status = 1
                print(f"{name} {arm.design}/{arm.model}: every replicate failed", file=sys.stderr)
        print(f"{name}: {len(report.arms)} arms x {report.n_reps} reps -> {stem}.json")
    return status


COMMANDS = {
    "preprocess": cmd_preprocess,
    "design-preview": cmd_design_preview,
    "fit": cmd_fit,
    "variogram": cmd_variogram,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ofe-geostat", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, help="override config seed")
        p.add_argument("--out", help="override output directory")
        p.add_argument("--threads", type=int, help="worker processes for simulation replicates")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed, "threads": args.threads}
    if args.out is not None:
        overrides["out"] = str(Path(args.out).resolve())
    try:
        cfg = load_config(args.config, overrides)
        return COMMANDS[args.command](cfg)
    except GeostatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1


if __name__ == "__main__":
    sys.exit(main())
