"""Monte-Carlo evaluation of designs and models.

Two experiments are supported.  The null experiment fits each model with
no treatment effect and records the treatment p-value (type I error).  The
effect experiment adds Gaussian draws to treated cells and records the
estimated effect, its bias and 95% confidence interval.

Run on a single real grid with one replicate, an experiment produces one
p-value per design and model.  With a :class:`SyntheticField` generator and
many replicates it produces rejection rates.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.stats import norm

from .covariance import CovarianceParams, LagTable, cholesky_factor
from .design import DesignLayout, TreatmentMask, assign_design, build_design_matrix
from .errors import GeostatError
from .field_data import Lattice, YieldGrid
from .inference import fit_ols, fit_reml, treatment_summary

logger = logging.getLogger(__name__)

MODELS = ("ols", "isotropic", "anisotropic")
Z_975 = float(norm.ppf(0.975))


@dataclass
class SimulationConfig:
    effect_mean: float = 0.3
    effect_sd: float = 0.10
    n_reps: int = 1
    seed: int = 0
    alpha_level: float = 0.05
    designs: list[DesignLayout] = field(default_factory=list)
    models: tuple[str, ...] = MODELS
    max_iter: int = 500
    threads: int = 1

    def __post_init__(self):
        if self.effect_sd < 0:
            raise ValueError("effect_sd must be non-negative")
        if not 0 < self.alpha_level < 1:
            raise ValueError("alpha_level must lie in (0, 1)")
        if self.n_reps < 1:
            raise ValueError("n_reps must be >= 1")
        if self.seed < 0:
            raise ValueError("seed must be an unsigned integer")
        unknown = set(self.models) - set(MODELS)
        if unknown:
            raise ValueError(f"unknown models {sorted(unknown)}")


def replicate_rng(seed: int, rep: int) -> np.random.Generator:
    """Independent stream for replicate ``rep`` derived from the root seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep,)))


# ---- fields and treatment injection ----------------------------------------

@lru_cache(maxsize=8)
def _field_factor(lattice: Lattice, model: CovarianceParams) -> np.ndarray:
    cx, cy = lattice.centroid_arrays()
    V = LagTable(np.column_stack([cx.ravel(), cy.ravel()])).matrix(model)
    return cholesky_factor(V, model.total_variance, theta=model)


def simulate_gaussian_field(lattice: Lattice, model: CovarianceParams,
                            rng: np.random.Generator, mean: float = 0.0) -> YieldGrid:
    """Draw ``mean + L z`` on every lattice cell, ``L L' = V``."""
    L = _field_factor(lattice, model)
    z = rng.standard_normal(L.shape[0])
    values = (mean + L @ z).reshape(lattice.shape)
    return YieldGrid(lattice.origin, lattice.dx, lattice.dy, values,
                     np.ones(lattice.shape, dtype=bool))


@dataclass(frozen=True)
class SyntheticField:
    """Picklable generator of Gaussian random fields on a fixed lattice."""

    lattice: Lattice
    model: CovarianceParams
    mean: float = 5.0

    def __call__(self, rng: np.random.Generator) -> YieldGrid:
        return simulate_gaussian_field(self.lattice, self.model, rng, self.mean)


def treatment_draws(mask: TreatmentMask, effect_mean: float, effect_sd: float,
                    rng: np.random.Generator) -> np.ndarray:
    """One N(effect_mean, effect_sd^2) draw per treated valid cell."""
    return rng.normal(effect_mean, effect_sd, size=mask.n_treated)


def _add_to_treated(grid: YieldGrid, mask: TreatmentMask, draws: np.ndarray) -> YieldGrid:
    y = grid.vector().copy()
    y[mask.vector() == 1] += draws
    return grid.with_vector(y)


def inject_treatment(grid: YieldGrid, mask: TreatmentMask, effect_mean: float,
                     effect_sd: float, rng: np.random.Generator) -> YieldGrid:
    """Copy of ``grid`` with independent Gaussian effects added to treated cells."""
    if not np.array_equal(grid.mask, mask.mask):
        raise ValueError("treatment mask is not aligned with the grid")
    return _add_to_treated(grid, mask, treatment_draws(mask, effect_mean, effect_sd, rng))


# ---- reports ---------------------------------------------------------------

@dataclass
class ArmResult:
    """Outcomes of one design x model arm across replicates."""

    design: str
    model: str
    truth: float
    alpha_level: float
    reps: list[int] = field(default_factory=list)
    beta: list[float] = field(default_factory=list)
    se: list[float] = field(default_factory=list)
    p: list[float] = field(default_factory=list)
    aic: list[float] = field(default_factory=list)
    realized_effect: list[float] = field(default_factory=list)
    failures: list[tuple[int, str]] = field(default_factory=list)

    @property
    def n_ok(self) -> int:
        return len(self.reps)

    @property
    def ci_low(self) -> np.ndarray:
        return np.asarray(self.beta) - Z_975 * np.asarray(self.se)

    @property
    def ci_high(self) -> np.ndarray:
        return np.asarray(self.beta) + Z_975 * np.asarray(self.se)

    def _rate(self, flags) -> float:
        return float(np.mean(flags)) if self.n_ok else float("nan")

    @property
    def rejection_rate(self) -> float:
        return self._rate(np.asarray(self.p) < self.alpha_level)

    @property
    def bias(self) -> float:
        return self._rate(np.asarray(self.beta) - self.truth)

    @property
    def ci_covers_zero_rate(self) -> float:
        return self._rate((self.ci_low <= 0) & (0 <= self.ci_high))

    @property
    def ci_covers_truth_rate(self) -> float:
        return self._rate((self.ci_low <= self.truth) & (self.truth <= self.ci_high))

    @property
    def mean_ci_width(self) -> float:
        return self._rate(self.ci_high - self.ci_low)

    def summary(self) -> dict:
        return {
            "design": self.design,
            "model": self.model,
            "n_ok": self.n_ok,
            "n_failed": len(self.failures),
            "failures": [list(f) for f in self.failures],
            "rejection_rate": self.rejection_rate,
            "mean_p": self._rate(self.p),
            "bias": self.bias,
            "mean_abs_bias": self._rate(np.abs(np.asarray(self.beta) - self.truth)),
            "mean_ci_width": self.mean_ci_width,
            "ci_covers_zero_rate": self.ci_covers_zero_rate,
            "ci_covers_truth_rate": self.ci_covers_truth_rate,
            "mean_realized_effect": self._rate(self.realized_effect),
            "p_values": list(self.p),
        }


@dataclass
class SimulationReport:
    experiment: str
    protocol: str
    truth: float
    n_reps: int
    seed: int
    alpha_level: float
    arms: list[ArmResult]

    def arm(self, design: str, model: str) -> ArmResult:
        for a in self.arms:
            if a.design == design and a.model == model:
                return a
        raise KeyError((design, model))

    def selection_rates(self, design: str) -> dict[str, float]:
        """Share of replicates in which each spatial model had the lowest AIC.

        Only replicates where every spatial model was fitted count; ties go
        to the isotropic model.
        """
        spatial = [a for a in self.arms if a.design == design and a.model != "ols"]
        if len(spatial) < 2:
            return {}
        by_rep = [dict(zip(a.reps, a.aic)) for a in spatial]
        common = sorted(set.intersection(*(set(d) for d in by_rep)))
        wins = {a.model: 0 for a in spatial}
        k = {"isotropic": 0, "anisotropic": 1}
        for rep in common:
            best = min(spatial, key=lambda a: (round(by_rep[spatial.index(a)][rep], 9), k[a.model]))
            wins[best.model] += 1
        return {m: (w / len(common) if common else float("nan")) for m, w in wins.items()}

    def to_dict(self) -> dict:
        designs = list(dict.fromkeys(a.design for a in self.arms))
        return {
            "experiment": self.experiment,
            "protocol": self.protocol,
            "truth": self.truth,
            "n_reps": self.n_reps,
            "seed": self.seed,
            "alpha_level": self.alpha_level,
            "ci_multiplier": Z_975,
            "arms": [a.summary() for a in self.arms],
            "aic_selection_rates": {d: self.selection_rates(d) for d in designs},
        }

    def rows(self):
        for a in self.arms:
            for rep, b, s, p, lo, hi in zip(a.reps, a.beta, a.se, a.p, a.ci_low, a.ci_high):
                yield (a.design, a.model, rep, p, b, s, float(lo), float(hi))

    def write(self, json_path, csv_path, provenance: dict | None = None) -> None:
        doc = self.to_dict()
        if provenance:
            doc = {"provenance": provenance, **doc}
        Path(json_path).write_text(json.dumps(_jsonable(doc), indent=2) + "\n")
        buf = io.StringIO()
        if provenance:
            buf.write("# " + " ".join(f"{k}={v}" for k, v in provenance.items()) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["design", "model", "rep", "p", "beta", "se", "ci_low", "ci_high"])
        for row in self.rows():
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
        Path(csv_path).write_text(buf.getvalue())


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


# ---- experiment driver -----------------------------------------------------

def _fit_one(model: str, y, X, cells, max_iter: int):
    if model == "ols":
        fit = fit_ols(y, X)
        return treatment_summary(fit), float("nan")
    fit = fit_reml(y, X, cells, model, max_iter=max_iter)
    return treatment_summary(fit), fit.aic


def _replicate(task):
    """Fit every design x model arm for one replicate.

    Returns a list of ``(design, model, record_or_None, error_or_None)``.
    """
    rep, source, designs, config, inject = task
    rng = replicate_rng(config.seed, rep)
    grid = source(rng) if callable(source) else source
    out = []
    for layout in designs:
        mask = assign_design(grid, layout)
        X = build_design_matrix(mask)
        field_grid, realized = grid, float("nan")
        if inject:
            draws = treatment_draws(mask, config.effect_mean, config.effect_sd, rng)
            field_grid = _add_to_treated(grid, mask, draws)
            realized = float(draws.mean())
        y, cells = field_grid.vector(), field_grid.cells()
        for model in config.models:
            try:
                summary, aic_value = _fit_one(model, y, X, cells, config.max_iter)
                if not summary["se"] > 0:
                    raise GeostatError("zero standard error")
            except GeostatError as exc:
                out.append((layout.name, model, None, f"{type(exc).__name__}: {exc}"))
                continue
            summary.update(aic=aic_value, realized=realized)
            out.append((layout.name, model, summary, None))
    return rep, out


def _run(grid, config: SimulationConfig, field_generator, inject: bool) -> SimulationReport:
    designs = list(config.designs)
    if not designs:
        raise ValueError("simulation needs at least one design")
    names = [d.name for d in designs]
    if len(set(names)) != len(names):
        raise ValueError(f"design names must be unique: {names}")
    if field_generator is None and grid is None:
        raise ValueError("need a grid or a field generator")

    source = field_generator if field_generator is not None else grid
    n_reps = config.n_reps
    if field_generator is None and not inject:
        # every replicate would refit identical data
        n_reps = 1
    protocol = "single_run_p_value" if n_reps == 1 else "monte_carlo"
    truth = config.effect_mean if inject else 0.0

    arms = {
        (d.name, m): ArmResult(d.name, m, truth, config.alpha_level)
        for d in designs for m in config.models
    }
    tasks = [(rep, source, designs, config, inject) for rep in range(n_reps)]
    if config.threads > 1 and n_reps > 1:
        with ProcessPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(_replicate, tasks))
    else:
        results = [_replicate(t) for t in tasks]

    for rep, records in sorted(results, key=lambda r: r[0]):
        for design, model, rec, err in records:
            arm = arms[(design, model)]
            if rec is None:
                arm.failures.append((rep, err))
                logger.warning("rep %d %s/%s failed: %s", rep, design, model, err)
                continue
            arm.reps.append(rep)
            arm.beta.append(rec["beta"])
            arm.se.append(rec["se"])
            arm.p.append(rec["p"])
            arm.aic.append(rec["aic"])
            arm.realized_effect.append(rec["realized"])

    return SimulationReport(
        experiment="effect" if inject else "null",
        protocol=protocol,
        truth=truth,
        n_reps=n_reps,
        seed=config.seed,
        alpha_level=config.alpha_level,
        arms=list(arms.values()),
    )


def run_null_experiment(grid: YieldGrid | None, designs, models, config: SimulationConfig,
                        field_generator=None) -> SimulationReport:
    """Treatment p-values when the true effect is zero.

    ``designs`` and ``models`` override those in ``config`` when given.
    """
    config = _override(config, designs, models)
    return _run(grid, config, field_generator, inject=False)


def run_effect_experiment(grid: YieldGrid | None, designs, models, config: SimulationConfig,
                          field_generator=None) -> SimulationReport:
    """Estimated effects after injecting N(effect_mean, effect_sd^2) per treated cell."""
    config = _override(config, designs, models)
    return _run(grid, config, field_generator, inject=True)


def _override(config, designs, models):
    d = asdict(config)
    d["designs"] = list(designs) if designs else list(config.designs)
    d["models"] = tuple(models) if models else tuple(config.models)
    return SimulationConfig(**d)
