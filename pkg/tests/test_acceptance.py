"""Acceptance criteria 1-9.

Each test records one PASS/FAIL line, shown in the "acceptance criteria"
section of the pytest terminal summary.  Runtime budgets are asserted.
"""

import math
import time

import numpy as np
import pytest

from ofe_geostat.covariance import (
    IsoExpParams,
    SumMetricParams,
    build_cov_matrix,
    effective_range,
    iso_cov,
    iso_variogram,
    summetric_cov,
)
from ofe_geostat.design import DesignLayout
from ofe_geostat.field_data import (
    FieldGeometry,
    Lattice,
    YieldPoint,
    aggregate_to_grid,
    align_rows,
    rotate_coordinates,
    trim_edges,
    write_grid,
)
from ofe_geostat.inference import fit_ols, fit_reml, gls_beta, reml_negloglik
from ofe_geostat.simulation import (
    SimulationConfig,
    SyntheticField,
    replicate_rng,
    run_effect_experiment,
    run_null_experiment,
    simulate_gaussian_field,
)

pytestmark = pytest.mark.acceptance


def lattice_cells(lat):
    cx, cy = lat.centroid_arrays()
    return np.column_stack([cx.ravel(), cy.ravel()])


def strip_X(nx, ny, width):
    t = np.tile((np.arange(nx) // width) % 2, ny)
    return np.column_stack([np.ones(nx * ny), t])


# ---- 1 ---------------------------------------------------------------------

def test_criterion_1_covariance_identities(criterion):
    criterion(1, "covariance identity suite")
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    worst_id = 0.0
    for _ in range(100):
        p = IsoExpParams(rng.uniform(0, 2), rng.uniform(0.01, 3), rng.uniform(0.1, 50))
        h = rng.uniform(1e-6, 200)
        worst_id = max(worst_id, abs(iso_variogram(h, p) + iso_cov(h, p) - (p.c0 + p.c1)))
    worst_red = 0.0
    for _ in range(100):
        c0, c1, a = rng.uniform(0, 2), rng.uniform(0.01, 3), rng.uniform(0.1, 50)
        hx, hy = rng.uniform(0, 200, 2)
        sm = SumMetricParams(c0, 0.0, 1.0, 0.0, 1.0, c1, a, 1.0)
        worst_red = max(worst_red, abs(summetric_cov(hx, hy, sm)
                                       - iso_cov(math.hypot(hx, hy), IsoExpParams(c0, c1, a))))
    elapsed = time.perf_counter() - t0
    criterion.detail = (f"max |r+c-(c0+c1)| = {worst_id:.1e} (tol 1e-12); "
                        f"max reduction error = {worst_red:.1e} (tol 1e-14); {elapsed:.2f}s")
    assert worst_id <= 1e-12
    assert worst_red <= 1e-14
    assert elapsed < 1.0


# ---- 2 ---------------------------------------------------------------------

def _naive_negloglik(theta, y, X, cells):
    V = build_cov_matrix(cells, theta, check=False)
    n, p = X.shape
    Vi = np.linalg.inv(V)
    A = X.T @ Vi @ X
    P = Vi - Vi @ X @ np.linalg.inv(A) @ X.T @ Vi
    return 0.5 * ((n - p) * math.log(2 * math.pi) + np.linalg.slogdet(V)[1]
                  + np.linalg.slogdet(A)[1] + y @ P @ y)


def test_criterion_2_reml_oracle(criterion):
    criterion(2, "REML oracle equivalence")
    t0 = time.perf_counter()
    lat = Lattice(5, 5, 1.0, 1.0)
    cells = lattice_cells(lat)
    X = strip_X(5, 5, 1)
    y = simulate_gaussian_field(lat, IsoExpParams(0.2, 0.8, 1.5), replicate_rng(2, 0),
                                mean=5.0).values.ravel()
    worst, grid_min = 0.0, np.inf
    for c0 in (0.05, 0.2, 0.5, 1.0):
        for c1 in (0.25, 0.5, 1.0, 2.0):
            for a in (0.5, 1.0, 2.0, 4.0):
                theta = IsoExpParams(c0, c1, a)
                value = reml_negloglik(theta, y, X, cells)
                worst = max(worst, abs(value - _naive_negloglik(theta, y, X, cells)))
                grid_min = min(grid_min, value)
    fit = fit_reml(y, X, cells, "isotropic")
    best = -fit.restricted_loglik
    elapsed = time.perf_counter() - t0
    criterion.detail = (f"max |REML - explicit inverse| = {worst:.1e} over 64 points (tol 1e-8); "
                        f"optimum {best:.6f} vs grid min {grid_min:.6f}; {elapsed:.1f}s")
    assert worst <= 1e-8
    assert best <= grid_min + 1e-3
    assert elapsed < 30


# ---- 3 ---------------------------------------------------------------------

def test_criterion_3_gls_reduces_to_ols(criterion):
    criterion(3, "GLS -> OLS reduction")
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        X = np.column_stack([np.ones(60), rng.integers(0, 2, 60)])
        if np.ptp(X[:, 1]) == 0:
            X[0, 1] = 1 - X[0, 1]
        y = rng.normal(5, 1, 60)
        ols = fit_ols(y, X).beta
        for s2 in (0.5, 1.0, 4.0):
            beta, _ = gls_beta(s2 * np.eye(60), X, y)
            worst = max(worst, float(np.max(np.abs(beta - ols) / np.abs(ols))))
    elapsed = time.perf_counter() - t0
    criterion.detail = f"max relative beta difference = {worst:.1e} (tol 1e-10); {elapsed:.2f}s"
    assert worst <= 1e-10
    assert elapsed < 5


# ---- 4 ---------------------------------------------------------------------

def test_criterion_4_parameter_recovery(criterion):
    criterion(4, "parameter recovery")
    t0 = time.perf_counter()
    lat = Lattice(20, 20, 1.0, 1.0)
    truth = IsoExpParams(0.1, 0.9, 5.0)
    cells = lattice_cells(lat)
    X = strip_X(20, 20, 4)
    sills, ranges = [], []
    for rep in range(20):
        y = simulate_gaussian_field(lat, truth, replicate_rng(4, rep), mean=5.0).values.ravel()
        fit = fit_reml(y, X, cells, "isotropic")
        sills.append(fit.params.c1)
        ranges.append(effective_range(fit.params))
    sill, rng_ = float(np.median(sills)), float(np.median(ranges))
    elapsed = time.perf_counter() - t0
    criterion.detail = (f"median sill {sill:.3f} (0.9 +/- 30%); median effective range "
                        f"{rng_:.2f} cells (15 +/- 50%); {elapsed:.0f}s")
    assert abs(sill - 0.9) <= 0.3 * 0.9
    assert abs(rng_ - 15.0) <= 0.5 * 15.0
    assert elapsed < 300


# ---- 5 ---------------------------------------------------------------------

def test_criterion_5_type_one_error(criterion):
    criterion(5, "type I error behavior")
    t0 = time.perf_counter()
    # effective range 12 cells against strips 3 cells wide
    field = SyntheticField(Lattice(12, 12, 1.0, 1.0), IsoExpParams(0.1, 0.9, 4.0))
    cfg = SimulationConfig(n_reps=200, seed=5, designs=[DesignLayout("strip", pass_width=3)],
                           models=("ols", "isotropic"))
    report = run_null_experiment(None, None, None, cfg, field_generator=field)
    ols, iso = report.arm("strip", "ols"), report.arm("strip", "isotropic")
    elapsed = time.perf_counter() - t0
    criterion.detail = (f"OLS rejection {ols.rejection_rate:.3f} (> 0.15); isotropic "
                        f"{iso.rejection_rate:.3f} (in [0.01, 0.12]); n_ok {ols.n_ok}/{iso.n_ok}; "
                        f"{elapsed:.0f}s")
    assert ols.n_ok == iso.n_ok == 200
    assert ols.rejection_rate > 0.15
    assert 0.01 <= iso.rejection_rate <= 0.12
    assert elapsed < 900


# ---- 6 ---------------------------------------------------------------------

def test_criterion_6_effect_estimation(criterion):
    criterion(6, "effect-estimation pipeline")
    t0 = time.perf_counter()
    noise = IsoExpParams(0.25, 1e-9, 0.01)
    field = SyntheticField(Lattice(20, 20, 1.0, 1.0), noise, mean=5.0)
    cfg = SimulationConfig(effect_mean=0.3, effect_sd=0.1, n_reps=200, seed=6,
                           designs=[DesignLayout("strip", pass_width=4)], models=("ols",))
    arm = run_effect_experiment(None, None, None, cfg, field_generator=field).arm("strip", "ols")
    elapsed = time.perf_counter() - t0
    criterion.detail = (f"OLS bias {arm.bias:+.4f} t/ha (+/- 0.02); CI coverage of 0.3 "
                        f"{arm.ci_covers_truth_rate:.3f} (0.90-0.99); {elapsed:.1f}s")
    assert arm.n_ok == 200
    assert abs(arm.bias) <= 0.02
    assert 0.90 <= arm.ci_covers_truth_rate <= 0.99
    assert elapsed < 600


# ---- 7 and 8 ---------------------------------------------------------------

ANISO_TRUTH = SumMetricParams(0.1, 0.1, 2.0, 1.0, 10.0, 0.2, 3.0, 1.0)
ISO_TRUTH = IsoExpParams(0.1, 0.9, 3.0)


@pytest.fixture(scope="module")
def selection_runs():
    t0 = time.perf_counter()
    cfg = SimulationConfig(n_reps=20, seed=7, designs=[DesignLayout("strip", pass_width=3)],
                           models=("isotropic", "anisotropic"))
    runs = {}
    for name, truth in (("anisotropic", ANISO_TRUTH), ("isotropic", ISO_TRUTH)):
        field = SyntheticField(Lattice(15, 15, 1.0, 1.0), truth)
        runs[name] = run_null_experiment(None, None, None, cfg, field_generator=field)
    return runs, time.perf_counter() - t0


def test_criterion_7_model_selection(criterion, selection_runs):
    criterion(7, "AIC model selection")
    runs, elapsed = selection_runs
    aniso_rate = runs["anisotropic"].selection_rates("strip")["anisotropic"]
    iso_rate = runs["isotropic"].selection_rates("strip")["isotropic"]
    criterion.detail = (f"cy1/cx1 = {ANISO_TRUTH.cy1 / ANISO_TRUTH.cx1:.0f}; anisotropic selected "
                        f"{aniso_rate:.2f} on anisotropic data, isotropic selected {iso_rate:.2f} "
                        f"on isotropic data (both >= 0.70); {elapsed:.0f}s")
    assert ANISO_TRUTH.cy1 / ANISO_TRUTH.cx1 >= 5
    assert aniso_rate >= 0.70
    assert iso_rate >= 0.70
    assert elapsed < 900


def test_criterion_8_anisotropic_ci_width(criterion, selection_runs):
    criterion(8, "anisotropic CI behavior")
    runs, _ = selection_runs
    report = runs["anisotropic"]
    aniso = report.arm("strip", "anisotropic").mean_ci_width
    iso = report.arm("strip", "isotropic").mean_ci_width
    criterion.detail = f"D1 mean CI width anisotropic {aniso:.4f} >= isotropic {iso:.4f}"
    assert aniso >= iso


# ---- 9 ---------------------------------------------------------------------

def _point_cloud(n, seed):
    rng = np.random.default_rng(seed)
    heading = math.radians(30.0)
    rows = rng.integers(0, 20, n)
    along = rng.uniform(0, 250, n)
    across = (rows + 0.5) * 2.5 + rng.uniform(-0.4, 0.4, n)
    # field frame -> map frame, undone by rotate_coordinates(heading)
    x = 500 + across * math.cos(heading) - along * math.sin(heading)
    y = 800 + across * math.sin(heading) + along * math.cos(heading)
    values = rng.gamma(20, 0.25, n)
    return [YieldPoint(float(a), float(b), float(v)) for a, b, v in zip(x, y, values)], heading


def _preprocess(points, heading, path):
    pts = align_rows(rotate_coordinates(points, heading), 2.5)
    grid = aggregate_to_grid(pts, 2.5, 2.5, origin=(0.0, min(p.y for p in pts)))
    write_grid(grid, path, header="seed=9")
    trimmed = trim_edges(grid, FieldGeometry(headland_margin=5.0, side_margin=2.5, heading=heading))
    return pts, grid, trimmed


def test_criterion_9_preprocessing(criterion, tmp_path):
    criterion(9, "preprocessing determinism and mass conservation")
    t0 = time.perf_counter()
    points, heading = _point_cloud(10_000, 9)
    pts, grid, trimmed = _preprocess(points, heading, tmp_path / "a.csv")
    _, _, trimmed_b = _preprocess(points, heading, tmp_path / "b.csv")
    identical = ((tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
                 and (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes())

    raw = np.array([p.value for p in points])
    total = float(np.sum(grid.values[grid.mask] * grid.counts[grid.mask]))
    mass_err = abs(total - raw.sum()) / raw.sum()
    # rotation preserves pairwise distances; alignment keeps y and value
    rot = rotate_coordinates(points, heading)
    d_before = math.dist((points[0].x, points[0].y), (points[-1].x, points[-1].y))
    d_after = math.dist((rot[0].x, rot[0].y), (rot[-1].x, rot[-1].y))
    ys_kept = all(a.y == b.y and a.value == b.value for a, b in zip(rot, pts))
    trim_subset = bool(np.all(grid.mask[trimmed.mask])) and trimmed.n_valid < grid.n_valid
    elapsed = time.perf_counter() - t0
    criterion.detail = (f"10^4 points -> {grid.n_valid} cells ({trimmed.n_valid} after trim); "
                        f"counts sum {int(grid.counts.sum())}; mass rel err {mass_err:.1e}; "
                        f"byte-identical {identical}; {elapsed:.2f}s")
    assert identical
    assert np.array_equal(trimmed.values[trimmed.mask], trimmed_b.values[trimmed_b.mask])
    assert int(grid.counts.sum()) == 10_000
    assert mass_err < 1e-12
    assert d_after == pytest.approx(d_before, rel=1e-12)
    assert ys_kept
    assert len({p.x for p in pts}) == 20
    assert trim_subset
    assert elapsed < 5
