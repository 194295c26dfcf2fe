"""OLS and REML fitting of spatial linear mixed models ``y = X beta + e``.

``e`` has covariance ``V`` built from an isotropic exponential or a
sum-metric anisotropic model.  Covariance parameters are estimated by
restricted maximum likelihood with a multi-start Nelder-Mead search; fixed
effects follow by generalized least squares and are tested with z
statistics.
"""

from __future__ import annotations

import logging
import math
from dataclasses import astuple, dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.stats import norm

from .covariance import (
    CovarianceParams,
    IsoExpParams,
    LagTable,
    SumMetricParams,
    cholesky_factor,
)
from .errors import FitFailureError, IllConditionedError, RankError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2 * math.pi)
MODEL_KINDS = ("isotropic", "anisotropic")
N_COV_PARAMS = {"isotropic": 3, "anisotropic": 8}

# search box in log space; keeps the simplex away from overflow
NUGGET_RATIO_BOUNDS = (1e-8, 1e6)
SHARE_LOGIT_BOUNDS = (-20.0, 20.0)
ALPHA_BOUNDS = (1e-4, 1e4)


def check_full_rank(X: np.ndarray) -> None:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] < X.shape[1]:
        raise RankError(f"design matrix of shape {X.shape} cannot have full column rank")
    if np.linalg.matrix_rank(X) < X.shape[1]:
        raise RankError("design matrix does not have full column rank")


def wald_test(beta_j: float, se_j: float) -> tuple[float, float]:
    """z statistic and two-sided normal p-value."""
    if not se_j > 0:
        raise ValueError("standard error must be positive")
    z = beta_j / se_j
    return z, float(2 * norm.sf(abs(z)))


def aic(restricted_loglik: float, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return -2.0 * restricted_loglik + 2.0 * k


@dataclass
class OlsFit:
    beta: np.ndarray
    se: np.ndarray
    sigma2: float
    z: float
    p_value: float
    cov_beta: np.ndarray = field(repr=False)

    model_kind = "ols"


def fit_ols(y, X) -> OlsFit:
    """Least squares fit with z-based test of the last (treatment) column."""
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    check_full_rank(X)
    n, p = X.shape
    if n <= p:
        raise RankError("OLS needs more observations than coefficients")
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ beta
    sigma2 = float(resid @ resid) / (n - p)
    cov_beta = sigma2 * np.linalg.inv(X.T @ X)
    se = np.sqrt(np.diag(cov_beta))
    if sigma2 == 0:
        # exact fit: report a zero-variance fit with an undefined test
        return OlsFit(beta, se, 0.0, float("nan"), float("nan"), cov_beta)
    z, p_value = wald_test(beta[-1], se[-1])
    return OlsFit(beta, se, sigma2, z, p_value, cov_beta)


@dataclass
class _GlsTerms:
    beta: np.ndarray
    cov_beta: np.ndarray
    logdet_v: float
    logdet_a: float
    quad: float


def _gls_terms(L: np.ndarray, X: np.ndarray, y: np.ndarray) -> _GlsTerms:
    """GLS pieces from the lower Cholesky factor ``L`` of ``V``."""
    Xw = scipy.linalg.solve_triangular(L, X, lower=True, check_finite=False)
    yw = scipy.linalg.solve_triangular(L, y, lower=True, check_finite=False)
    A = Xw.T @ Xw
    try:
        La = np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise RankError("X^T V^-1 X is singular") from exc
    beta = scipy.linalg.cho_solve((La, True), Xw.T @ yw)
    r = yw - Xw @ beta
    Ainv = scipy.linalg.cho_solve((La, True), np.eye(len(A)))
    return _GlsTerms(
        beta=beta,
        cov_beta=(Ainv + Ainv.T) / 2,
        logdet_v=2.0 * float(np.log(np.diag(L)).sum()),
        logdet_a=2.0 * float(np.log(np.diag(La)).sum()),
        quad=float(r @ r),
    )


def gls_beta(V, X, y) -> tuple[np.ndarray, np.ndarray]:
    """Generalized least squares estimate and its covariance ``(X'V^-1X)^-1``."""
    V = np.asarray(V, dtype=float)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    L = cholesky_factor(V, float(np.mean(np.diag(V))))
    t = _gls_terms(L, X, y)
    return t.beta, t.cov_beta


def _negloglik_from_terms(t: _GlsTerms, n: int, p: int) -> float:
    return 0.5 * ((n - p) * LOG_2PI + t.logdet_v + t.logdet_a + t.quad)


def reml_negloglik(theta: CovarianceParams, y, X, cells) -> float:
    """Negative restricted log-likelihood.

    ``-l_R = ((n-p)/2) log 2pi + 1/2 log|V| + 1/2 log|X'V^-1X| + 1/2 y'Py``
    evaluated through Cholesky factors of ``V`` and ``X'V^-1X``.
    """
    return _RemlProblem(y, X, cells, theta.kind).negloglik(theta)


# ---- parameter transforms -------------------------------------------------
#
# The optimizer works on the REML criterion profiled over the overall
# variance scale s: V = s * W(eta).  For given eta the optimal scale is
# y'P_W y / (n - p), so only shape parameters are searched.
#
#   isotropic:   eta = (log c0/c1, log a)
#   anisotropic: eta = (log c0/S, ux, uy, log ax, log ay, log axy, log alpha)
#                with component shares softmax(ux, uy, 0) of S = cx1+cy1+cxy1


def _shape_params(kind: str, eta: np.ndarray) -> CovarianceParams:
    if kind == "isotropic":
        return IsoExpParams(math.exp(eta[0]), 1.0, math.exp(eta[1]))
    logits = np.array([eta[1], eta[2], 0.0])
    shares = np.exp(logits - logits.max())
    shares /= shares.sum()
    return SumMetricParams(
        c0=math.exp(eta[0]),
        cx1=float(shares[0]), ax=math.exp(eta[3]),
        cy1=float(shares[1]), ay=math.exp(eta[4]),
        cxy1=float(shares[2]), axy=math.exp(eta[5]),
        alpha=math.exp(eta[6]),
    )


def _scale(params: CovarianceParams, s: float) -> CovarianceParams:
    if isinstance(params, IsoExpParams):
        return IsoExpParams(params.c0 * s, params.c1 * s, params.a)
    return SumMetricParams(
        params.c0 * s, params.cx1 * s, params.ax, params.cy1 * s, params.ay,
        params.cxy1 * s, params.axy, params.alpha,
    )


def _to_eta(params: CovarianceParams, bounds) -> np.ndarray:
    """Inverse of ``_shape_params`` (scale dropped), clipped into ``bounds``."""
    tiny = 1e-300
    if isinstance(params, IsoExpParams):
        eta = [math.log(max(params.c0, tiny) / params.c1), math.log(params.a)]
    else:
        sills = np.array([params.cx1, params.cy1, params.cxy1])
        total = sills.sum()
        logs = np.log(np.maximum(sills, tiny * total))
        eta = [
            math.log(max(params.c0, tiny) / total),
            logs[0] - logs[2],
            logs[1] - logs[2],
            math.log(params.ax),
            math.log(params.ay),
            math.log(params.axy),
            math.log(params.alpha),
        ]
    lo, hi = np.array(bounds).T
    return np.clip(np.array(eta, dtype=float), lo, hi)


class _RemlProblem:
    """REML objective for fixed data, caching the lag table."""

    def __init__(self, y, X, cells, kind: str):
        if kind not in MODEL_KINDS:
            raise ValueError(f"model kind must be one of {MODEL_KINDS}, got {kind!r}")
        self.y = np.asarray(y, dtype=float)
        self.X = np.asarray(X, dtype=float)
        self.cells = np.asarray(cells, dtype=float)
        check_full_rank(self.X)
        if not (len(self.y) == len(self.X) == len(self.cells)):
            raise ValueError("y, X and cells must have the same number of rows")
        self.n, self.p = self.X.shape
        if self.n <= self.p:
            raise RankError("REML needs more observations than fixed effects")
        self.kind = kind
        self.lags = LagTable(self.cells)

    def terms(self, params: CovarianceParams) -> _GlsTerms:
        V = self.lags.matrix(params)
        L = cholesky_factor(V, params.total_variance, theta=astuple(params))
        return _gls_terms(L, self.X, self.y)

    def negloglik(self, params: CovarianceParams) -> float:
        return _negloglik_from_terms(self.terms(params), self.n, self.p)

    def profiled(self, eta: np.ndarray) -> tuple[float, float]:
        """Profiled objective and the optimal scale at shape ``eta``."""
        t = self.terms(_shape_params(self.kind, eta))
        dof = self.n - self.p
        s = max(t.quad / dof, np.finfo(float).tiny)
        value = 0.5 * (dof * (LOG_2PI + math.log(s) + 1.0) + t.logdet_v + t.logdet_a)
        return value, s

    def bounds(self):
        h = np.hypot(self.lags.hx, self.lags.hy)
        h_min = h[h > 0].min()
        h_max = h.max()
        log_range = (math.log(0.01 * h_min), math.log(100.0 * h_max))
        nug = tuple(math.log(b) for b in NUGGET_RATIO_BOUNDS)
        if self.kind == "isotropic":
            return [nug, log_range]
        share = SHARE_LOGIT_BOUNDS
        return [nug, share, share, log_range, log_range, log_range,
                tuple(math.log(b) for b in ALPHA_BOUNDS)]


def default_starts(kind: str, y, X, cells) -> list[CovarianceParams]:
    """Eight deterministic starting values.

    Nugget fraction {0.1, 0.5} of the OLS residual variance crossed with
    effective ranges {0.1, 0.3, 0.6, 1.0} times the field extent.
    """
    cells = np.asarray(cells, dtype=float)
    ols = fit_ols(y, X)
    var = ols.sigma2 if ols.sigma2 > 0 else 1.0
    span = cells.max(axis=0) - cells.min(axis=0)
    ext_x, ext_y = (max(s, 1e-6) for s in span)
    ext = max(ext_x, ext_y)
    starts = []
    for frac in (0.1, 0.5):
        for r in (0.1, 0.3, 0.6, 1.0):
            c0, sill = frac * var, (1 - frac) * var
            if kind == "isotropic":
                starts.append(IsoExpParams(c0, sill, r * ext / 3))
            else:
                starts.append(SumMetricParams(
                    c0, sill / 3, r * ext_x / 3, sill / 3, r * ext_y / 3,
                    sill / 3, r * ext / 3, 1.0,
                ))
    return starts


@dataclass
class StartResult:
    start: CovarianceParams
    objective: float
    n_iter: int
    converged: bool
    message: str = ""


@dataclass
class RemlFit:
    """Result of a multi-start REML fit.

    ``k`` counts covariance parameters plus fixed effects and is the
    parameter count used in ``aic``.  ``trace`` holds the best objective
    after each simplex iteration of the winning start.
    """

    model_kind: str
    params: CovarianceParams
    beta: np.ndarray
    se: np.ndarray
    cov_beta: np.ndarray
    restricted_loglik: float
    aic: float
    k: int
    n_starts: int
    converged: bool
    best_start_index: int
    starts: list[StartResult] = field(default_factory=list, repr=False)
    trace: list[float] = field(default_factory=list, repr=False)

    @property
    def z(self) -> float:
        return float(self.beta[-1] / self.se[-1])

    @property
    def p_value(self) -> float:
        return wald_test(self.beta[-1], self.se[-1])[1]

    @property
    def start_objectives(self) -> list[float]:
        return [s.objective for s in self.starts]


def _simplex(x0, step, bounds):
    lo, hi = np.array(bounds).T
    pts = [x0]
    for i in range(len(x0)):
        v = x0.copy()
        v[i] = v[i] + step if v[i] + step <= hi[i] else v[i] - step
        pts.append(np.clip(v, lo, hi))
    return np.array(pts)


def _recorder(trace):
    def record(intermediate_result):
        trace.append(float(intermediate_result.fun))
    return record


def fit_reml(y, X, cells, model_kind: str, starts=None, max_iter: int = 500,
             xatol: float = 1e-6) -> RemlFit:
    """Fit covariance parameters by REML from several starting values.

    Each start runs a bounded Nelder-Mead search on log-transformed shape
    parameters until the simplex diameter drops below ``xatol`` or
    ``max_iter`` iterations pass.  The start with the lowest objective
    wins; ``beta`` and ``se`` are the GLS estimates at that optimum.
    """
    problem = _RemlProblem(y, X, cells, model_kind)
    if starts is None:
        starts = default_starts(model_kind, problem.y, problem.X, problem.cells)
    starts = list(starts)
    if len({astuple(s) for s in starts}) < 2:
        raise ValueError("fit_reml needs at least 2 distinct starting values")
    for s in starts:
        if s.kind != model_kind:
            raise ValueError(f"start {s} does not match model kind {model_kind!r}")

    bounds = problem.bounds()

    def objective(eta):
        try:
            value, _ = problem.profiled(eta)
        except (IllConditionedError, RankError):
            return np.inf
        return value if np.isfinite(value) else np.inf

    results: list[StartResult] = []
    best = (np.inf, None, None, [])
    for idx, start in enumerate(starts):
        x0 = _to_eta(start, bounds)
        trace: list[float] = []
        record = _recorder(trace)
        try:
            res = scipy.optimize.minimize(
                objective, x0, method="Nelder-Mead", bounds=bounds,
                callback=record,
                options={
                    "initial_simplex": _simplex(x0, 0.5, bounds),
                    "xatol": xatol, "fatol": np.inf, "maxiter": max_iter,
                    "maxfev": 4 * max_iter * (len(x0) + 1),
                },
            )
        except Exception as exc:  # noqa: BLE001 - recorded per start
            results.append(StartResult(start, np.inf, 0, False, repr(exc)))
            continue
        ok = bool(res.success) and res.nit < max_iter
        results.append(StartResult(start, float(res.fun), int(res.nit), ok, str(res.message)))
        if np.isfinite(res.fun) and res.fun < best[0]:
            best = (float(res.fun), idx, res.x, trace)

    if best[1] is None:
        raise FitFailureError(
            f"all {len(starts)} REML starts failed for the {model_kind} model",
            [f"start {i}: {r.message or r.objective}" for i, r in enumerate(results)],
        )

    _, idx, eta, trace = best
    _, s = problem.profiled(eta)
    params = _scale(_shape_params(model_kind, eta), s)
    terms = problem.terms(params)
    nll = _negloglik_from_terms(terms, problem.n, problem.p)
    se = np.sqrt(np.diag(terms.cov_beta))
    k = N_COV_PARAMS[model_kind] + problem.p
    loglik = -nll
    return RemlFit(
        model_kind=model_kind,
        params=params,
        beta=terms.beta,
        se=se,
        cov_beta=terms.cov_beta,
        restricted_loglik=loglik,
        aic=aic(loglik, k),
        k=k,
        n_starts=len(starts),
        converged=results[idx].converged,
        best_start_index=idx,
        starts=results,
        trace=trace,
    )


def select_model(fits: list[RemlFit]) -> RemlFit:
    """Lowest-AIC fit; ties go to the model with fewer parameters."""
    if len(fits) < 2:
        raise ValueError("model selection needs at least 2 fits")
    return min(fits, key=lambda f: (round(f.aic, 9), f.k))


def treatment_summary(fit) -> dict:
    """Treatment coefficient, its standard error, z and p-value."""
    beta, se = float(fit.beta[-1]), float(fit.se[-1])
    z, p = (float("nan"), float("nan")) if not se > 0 else wald_test(beta, se)
    return {"beta": beta, "se": se, "z": z, "p": p}


def fit_report(fit, coef_names=("intercept", "treatment")) -> dict:
    """JSON-ready description of an OLS or REML fit."""
    rows = []
    for name, b, s in zip(coef_names, fit.beta, fit.se):
        z, p = wald_test(b, s) if s > 0 else (float("nan"), float("nan"))
        rows.append({"name": name, "beta": float(b), "se": float(s), "z": z, "p": p})
    report = {"model": fit.model_kind, "coefficients": rows}
    if isinstance(fit, OlsFit):
        report["sigma2"] = fit.sigma2
        return report
    report.update({
        "params": fit.params.as_dict(),
        "restricted_loglik": fit.restricted_loglik,
        "aic": fit.aic,
        "aic_k": fit.k,
        "aic_k_note": "covariance parameters plus fixed effects",
        "converged": fit.converged,
        "n_starts": fit.n_starts,
        "best_start_index": fit.best_start_index,
        "start_objectives": fit.start_objectives,
        "start_iterations": [s.n_iter for s in fit.starts],
    })
    return report
