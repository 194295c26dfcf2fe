"""Exponential covariance models: isotropic and sum-metric anisotropic.

The isotropic model is::

    c(0) = c0 + c1,    c(h) = c1 * exp(-h / a)   for h > 0

The sum-metric model adds an across-pass component, an along-travel
component and a joint component on a rescaled lag::

    c(hx, hy) = cx1 exp(-hx/ax) + cy1 exp(-hy/ay) + cxy1 exp(-hxy/axy)
    hxy = sqrt(hx**2 + alpha * hy**2)

with a single shared nugget ``c0`` added at zero lag.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields

import numpy as np
import scipy.linalg

from .errors import DomainError, IllConditionedError

# fallback diagonal jitter, relative to the total variance
JITTER = 1e-10


@dataclass(frozen=True)
class IsoExpParams:
    c0: float
    c1: float
    a: float

    kind = "isotropic"

    def __post_init__(self):
        if not (self.c0 >= 0 and self.c1 > 0 and self.a > 0):
            raise ValueError(f"invalid isotropic parameters: {self}")

    @property
    def n_params(self) -> int:
        return 3

    @property
    def total_variance(self) -> float:
        return self.c0 + self.c1

    def as_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


@dataclass(frozen=True)
class SumMetricParams:
    c0: float
    cx1: float
    ax: float
    cy1: float
    ay: float
    cxy1: float
    axy: float
    alpha: float

    kind = "anisotropic"

    def __post_init__(self):
        sills = (self.cx1, self.cy1, self.cxy1)
        ok = (
            self.c0 >= 0
            and min(sills) >= 0
            and sum(sills) > 0
            and min(self.ax, self.ay, self.axy, self.alpha) > 0
        )
        if not ok:
            raise ValueError(f"invalid sum-metric parameters: {self}")

    @property
    def n_params(self) -> int:
        return 8

    @property
    def total_variance(self) -> float:
        return self.c0 + self.cx1 + self.cy1 + self.cxy1

    def as_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


CovarianceParams = IsoExpParams | SumMetricParams


def params_from_dict(kind: str, values: dict) -> CovarianceParams:
    cls = {"isotropic": IsoExpParams, "anisotropic": SumMetricParams}[kind]
    return cls(**{f.name: float(values[f.name]) for f in fields(cls)})


def iso_cov(h, params: IsoExpParams):
    """Isotropic exponential covariance at lag ``h`` (scalar or array)."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise DomainError("lag must be non-negative")
    out = np.where(h == 0, params.c0 + params.c1, params.c1 * np.exp(-h / params.a))
    return out[()] if out.ndim == 0 else out


def iso_variogram(h, params: IsoExpParams):
    """Semivariance ``c0 + c1 * (1 - exp(-h/a))`` for ``h > 0``."""
    h = np.asarray(h, dtype=float)
    if np.any(h <= 0):
        raise DomainError("variogram is defined for positive lags only")
    out = params.c0 + params.c1 * -np.expm1(-h / params.a)
    return out[()] if out.ndim == 0 else out


def summetric_cov(hx, hy, params: SumMetricParams):
    """Sum-metric covariance at axis lags ``(hx, hy)``; signs are ignored."""
    hx = np.abs(np.asarray(hx, dtype=float))
    hy = np.abs(np.asarray(hy, dtype=float))
    p = params
    hxy = np.sqrt(hx**2 + p.alpha * hy**2)
    c = (
        p.cx1 * np.exp(-hx / p.ax)
        + p.cy1 * np.exp(-hy / p.ay)
        + p.cxy1 * np.exp(-hxy / p.axy)
    )
    out = np.where((hx == 0) & (hy == 0), p.total_variance, c)
    return out[()] if out.ndim == 0 else out


def covariance(hx, hy, params: CovarianceParams):
    """Covariance for either model at axis lags ``(hx, hy)``."""
    if isinstance(params, IsoExpParams):
        return iso_cov(np.hypot(hx, hy), params)
    return summetric_cov(hx, hy, params)


def effective_range(params: IsoExpParams) -> float:
    """Lag at which the variogram reaches 95% of the sill: ``3 * a``."""
    return 3.0 * params.a


class LagTable:
    """Axis-aligned lags between cells, deduplicated.

    On a lattice the number of distinct ``(|dx|, |dy|)`` pairs is at most
    ``nx * ny`` although there are ``n**2`` cell pairs, so covariance
    functions are evaluated on the unique lags and scattered with
    ``index``.
    """

    def __init__(self, cells, decimals: int = 9):
        cells = np.asarray(cells, dtype=float)
        if cells.ndim != 2 or cells.shape[1] != 2 or len(cells) < 2:
            raise ValueError("need an (n, 2) array of at least 2 cell centroids")
        self.n = len(cells)
        hx = np.abs(cells[:, None, 0] - cells[None, :, 0]).round(decimals)
        hy = np.abs(cells[:, None, 1] - cells[None, :, 1]).round(decimals)
        pairs = np.stack([hx.ravel(), hy.ravel()], axis=1)
        uniq, inverse = np.unique(pairs, axis=0, return_inverse=True)
        self.hx = uniq[:, 0]
        self.hy = uniq[:, 1]
        self.index = inverse.reshape(self.n, self.n)

    def matrix(self, params: CovarianceParams) -> np.ndarray:
        return covariance(self.hx, self.hy, params)[self.index]


def cholesky_factor(V: np.ndarray, total_variance: float, theta=None) -> np.ndarray:
    """Lower Cholesky factor of ``V``.

    Relative diagonal jitter is added only when the plain factorization
    fails; :class:`IllConditionedError` is raised if that fails too.
    """
    try:
        return scipy.linalg.cholesky(V, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        pass
    Vj = V.copy()
    Vj.flat[:: len(V) + 1] += JITTER * total_variance
    try:
        return scipy.linalg.cholesky(Vj, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise IllConditionedError(f"covariance factorization failed: {exc}", theta) from exc


def build_cov_matrix(cells, model: CovarianceParams, check: bool = True) -> np.ndarray:
    """Covariance matrix over cell centroids in the given order.

    With ``check`` the matrix is factorized once so that a
    non-factorizable parameter set fails here rather than downstream.
    """
    V = LagTable(cells).matrix(model)
    if check:
        cholesky_factor(V, model.total_variance, theta=astuple(model))
    return V
