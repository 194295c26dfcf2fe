"""Directional experimental variograms and fitted model curves."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .covariance import CovarianceParams, covariance
from .errors import EmptyVariogramError

DEFAULT_MIN_PAIRS = 30
_AXES = {"x": 0, "y": 1}


@dataclass
class EmpiricalVariogram:
    direction: str
    lags: np.ndarray
    semivariance: np.ndarray
    pairs: np.ndarray

    def rows(self):
        return [
            (self.direction, float(h), float(g), int(n))
            for h, g, n in zip(self.lags, self.semivariance, self.pairs)
        ]


def _axis(direction: str) -> int:
    try:
        return _AXES[direction]
    except KeyError:
        raise ValueError(f"direction must be 'x' or 'y', got {direction!r}") from None


def default_max_lag(cells, direction: str) -> float:
    """Half the centroid extent along ``direction``."""
    c = np.asarray(cells, dtype=float)[:, _axis(direction)]
    return 0.5 * float(c.max() - c.min())


def empirical_variogram(values, cells, direction: str, max_lag: float | None = None,
                        min_pairs: int = DEFAULT_MIN_PAIRS,
                        decimals: int = 9) -> EmpiricalVariogram:
    """Semivariance from cell pairs separated exactly along one axis.

    Only pairs with zero offset on the other axis contribute; each distinct
    lag is its own bin, which is unambiguous on a lattice.  Bins with fewer
    than ``min_pairs`` pairs are dropped.
    """
    values = np.asarray(values, dtype=float)
    cells = np.asarray(cells, dtype=float)
    if len(values) < 2 or len(values) != len(cells):
        raise ValueError("need at least 2 cells with one value each")
    ax = _axis(direction)
    if max_lag is None:
        max_lag = default_max_lag(cells, direction)
    if not max_lag > 0:
        raise ValueError("max_lag must be positive")

    i, j = np.triu_indices(len(values), k=1)
    along = np.abs(cells[i, ax] - cells[j, ax]).round(decimals)
    across = np.abs(cells[i, 1 - ax] - cells[j, 1 - ax]).round(decimals)
    keep = (across == 0) & (along > 0) & (along <= max_lag * (1 + 1e-12))
    if not keep.any():
        raise EmptyVariogramError(f"no cell pairs along {direction} within {max_lag} m")
    h = along[keep]
    sq = 0.5 * (values[i[keep]] - values[j[keep]]) ** 2

    lags, inverse, counts = np.unique(h, return_inverse=True, return_counts=True)
    gamma = np.bincount(inverse, weights=sq) / counts
    mean_lag = np.bincount(inverse, weights=h) / counts
    ok = counts >= min_pairs
    if not ok.any():
        raise EmptyVariogramError(
            f"no {direction} lag bin has at least {min_pairs} pairs (max {counts.max()})"
        )
    return EmpiricalVariogram(direction, mean_lag[ok], gamma[ok], counts[ok])


def fitted_curve(model: CovarianceParams, direction: str, lags) -> list[tuple[float, float]]:
    """Model semivariance ``c(0,0) - c(h)`` along one axis."""
    lags = np.asarray(lags, dtype=float)
    if np.any(lags <= 0):
        raise ValueError("lags must be positive")
    zero = np.zeros_like(lags)
    hx, hy = (lags, zero) if _axis(direction) == 0 else (zero, lags)
    gamma = model.total_variance - covariance(hx, hy, model)
    return [(float(h), float(g)) for h, g in zip(lags, np.atleast_1d(gamma))]


def _write(path, header_cols, rows, header):
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header_cols)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    Path(path).write_text(buf.getvalue())


def write_empirical(variograms: list[EmpiricalVariogram], path, header=None) -> None:
    rows = [r for v in variograms for r in v.rows()]
    _write(path, ("direction", "lag", "semivariance", "pairs"), rows, header)


def write_fitted(curves: dict[str, list[tuple[float, float]]], path, header=None) -> None:
    rows = [(d, h, g) for d, pts in curves.items() for h, g in pts]
    _write(path, ("direction", "lag", "semivariance"), rows, header)
