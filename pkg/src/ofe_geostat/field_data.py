"""Yield point ingestion, coordinate alignment, gridding and edge trimming.

Coordinates are in meters with ``y`` along the direction of travel of the
machinery and ``x`` across passes; yield values are t/ha.  Grid arrays are
stored with shape ``(ny, nx)`` so that flattening in C order gives the
canonical cell order (row-major, x fastest).
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, NamedTuple

import numpy as np

from .errors import AlignmentError, EmptyInputError, EmptyInteriorError, SchemaError

logger = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("x", "y", "value")
GRID_COLUMNS = ("i", "j", "cx", "cy", "value", "count", "valid")

# relative tolerance for lattice arithmetic (bin edges, row centers)
_EDGE_TOL = 1e-9


class YieldPoint(NamedTuple):
    x: float
    y: float
    value: float


class PointList(list):
    """List of :class:`YieldPoint` that also carries rejected input rows.

    ``bad_rows`` holds ``(line_number, reason)`` tuples; line numbers are
    1-based and count the header line.
    """

    def __init__(self, points: Iterable[YieldPoint] = (), bad_rows=None):
        super().__init__(points)
        self.bad_rows: list[tuple[int, str]] = list(bad_rows or [])


@dataclass(frozen=True)
class Lattice:
    """Regular grid geometry without data."""

    nx: int
    ny: int
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("cell sizes dx, dy must be positive")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("lattice needs at least 2 cells in each direction")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    def centroid_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Centroid x and y coordinates, each of shape ``(ny, nx)``."""
        cx = self.origin[0] + (np.arange(self.nx) + 0.5) * self.dx
        cy = self.origin[1] + (np.arange(self.ny) + 0.5) * self.dy
        return np.meshgrid(cx, cy)


@dataclass
class YieldGrid:
    """Aggregated yield values on a regular lattice.

    Attributes
    ----------
    origin : tuple of float
        Lower-left corner of cell ``(0, 0)``.
    dx, dy : float
        Cell width across passes and cell length along travel.
    values : ndarray, shape (ny, nx)
        Mean yield per cell; NaN where invalid.
    mask : ndarray of bool, shape (ny, nx)
        True for cells used in the analysis.
    counts : ndarray of int, shape (ny, nx)
        Number of source points per cell.
    """

    origin: tuple[float, float]
    dx: float
    dy: float
    values: np.ndarray
    mask: np.ndarray
    counts: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.counts is None:
            self.counts = self.mask.astype(np.int64)
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        if not (self.dx > 0 and self.dy > 0):
            raise ValueError("cell sizes dx, dy must be positive")
        if self.values.ndim != 2 or self.values.shape != self.mask.shape:
            raise ValueError("values and mask must be 2-D arrays of equal shape")
        if self.counts.shape != self.values.shape:
            raise ValueError("counts shape does not match values")
        if self.nx < 2 or self.ny < 2:
            raise ValueError("grid needs at least 2 cells in each direction")
        valid = self.mask
        if np.any(self.counts[valid] < 1) or not np.all(np.isfinite(self.values[valid])):
            raise ValueError("every valid cell needs a finite value and count >= 1")

    @property
    def nx(self) -> int:
        return self.values.shape[1]

    @property
    def ny(self) -> int:
        return self.values.shape[0]

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())

    @property
    def lattice(self) -> Lattice:
        return Lattice(self.nx, self.ny, self.dx, self.dy, self.origin)

    def centroid_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return self.lattice.centroid_arrays()

    def cells(self) -> np.ndarray:
        """Valid-cell centroids in canonical order, shape ``(n, 2)``."""
        cx, cy = self.centroid_arrays()
        return np.column_stack([cx[self.mask], cy[self.mask]])

    def vector(self) -> np.ndarray:
        """Valid-cell values in canonical order."""
        return self.values[self.mask]

    def with_vector(self, y: np.ndarray) -> "YieldGrid":
        """Copy of the grid with valid-cell values replaced by ``y``."""
        values = self.values.copy()
        values[self.mask] = y
        return replace(self, values=values, mask=self.mask.copy(), counts=self.counts.copy())

    def extent(self) -> tuple[float, float]:
        return (self.nx * self.dx, self.ny * self.dy)


@dataclass(frozen=True)
class FieldGeometry:
    """Field dimensions and edge-exclusion margins.

    ``width_x`` and ``length_y`` are optional; when omitted the grid's
    bounding box is the field.
    """

    headland_margin: float = 0.0
    side_margin: float = 0.0
    heading: float = 0.0
    width_x: float | None = None
    length_y: float | None = None

    def __post_init__(self):
        if self.headland_margin < 0 or self.side_margin < 0:
            raise ValueError("margins must be non-negative")
        if self.width_x is not None and not self.width_x > 2 * self.side_margin:
            raise ValueError("width_x must exceed twice the side margin")
        if self.length_y is not None and not self.length_y > 2 * self.headland_margin:
            raise ValueError("length_y must exceed twice the headland margin")


def _parse_float(text):
    if text is None:
        raise ValueError("missing field")
    text = text.strip()
    if not text:
        raise ValueError("missing field")
    value = float(text)
    if not math.isfinite(value):
        raise ValueError(f"non-finite value {text!r}")
    return value


def load_yield_points(source: IO[str] | str | Path) -> PointList:
    """Read comma-delimited ``x,y,value`` rows.

    Rows with missing, non-numeric, non-finite or negative-yield fields are
    skipped and listed in ``PointList.bad_rows``.  Extra columns are ignored.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="") as fh:
            return load_yield_points(fh)

    reader = csv.DictReader(line for line in source if not line.startswith("#"))
    header = [h.strip() for h in (reader.fieldnames or [])]
    for col in REQUIRED_COLUMNS:
        if col not in header:
            raise SchemaError(col)
    reader.fieldnames = header

    points = PointList()
    for row in reader:
        line = reader.line_num
        try:
            x, y, v = (_parse_float(row.get(c)) for c in REQUIRED_COLUMNS)
            if v < 0:
                raise ValueError(f"negative yield {v}")
        except ValueError as exc:
            points.bad_rows.append((line, str(exc)))
            logger.warning("skipping row %d: %s", line, exc)
            continue
        points.append(YieldPoint(x, y, v))

    if not points and not points.bad_rows:
        raise EmptyInputError("input has no data rows")
    if not points:
        raise EmptyInputError(f"no usable data rows ({len(points.bad_rows)} rejected)")
    return points


def _as_arrays(points):
    arr = np.asarray([(p.x, p.y, p.value) for p in points], dtype=float).reshape(-1, 3)
    return arr[:, 0], arr[:, 1], arr[:, 2]


def rotate_coordinates(points: list[YieldPoint], heading: float) -> list[YieldPoint]:
    """Rotate by ``-heading`` so that the travel direction maps onto +y.

    ``heading`` is the counter-clockwise angle (radians) of the travel
    direction measured from the raw +y axis, i.e. travel along raw
    ``(-sin(heading), cos(heading))``.  Values are left untouched.
    """
    if not math.isfinite(heading):
        raise ValueError("heading must be finite")
    if not points:
        return []
    x, y, v = _as_arrays(points)
    c, s = math.cos(heading), math.sin(heading)
    xr = c * x + s * y
    yr = -s * x + c * y
    return [YieldPoint(float(a), float(b), float(w)) for a, b, w in zip(xr, yr, v)]


def align_rows(points: list[YieldPoint], row_width: float) -> list[YieldPoint]:
    """Snap x coordinates onto straight row centerlines.

    Rows are 1-D bins of width ``row_width``.  Bin edges sit half a row
    width from the circular mean of ``x mod row_width``, i.e. midway between
    pass centerlines, so symmetric jitter around a centerline never crosses
    an edge.  Output x is ``(row + 0.5) * row_width`` with row 0 the first
    occupied bin, so the aligned point cloud starts at x = 0.

    Raises :class:`AlignmentError` when x does not concentrate at one phase
    of the row pitch, or when any row's points spread over half a row width
    or more.  Both happen when ``row_width`` is below the x
    jitter (one pass split over several bins) or above the pass spacing
    (several passes merged into one bin).
    """
    if not row_width > 0:
        raise ValueError("row_width must be positive")
    if not points:
        return []
    x, y, v = _as_arrays(points)
    rel = x - x.min()
    angle = 2 * np.pi * rel / row_width
    s, c = np.sin(angle).mean(), np.cos(angle).mean()
    if np.hypot(s, c) < 0.5:
        # uniform jitter spanning half a row width still gives 0.64
        raise AlignmentError(
            f"x positions do not repeat at a pitch of row_width {row_width}; "
            "row_width does not match the pass spacing"
        )
    center = row_width * np.arctan2(s, c) / (2 * np.pi)
    # first edge at or below the minimum x
    edge = (center - 0.5 * row_width) % row_width
    edge = edge - row_width if edge > _EDGE_TOL * row_width else 0.0
    rows = np.floor((rel - edge) / row_width + _EDGE_TOL).astype(np.int64)
    rows -= rows.min()
    order = np.argsort(rows, kind="stable")
    starts = np.r_[0, np.flatnonzero(np.diff(rows[order])) + 1]
    spread = np.maximum.reduceat(x[order], starts) - np.minimum.reduceat(x[order], starts)
    if spread.max() >= 0.5 * row_width:
        worst = int(rows[order][starts[spread.argmax()]])
        raise AlignmentError(
            f"points of row {worst} spread over {spread.max():.3g} m, at least half the "
            f"row width {row_width}; row_width does not match the pass spacing"
        )
    xc = (rows + 0.5) * row_width
    return [YieldPoint(float(a), float(b), float(w)) for a, b, w in zip(xc, y, v)]


def _cell_index(coord, origin, step):
    # a point exactly on an internal boundary joins the lower-index cell
    q = (coord - origin) / step
    return np.maximum(np.ceil(q - _EDGE_TOL).astype(np.int64) - 1, 0)


def aggregate_to_grid(points: list[YieldPoint], dx: float, dy: float,
                      origin: tuple[float, float] | None = None) -> YieldGrid:
    """Average points within ``dx`` by ``dy`` cells.

    The grid origin defaults to the minimum-coordinate corner of the point
    cloud.  An explicit ``origin`` must not lie above or right of any point;
    pass ``(0, min_y)`` after :func:`align_rows` with ``dx == row_width`` so
    that row centerlines fall mid-cell instead of on cell boundaries.
    Cells without points are marked invalid.
    """
    if not (dx > 0 and dy > 0):
        raise ValueError("dx and dy must be positive")
    if not points:
        raise EmptyInputError("no points to aggregate")
    x, y, v = _as_arrays(points)
    x0, y0 = (float(x.min()), float(y.min())) if origin is None else map(float, origin)
    if x0 > x.min() or y0 > y.min():
        raise ValueError("grid origin must lie at or below the minimum point coordinates")
    ix = _cell_index(x, x0, dx)
    iy = _cell_index(y, y0, dy)
    nx = max(int(ix.max()) + 1, 2)
    ny = max(int(iy.max()) + 1, 2)

    flat = iy * nx + ix
    counts = np.bincount(flat, minlength=nx * ny)
    sums = np.bincount(flat, weights=v, minlength=nx * ny)
    mask = counts > 0
    values = np.full(nx * ny, np.nan)
    values[mask] = sums[mask] / counts[mask]
    return YieldGrid(
        origin=(x0, y0),
        dx=dx,
        dy=dy,
        values=values.reshape(ny, nx),
        mask=mask.reshape(ny, nx),
        counts=counts.reshape(ny, nx),
    )


def trim_edges(grid: YieldGrid, geometry: FieldGeometry) -> YieldGrid:
    """Invalidate cells whose centroid lies within the edge margins.

    Margins are measured from the grid bounding box: ``headland_margin``
    from the min/max y edges, ``side_margin`` from the min/max x edges.
    A centroid exactly at the margin distance is kept.
    """
    cx, cy = grid.centroid_arrays()
    width, length = grid.extent()
    x0, y0 = grid.origin
    dist_x = np.minimum(cx - x0, x0 + width - cx)
    dist_y = np.minimum(cy - y0, y0 + length - cy)
    keep = (dist_x >= geometry.side_margin * (1 - _EDGE_TOL)) & (
        dist_y >= geometry.headland_margin * (1 - _EDGE_TOL)
    )
    mask = grid.mask & keep
    if not mask.any():
        raise EmptyInteriorError("edge margins leave no valid cells")
    values = np.where(mask, grid.values, np.nan)
    return replace(grid, values=values, mask=mask, counts=grid.counts.copy())


def write_grid(grid: YieldGrid, path: str | Path, header: str | None = None) -> None:
    """Write ``i,j,cx,cy,value,count,valid`` rows plus a ``.json`` sidecar.

    ``header`` is written as ``#``-prefixed comment lines before the column
    names.
    """
    path = Path(path)
    cx, cy = grid.centroid_arrays()
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(GRID_COLUMNS)
    for j in range(grid.ny):
        for i in range(grid.nx):
            valid = bool(grid.mask[j, i])
            w.writerow([
                i, j, repr(float(cx[j, i])), repr(float(cy[j, i])),
                repr(float(grid.values[j, i])) if valid else "",
                int(grid.counts[j, i]), int(valid),
            ])
    path.write_text(buf.getvalue())
    meta = {
        "origin": list(grid.origin),
        "dx": grid.dx,
        "dy": grid.dy,
        "nx": grid.nx,
        "ny": grid.ny,
        "n_valid": grid.n_valid,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def read_grid(path: str | Path) -> YieldGrid:
    """Inverse of :func:`write_grid`."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    nx, ny = meta["nx"], meta["ny"]
    values = np.full((ny, nx), np.nan)
    mask = np.zeros((ny, nx), dtype=bool)
    counts = np.zeros((ny, nx), dtype=np.int64)
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        for row in reader:
            i, j = int(row["i"]), int(row["j"])
            counts[j, i] = int(row["count"])
            if row["valid"] == "1":
                mask[j, i] = True
                values[j, i] = float(row["value"])
    return YieldGrid(tuple(meta["origin"]), meta["dx"], meta["dy"], values, mask, counts)
