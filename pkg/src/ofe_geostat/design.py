"""Treatment layouts for on-farm strip, split-plot and systematic trials."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DesignError
from .field_data import YieldGrid

KINDS = ("strip", "split_plot", "strip_split", "systematic")
PHASES = {"control": 0, "treatment": 1}

_TOL = 1e-9


@dataclass(frozen=True)
class DesignLayout:
    """Parameterized treatment layout.

    Parameters
    ----------
    kind : {"strip", "split_plot", "strip_split", "systematic"}
    pass_width : float
        Machinery working width; the width of one x band.
    split_length : float, optional
        Block length along y, required by the split kinds.
    n_passes : int, optional
        Number of passes across the field.  When given, a valid area wider
        than ``n_passes * pass_width`` is a design error.
    phase : {"control", "treatment"}
        Label of the first band/block.
    name : str, optional
        Label used in reports (e.g. ``"D1"``); defaults to ``kind``.
    """

    kind: str
    pass_width: float = 18.0
    split_length: float | None = None
    n_passes: int | None = None
    phase: str = "control"
    name: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DesignError(f"unknown design kind {self.kind!r}; expected one of {KINDS}")
        if self.phase not in PHASES:
            raise DesignError(f"phase must be 'control' or 'treatment', got {self.phase!r}")
        if not self.pass_width > 0:
            raise DesignError("pass_width must be positive")
        if self.kind != "split_plot" and self.n_passes is not None and self.n_passes < 2:
            raise DesignError("strip kinds need n_passes >= 2")
        if self.kind != "strip" and not (self.split_length and self.split_length > 0):
            raise DesignError(f"{self.kind} needs a positive split_length")
        if self.name is None:
            object.__setattr__(self, "name", self.kind)


@dataclass
class TreatmentMask:
    """Per-cell labels (0 control, 1 treatment) aligned to a grid.

    ``labels`` has the grid's ``(ny, nx)`` shape with -1 outside ``mask``.
    """

    labels: np.ndarray
    mask: np.ndarray

    def vector(self) -> np.ndarray:
        """Labels of valid cells in canonical order."""
        return self.labels[self.mask]

    @property
    def n_treated(self) -> int:
        return int((self.vector() == 1).sum())


def _band_index(coord, start, width):
    return np.floor((coord - start) / width + _TOL).astype(np.int64)


def assign_design(grid: YieldGrid, layout: DesignLayout) -> TreatmentMask:
    """Label every valid cell according to ``layout``.

    Bands and blocks are counted from the lower-left edge of the valid
    area (the bounding box of the valid cells).
    """
    if grid.n_valid == 0:
        raise DesignError("grid has no valid cells")
    cx, cy = grid.centroid_arrays()
    x_start = cx[grid.mask].min() - grid.dx / 2
    y_start = cy[grid.mask].min() - grid.dy / 2
    band = _band_index(cx, x_start, layout.pass_width)
    phase = PHASES[layout.phase]

    if layout.n_passes is not None and layout.kind != "split_plot":
        used = int(band[grid.mask].max()) + 1
        if used > layout.n_passes:
            raise DesignError(
                f"valid area spans {used} passes of {layout.pass_width} m, "
                f"layout allows {layout.n_passes}"
            )

    if layout.kind == "strip":
        bits = band
    else:
        block = _band_index(cy, y_start, layout.split_length)
        if layout.kind == "split_plot":
            bits = block
        else:
            # strip_split and systematic: x band and y block alternate jointly
            bits = band + block
    labels = ((bits + phase) % 2).astype(np.int8)
    labels[~grid.mask] = -1

    result = TreatmentMask(labels=labels, mask=grid.mask.copy())
    kinds = np.unique(result.vector())
    if len(kinds) < 2:
        raise DesignError(
            f"design {layout.name!r} assigns a single label ({int(kinds[0])}) to all "
            "valid cells; treatment effect is unidentifiable"
        )
    return result


def build_design_matrix(mask: TreatmentMask) -> np.ndarray:
    """Intercept plus treatment-indicator columns, one row per valid cell."""
    t = mask.vector().astype(float)
    X = np.column_stack([np.ones_like(t), t])
    if np.linalg.matrix_rank(X) < 2:
        raise DesignError("design matrix is rank deficient (single treatment label)")
    return X


def write_mask(mask: TreatmentMask, path: str | Path, header: str | None = None) -> None:
    """Write valid-cell labels as ``i,j,label`` rows in canonical order."""
    buf = io.StringIO()
    if header:
        for line in header.splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["i", "j", "label"])
    jj, ii = np.nonzero(mask.mask)
    for i, j in zip(ii, jj):
        w.writerow([int(i), int(j), int(mask.labels[j, i])])
    Path(path).write_text(buf.getvalue())

