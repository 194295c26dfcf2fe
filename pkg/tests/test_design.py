import numpy as np
import pytest

from ofe_geostat.design import DesignLayout, assign_design, build_design_matrix, write_mask
from ofe_geostat.errors import DesignError
from ofe_geostat.field_data import YieldGrid


def full_grid(nx, ny, dx=1.0, dy=1.0):
    return YieldGrid((0.0, 0.0), dx, dy, np.ones((ny, nx)), np.ones((ny, nx), bool))


def test_strip_two_bands_of_18m():
    grid = full_grid(36, 20, dx=1.0, dy=2.5)
    mask = assign_design(grid, DesignLayout("strip", pass_width=18, phase="control"))
    cx, _ = grid.centroid_arrays()
    assert np.all(mask.labels[cx < 18] == 0)
    assert np.all(mask.labels[cx >= 18] == 1)


def test_strip_bands_measured_from_valid_area():
    grid = full_grid(48, 10, dx=1.0)
    grid.mask[:, :6] = False
    grid.mask[:, 42:] = False
    mask = assign_design(grid, DesignLayout("strip", pass_width=18))
    cx, _ = grid.centroid_arrays()
    v = mask.labels
    assert np.all(v[grid.mask & (cx < 24)] == 0)
    assert np.all(v[grid.mask & (cx >= 24)] == 1)
    assert np.all(v[~grid.mask] == -1)


def test_split_plot_full_length_block_is_unidentifiable():
    grid = full_grid(6, 10)
    with pytest.raises(DesignError):
        assign_design(grid, DesignLayout("split_plot", split_length=10))


def test_split_plot_uniform_across_x():
    grid = full_grid(6, 12)
    mask = assign_design(grid, DesignLayout("split_plot", split_length=3))
    labels = mask.labels
    assert np.all(labels == labels[:, :1])
    np.testing.assert_array_equal(labels[:, 0], np.repeat([0, 1, 0, 1], 3))


def test_systematic_checkerboard_tiles():
    # 4x4 tiles of 2x2 cells
    grid = full_grid(8, 8)
    mask = assign_design(grid, DesignLayout("systematic", pass_width=2, split_length=2))
    tiles = {}
    for a in range(4):
        for b in range(4):
            block = mask.labels[2 * b:2 * b + 2, 2 * a:2 * a + 2]
            assert len(np.unique(block)) == 1
            tiles[(a, b)] = int(block[0, 0])
    assert sum(v == 0 for v in tiles.values()) == 8
    assert sum(v == 1 for v in tiles.values()) == 8
    assert all(tiles[(a, b)] == (a + b) % 2 for a, b in tiles)


def test_strip_split_is_band_xor_block():
    grid = full_grid(12, 12)
    layout = DesignLayout("strip_split", pass_width=6, split_length=4)
    labels = assign_design(grid, layout).labels
    cx, cy = grid.centroid_arrays()
    expected = ((cx // 6) % 2).astype(int) ^ ((cy // 4) % 2).astype(int)
    np.testing.assert_array_equal(labels, expected)


@pytest.mark.parametrize("layout", [
    DesignLayout("strip", pass_width=3),
    DesignLayout("split_plot", split_length=2),
    DesignLayout("strip_split", pass_width=3, split_length=4),
    DesignLayout("systematic", pass_width=2, split_length=2),
])
def test_phase_flip_complements_labels(layout):
    grid = full_grid(12, 10)
    a = assign_design(grid, layout)
    flipped = DesignLayout(layout.kind, layout.pass_width, layout.split_length,
                           phase="treatment")
    b = assign_design(grid, flipped)
    np.testing.assert_array_equal(a.vector(), 1 - b.vector())
    # deterministic
    np.testing.assert_array_equal(a.labels, assign_design(grid, layout).labels)


def test_strip_bands_uniform_along_y():
    grid = full_grid(12, 30)
    labels = assign_design(grid, DesignLayout("strip", pass_width=4)).labels
    assert np.all(labels == labels[:1, :])


def test_n_passes_limits_width():
    grid = full_grid(60, 4)
    with pytest.raises(DesignError):
        assign_design(grid, DesignLayout("strip", pass_width=18, n_passes=3))
    assign_design(grid, DesignLayout("strip", pass_width=20, n_passes=3))


def test_layout_validation():
    with pytest.raises(DesignError):
        DesignLayout("zigzag")
    with pytest.raises(DesignError):
        DesignLayout("split_plot")
    with pytest.raises(DesignError):
        DesignLayout("strip", n_passes=1)
    assert DesignLayout("strip").name == "strip"


def test_design_matrix_indicator_coding():
    grid = full_grid(2, 2)
    grid.mask[1, :] = False
    mask = assign_design(grid, DesignLayout("strip", pass_width=1))
    X = build_design_matrix(mask)
    np.testing.assert_array_equal(X, [[1, 0], [1, 1]])


def test_design_matrix_column_sums():
    grid = full_grid(9, 7)
    mask = assign_design(grid, DesignLayout("strip", pass_width=2))
    X = build_design_matrix(mask)
    n, k = grid.n_valid, mask.n_treated
    np.testing.assert_array_equal(X.sum(axis=0), [n, k])
    assert np.linalg.matrix_rank(X) == 2


def test_design_matrix_all_control_is_error():
    grid = full_grid(3, 3)
    mask = assign_design(grid, DesignLayout("strip", pass_width=1))
    mask.labels[mask.mask] = 0
    with pytest.raises(DesignError):
        build_design_matrix(mask)


def test_write_mask(tmp_path):
    grid = full_grid(4, 2)
    mask = assign_design(grid, DesignLayout("strip", pass_width=2))
    write_mask(mask, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "i,j,label"
    assert lines[1:5] == ["0,0,0", "1,0,0", "2,0,1", "3,0,1"]
