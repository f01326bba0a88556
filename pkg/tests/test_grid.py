import math

import numpy as np
import pytest

from src.errors import InvalidArgumentError, OutOfBoundsError
from src.grid import (
    TileIndex,
    build_grid,
    displacement_in_tile,
    displacements,
    locate,
    tile_of,
    wrap_angle,
)


def test_build_grid_extent_matches_tile_count():
    grid = build_grid((0, 0), 60, 256, 256)
    assert grid.width == pytest.approx(15360.0)
    assert grid.height == pytest.approx(15360.0)


def test_minimal_grid_is_single_unit_tile():
    grid = build_grid((0, 0), 1, 1, 1)
    assert grid.bounds == (0.0, 0.0, 1.0, 1.0)
    assert tile_of(grid, (0.999, 0.0)) == TileIndex(0, 0)


def test_tile_centers_of_offset_grid():
    grid = build_grid((-30, -30), 60, 2, 2)
    assert grid.center(TileIndex(0, 0)) == (0.0, 0.0)
    assert grid.center(TileIndex(0, 1)) == (60.0, 0.0)
    assert grid.center(TileIndex(1, 0)) == (0.0, 60.0)
    assert grid.center(TileIndex(1, 1)) == (60.0, 60.0)


@pytest.mark.parametrize("spacing,rows,cols", [(0, 2, 2), (-60, 2, 2), (60, 0, 2), (60, 2, 0)])
def test_build_grid_rejects_bad_arguments(spacing, rows, cols):
    with pytest.raises(InvalidArgumentError):
        build_grid((0, 0), spacing, rows, cols)


def test_tile_of_boundary_convention():
    grid = build_grid((0, 0), 60, 4, 4)
    assert tile_of(grid, (30, 30)) == TileIndex(0, 0)
    assert tile_of(grid, (60, 0)) == TileIndex(0, 1)
    with pytest.raises(OutOfBoundsError) as excinfo:
        tile_of(grid, (-1, 10))
    assert excinfo.value.position == (-1.0, 10.0)
    with pytest.raises(OutOfBoundsError):
        tile_of(grid, (240, 10))


def test_displacement_at_center_is_zero():
    grid = build_grid((0, 0), 60, 4, 4)
    assert displacement_in_tile(grid, (90, 150), 0.0) == (0.0, 0.0, 0.0)


def test_displacement_hand_computed():
    grid = build_grid((0, 0), 60, 4, 4)
    pose = displacement_in_tile(grid, (45, 20), math.pi / 2)
    assert pose.dx == pytest.approx(15.0)
    assert pose.dy == pytest.approx(-10.0)
    assert pose.psi == pytest.approx(math.pi / 2)


def test_heading_is_wrapped():
    grid = build_grid((0, 0), 60, 4, 4)
    assert displacement_in_tile(grid, (30, 30), 3 * math.pi).psi == pytest.approx(-math.pi)
    assert wrap_angle(math.pi) == pytest.approx(-math.pi)
    assert -math.pi <= wrap_angle(-7.0) < math.pi


def test_round_trip_and_half_tile_bound():
    grid = build_grid((-500.0, 250.0), 60, 8, 8)
    rng = np.random.default_rng(3)
    xmin, ymin, xmax, ymax = grid.bounds
    for x, y in rng.uniform((xmin, ymin), (xmax, ymax), size=(500, 2)):
        index = tile_of(grid, (x, y))
        pose = displacement_in_tile(grid, (x, y), 0.0)
        cx, cy = grid.center(index)
        assert abs(cx + pose.dx - x) < 1e-9
        assert abs(cy + pose.dy - y) < 1e-9
        assert abs(pose.dx) <= grid.half_spacing
        assert abs(pose.dy) <= grid.half_spacing


def test_vectorized_helpers_agree_with_scalar_ones():
    grid = build_grid((0, 0), 60, 5, 7)
    rng = np.random.default_rng(11)
    xy = rng.uniform((-50, -50), (470, 350), size=(300, 2))
    rows, cols, inside = locate(grid, xy)
    dxdy, psi, _, _, _ = displacements(grid, xy, 4.0)
    for i, point in enumerate(xy):
        if not grid.contains(point):
            assert not inside[i]
            continue
        assert inside[i]
        assert tile_of(grid, point) == TileIndex(rows[i], cols[i])
        pose = displacement_in_tile(grid, point, 4.0)
        assert dxdy[i, 0] == pose.dx
        assert dxdy[i, 1] == pose.dy
    assert psi == pytest.approx(wrap_angle(4.0))
