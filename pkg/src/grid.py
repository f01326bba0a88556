"""
Tile-grid geometry for the search area.

World frame is a local metric plane: x grows east, y grows north, meters.
Tile (row, col) spans [origin + (col*spacing, row*spacing),
origin + ((col+1)*spacing, (row+1)*spacing)); min edges inclusive, max edges
exclusive, so every in-bounds point belongs to exactly one tile.
"""
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from src.errors import InvalidArgumentError, OutOfBoundsError


class TileIndex(NamedTuple):
    row: int
    col: int


class PoseTriplet(NamedTuple):
    """Displacement from the tile center (meters) plus heading (radians)."""
    dx: float
    dy: float
    psi: float


@dataclass(frozen=True)
class TileGrid:
    origin: tuple
    spacing: float
    rows: int
    cols: int

    @property
    def width(self):
        return self.cols * self.spacing

    @property
    def height(self):
        return self.rows * self.spacing

    @property
    def half_spacing(self):
        return self.spacing / 2.0

    @property
    def bounds(self):
        """(xmin, ymin, xmax, ymax); the max edges are exclusive."""
        ox, oy = self.origin
        return ox, oy, ox + self.width, oy + self.height

    def center(self, index):
        ox, oy = self.origin
        return (ox + (index.col + 0.5) * self.spacing,
                oy + (index.row + 0.5) * self.spacing)

    def contains(self, position):
        xmin, ymin, xmax, ymax = self.bounds
        x, y = position
        return xmin <= x < xmax and ymin <= y < ymax


def wrap_angle(angle):
    """Wraps radians into [-pi, pi). Works on scalars and arrays."""
    wrapped = np.mod(np.asarray(angle, dtype=float) + math.pi, 2.0 * math.pi) - math.pi
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def build_grid(origin, spacing, rows, cols):
    """
    Builds a grid of rows x cols square tiles of edge `spacing` meters whose
    min corner sits at `origin`.
    """
    if not math.isfinite(spacing) or spacing <= 0:
        raise InvalidArgumentError(f"Tile spacing must be positive, got {spacing}")
    if int(rows) != rows or int(cols) != cols or rows < 1 or cols < 1:
        raise InvalidArgumentError(f"Tile counts must be positive integers, got {rows}x{cols}")
    ox, oy = (float(v) for v in origin)
    if not (math.isfinite(ox) and math.isfinite(oy)):
        raise InvalidArgumentError(f"Grid origin must be finite, got {origin}")
    return TileGrid(origin=(ox, oy), spacing=float(spacing), rows=int(rows), cols=int(cols))


def tile_of(grid, position):
    x, y = (float(v) for v in position)
    if not grid.contains((x, y)):
        raise OutOfBoundsError((x, y))
    ox, oy = grid.origin
    # Division can round up onto the max edge for points just inside it
    col = min(int(math.floor((x - ox) / grid.spacing)), grid.cols - 1)
    row = min(int(math.floor((y - oy) / grid.spacing)), grid.rows - 1)
    return TileIndex(row=row, col=col)


def displacement_in_tile(grid, position, heading):
    index = tile_of(grid, position)
    cx, cy = grid.center(index)
    return PoseTriplet(dx=float(position[0]) - cx, dy=float(position[1]) - cy,
                       psi=wrap_angle(heading))


def locate(grid, xy):
    """
    Vectorized tile_of for an (N, 2) array of positions.

    Returns (rows, cols, inside). Out-of-bounds entries get row = col = 0 and
    inside = False; callers decide what to do with them.
    """
    xy = np.asarray(xy, dtype=float)
    xmin, ymin, xmax, ymax = grid.bounds
    x, y = xy[:, 0], xy[:, 1]
    inside = (x >= xmin) & (x < xmax) & (y >= ymin) & (y < ymax)
    cols = np.floor((x - xmin) / grid.spacing)
    rows = np.floor((y - ymin) / grid.spacing)
    cols = np.where(inside, np.clip(cols, 0, grid.cols - 1), 0).astype(np.int64)
    rows = np.where(inside, np.clip(rows, 0, grid.rows - 1), 0).astype(np.int64)
    return rows, cols, inside


def tile_centers(grid, rows, cols):
    """(N, 2) array of centers for the given row/col index arrays."""
    ox, oy = grid.origin
    return np.stack([ox + (np.asarray(cols) + 0.5) * grid.spacing,
                     oy + (np.asarray(rows) + 0.5) * grid.spacing], axis=1)


def displacements(grid, xy, heading):
    """
    Vectorized displacement_in_tile. Returns (dxdy, psi, rows, cols, inside);
    dxdy rows for out-of-bounds particles are zero.
    """
    xy = np.asarray(xy, dtype=float)
    rows, cols, inside = locate(grid, xy)
    dxdy = np.where(inside[:, None], xy - tile_centers(grid, rows, cols), 0.0)
    return dxdy, wrap_angle(heading), rows, cols, inside
