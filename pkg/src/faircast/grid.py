"""Geographic bounding boxes and the regular analysis grid.

Latitude/longitude are projected to local meters with an equirectangular
approximation fixed at the bounding-box center latitude; at city scale the
distortion is far below one cell.  The box is partitioned into square
cells of ``cell_size_m`` with a ceiling rule, so a non-divisible extent
gains a final row/column of padding cells.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InvalidInputError

EARTH_RADIUS_M = 6_371_000.0

# Forgives float noise in extents that are exact multiples of the cell size.
_PARTITION_SLACK_M = 1e-9


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lon_min: float
    lat_max: float
    lon_max: float

    def __post_init__(self):
        if not (-90.0 <= self.lat_min < self.lat_max <= 90.0):
            raise InvalidInputError(
                f"degenerate latitude range [{self.lat_min}, {self.lat_max}]")
        if not (-180.0 <= self.lon_min < self.lon_max <= 180.0):
            raise InvalidInputError(
                f"degenerate longitude range [{self.lon_min}, {self.lon_max}]")


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry plus the projection constants frozen at build time."""

    origin_lat: float
    origin_lon: float
    cell_size_m: float
    rows: int
    cols: int
    meters_per_deg_lat: float
    meters_per_deg_lon: float

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.cell_size_m <= 0:
            raise InvalidInputError(
                f"invalid grid: rows={self.rows} cols={self.cols} cell={self.cell_size_m}")

    @property
    def width_m(self) -> float:
        return self.cols * self.cell_size_m

    @property
    def height_m(self) -> float:
        return self.rows * self.cell_size_m

    def to_meters(self, lat: float, lon: float) -> tuple[float, float]:
        """Project to grid-local meters; (0, 0) is the box's SW corner."""
        x = (lon - self.origin_lon) * self.meters_per_deg_lon
        y = (lat - self.origin_lat) * self.meters_per_deg_lat
        return x, y

    def cell_of_meters(self, x: float, y: float):
        """Cell index for a projected point, or None outside the grid.

        Cells are half-open: a point on a shared edge belongs to the
        neighbor with the larger index.  Points exactly on the far grid
        edge fold into the last row/column so the grid covers a closed box.
        """
        if x < 0.0 or y < 0.0 or x > self.width_m or y > self.height_m:
            return None
        row = min(int(math.floor(y / self.cell_size_m)), self.rows - 1)
        col = min(int(math.floor(x / self.cell_size_m)), self.cols - 1)
        return row, col

    def cell_rect_m(self, row: int, col: int) -> tuple[float, float, float, float]:
        """(x0, y0, x1, y1) bounds of a cell in grid-local meters."""
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise InvalidInputError(f"cell ({row}, {col}) outside {self.rows}x{self.cols} grid")
        c = self.cell_size_m
        return col * c, row * c, (col + 1) * c, (row + 1) * c


def build_grid(bbox: BoundingBox, cell_size_m: float) -> GridSpec:
    """Partition a bounding box into square cells of ``cell_size_m``."""
    if cell_size_m <= 0:
        raise InvalidInputError(f"cell_size_m must be positive, got {cell_size_m}")
    center_lat = 0.5 * (bbox.lat_min + bbox.lat_max)
    mpd_lat = EARTH_RADIUS_M * math.pi / 180.0
    mpd_lon = mpd_lat * math.cos(math.radians(center_lat))
    if mpd_lon <= 0:
        raise InvalidInputError(f"degenerate projection at center latitude {center_lat}")
    height_m = (bbox.lat_max - bbox.lat_min) * mpd_lat
    width_m = (bbox.lon_max - bbox.lon_min) * mpd_lon
    rows = math.ceil(height_m / cell_size_m - _PARTITION_SLACK_M)
    cols = math.ceil(width_m / cell_size_m - _PARTITION_SLACK_M)
    return GridSpec(origin_lat=bbox.lat_min, origin_lon=bbox.lon_min,
                    cell_size_m=float(cell_size_m), rows=max(rows, 1), cols=max(cols, 1),
                    meters_per_deg_lat=mpd_lat, meters_per_deg_lon=mpd_lon)


def locate(grid: GridSpec, lat: float, lon: float):
    """(row, col) of the cell containing the point, or None outside the grid."""
    x, y = grid.to_meters(lat, lon)
    return grid.cell_of_meters(x, y)
