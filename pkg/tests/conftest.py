import numpy as np
import pytest

from faircast.grid import BoundingBox, build_grid
from faircast.ingest import DemographicField


def grid_exact(rows=4, cols=4, cell_m=1000.0, lat0=40.0, lon0=-100.0):
    """Grid whose bounding box spans exactly rows x cols cells."""
    probe = build_grid(BoundingBox(0.0, 0.0, 1.0, 1.0), 1.0)
    mpd_lat = probe.meters_per_deg_lat
    lat_max = lat0 + rows * cell_m / mpd_lat
    center = 0.5 * (lat0 + lat_max)
    mpd_lon = mpd_lat * np.cos(np.radians(center))
    bbox = BoundingBox(lat0, lon0, lat_max, lon0 + cols * cell_m / mpd_lon)
    grid = build_grid(bbox, cell_m)
    assert (grid.rows, grid.cols) == (rows, cols)
    return grid


def field_of(w_plus, population=None, attribute="income"):
    """DemographicField from a w+ array and optional raw population."""
    w_plus = np.asarray(w_plus, dtype=np.float64)
    if population is None:
        population = np.ones_like(w_plus)
    population = np.asarray(population, dtype=np.float64)
    total = population.sum()
    return DemographicField(population / total, {attribute: w_plus},
                            total_population=float(total))


@pytest.fixture
def make_grid():
    return grid_exact


@pytest.fixture
def make_field():
    return field_of


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
