"""Seeded synthetic city datasets for pipeline tests and demos.

The generator lays out a rectangular city, gives every cell a population
and an advantaged-population fraction (one side of town is mostly
advantaged, the other mostly not), then draws hourly trip counts from a
Poisson process whose rate follows population times a diurnal and weekly
cycle.  Cells whose advantaged fraction clears the threshold get their
rate multiplied by a configurable bias factor, planting exactly the kind
of demand inequity the fairness penalties are meant to shrink.

Outputs use the ingestion formats: trips.csv, demographics.geojson,
weather.csv, features.geojson.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .fileio import write_text_atomic
from .grid import BoundingBox, GridSpec, build_grid
from .ingest import HOUR_S, format_timestamp

START_TIME = 1704067200  # 2024-01-01T00:00:00Z, a Monday


@dataclass
class SynthConfig:
    seed: int = 0
    rows: int = 8
    cols: int = 8
    cell_size_m: float = 1000.0
    days: int = 21
    bias: float = 3.0
    base_rate: float = 2.0  # expected trips per advantaged-free cell-hour at peak weight
    attribute: str = "income"
    threshold: float = 0.5
    origin_lat: float = 40.0
    origin_lon: float = -100.0

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise InvalidInputError("synthetic city needs at least a 2x2 grid")
        if self.days < 1 or self.bias <= 0 or self.base_rate <= 0:
            raise InvalidInputError("days, bias and base_rate must be positive")


def synth_grid(config: SynthConfig) -> GridSpec:
    """Grid whose bounding box spans exactly rows x cols cells."""
    mpd_lat = build_grid(BoundingBox(0.0, 0.0, 1.0, 1.0), 1.0).meters_per_deg_lat
    lat_max = config.origin_lat + config.rows * config.cell_size_m / mpd_lat
    # build_grid will fix the longitude factor at this same center latitude.
    center = 0.5 * (config.origin_lat + lat_max)
    mpd_lon = mpd_lat * math.cos(math.radians(center))
    bbox = BoundingBox(config.origin_lat, config.origin_lon,
                       lat_max, config.origin_lon + config.cols * config.cell_size_m / mpd_lon)
    grid = build_grid(bbox, config.cell_size_m)
    if grid.rows != config.rows or grid.cols != config.cols:
        raise InvalidInputError(
            f"synthetic grid came out {grid.rows}x{grid.cols}, wanted {config.rows}x{config.cols}")
    return grid


def _city_fields(config: SynthConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """(population, advantaged fraction) per cell."""
    population = rng.uniform(500.0, 1500.0, size=(config.rows, config.cols))
    split = config.cols // 2
    w_plus = np.empty((config.rows, config.cols))
    w_plus[:, :split] = rng.uniform(0.65, 0.95, size=(config.rows, split))
    w_plus[:, split:] = rng.uniform(0.05, 0.35, size=(config.rows, config.cols - split))
    return population, w_plus


def _hourly_rates(config: SynthConfig, population, w_plus) -> np.ndarray:
    """Expected trips per (hour, cell), shape (T, rows, cols)."""
    frames = config.days * 24
    hours = np.arange(frames)
    diurnal = 1.0 + 0.5 * np.sin(2.0 * math.pi * (hours % 24 - 8) / 24.0)
    weekly = 1.0 + 0.2 * np.sin(2.0 * math.pi * (hours % 168) / 168.0)
    temporal = diurnal * weekly
    weight = population / population.mean()
    biased = np.where(w_plus > config.threshold, config.bias, 1.0)
    spatial = config.base_rate * weight * biased
    return temporal[:, None, None] * spatial[None, :, :]


def _cell_corners(grid: GridSpec, row: int, col: int):
    """Lat/lon ring of one cell, counterclockwise, closed."""
    lat0 = grid.origin_lat + row * grid.cell_size_m / grid.meters_per_deg_lat
    lat1 = grid.origin_lat + (row + 1) * grid.cell_size_m / grid.meters_per_deg_lat
    lon0 = grid.origin_lon + col * grid.cell_size_m / grid.meters_per_deg_lon
    lon1 = grid.origin_lon + (col + 1) * grid.cell_size_m / grid.meters_per_deg_lon
    return [(lon0, lat0), (lon1, lat0), (lon1, lat1), (lon0, lat1), (lon0, lat0)]


def generate_city(out_dir: str, config: SynthConfig) -> dict:
    """Write the four dataset files; returns paths and summary numbers."""
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    grid = synth_grid(config)
    population, w_plus = _city_fields(config, rng)
    rates = _hourly_rates(config, population, w_plus)
    counts = rng.poisson(rates)

    trips_path = os.path.join(out_dir, "trips.csv")
    lines = ["timestamp,lat,lon"]
    for t in range(counts.shape[0]):
        ts0 = START_TIME + t * HOUR_S
        for row in range(config.rows):
            for col in range(config.cols):
                k = int(counts[t, row, col])
                if k == 0:
                    continue
                offs = rng.integers(0, HOUR_S, size=k)
                lat0 = grid.origin_lat + (row + 0.05) * grid.cell_size_m / grid.meters_per_deg_lat
                lon0 = grid.origin_lon + (col + 0.05) * grid.cell_size_m / grid.meters_per_deg_lon
                dlat = 0.9 * grid.cell_size_m / grid.meters_per_deg_lat
                dlon = 0.9 * grid.cell_size_m / grid.meters_per_deg_lon
                us = rng.random(size=(k, 2))
                for i in range(k):
                    lines.append(f"{format_timestamp(ts0 + int(offs[i]))},"
                                 f"{lat0 + us[i, 0] * dlat:.7f},{lon0 + us[i, 1] * dlon:.7f}")
    write_text_atomic(trips_path, "\n".join(lines) + "\n")

    demo_path = os.path.join(out_dir, "demographics.geojson")
    features = []
    for row in range(config.rows):
        for col in range(config.cols):
            features.append({
                "type": "Feature",
                "geometry": {"type": "Polygon",
                             "coordinates": [_cell_corners(grid, row, col)]},
                "properties": {"population": round(float(population[row, col]), 3),
                               f"{config.attribute}_adv_frac":
                                   round(float(w_plus[row, col]), 6)},
            })
    write_text_atomic(demo_path, json.dumps(
        {"type": "FeatureCollection", "features": features}, indent=1) + "\n")

    weather_path = os.path.join(out_dir, "weather.csv")
    frames = config.days * 24
    hours = np.arange(frames)
    temperature = 10.0 + 8.0 * np.sin(2.0 * math.pi * (hours % 24 - 6) / 24.0) \
        + rng.normal(0, 1.0, frames)
    pressure = 1013.0 + rng.normal(0, 3.0, frames)
    precipitation = np.where(rng.random(frames) < 0.1, rng.exponential(2.0, frames), 0.0)
    wlines = ["timestamp,temperature,pressure,precipitation"]
    for t in range(frames):
        wlines.append(f"{format_timestamp(START_TIME + t * HOUR_S)},"
                      f"{temperature[t]:.3f},{pressure[t]:.3f},{precipitation[t]:.3f}")
    write_text_atomic(weather_path, "\n".join(wlines) + "\n")

    feat_path = os.path.join(out_dir, "features.geojson")
    geo = []
    for row in range(config.rows):
        for col in range(config.cols):
            n_poi = max(1, int(round(population[row, col] / 300.0)))
            for _ in range(n_poi):
                lat = grid.origin_lat + (row + rng.random()) * grid.cell_size_m \
                    / grid.meters_per_deg_lat
                lon = grid.origin_lon + (col + rng.random()) * grid.cell_size_m \
                    / grid.meters_per_deg_lon
                geo.append({"type": "Feature",
                            "geometry": {"type": "Point",
                                         "coordinates": [round(lon, 7), round(lat, 7)]},
                            "properties": {"layer": "poi"}})
    for row in range(config.rows):
        lat = grid.origin_lat + (row + 0.5) * grid.cell_size_m / grid.meters_per_deg_lat
        lon0 = grid.origin_lon + 0.001
        lon1 = grid.origin_lon + (grid.cols - 0.001) * grid.cell_size_m / grid.meters_per_deg_lon
        geo.append({"type": "Feature",
                    "geometry": {"type": "LineString",
                                 "coordinates": [[lon0, lat], [lon1, lat]]},
                    "properties": {"layer": "roads"}})
    write_text_atomic(feat_path, json.dumps(
        {"type": "FeatureCollection", "features": geo}, indent=1) + "\n")

    return {
        "trips": trips_path,
        "demographics": demo_path,
        "weather": weather_path,
        "features": feat_path,
        "grid": grid,
        "start_time": START_TIME,
        "end_time": START_TIME + frames * HOUR_S,
        "trip_count": int(counts.sum()),
        "attribute": config.attribute,
        "threshold": config.threshold,
    }
