"""Raw mobility data to grid-aligned tensors and per-cell fields.

Inputs are deliberately plain: a trip CSV (``timestamp,lat,lon``, RFC3339
UTC), a demographic GeoJSON FeatureCollection (polygon units carrying a
``population`` plus one ``<name>_adv_frac`` fraction per attribute), an
hourly weather CSV (``timestamp,<series>...``), and a feature GeoJSON of
points and polylines tagged with a ``layer`` property.  Readers reject
malformed rows with the offending line number; timestamps must be UTC
(trailing ``Z`` or ``+00:00``; naive timestamps are taken as UTC).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from . import geometry
from .errors import DataError, InvalidInputError
from .grid import GridSpec, locate

HOUR_S = 3600
DAY_S = 86400


# ---------------------------------------------------------------------------
# domain types

@dataclass(frozen=True)
class TripRecord:
    timestamp: int
    lat: float
    lon: float

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0):
            raise InvalidInputError(f"latitude out of range: {self.lat}")
        if not (-180.0 <= self.lon <= 180.0):
            raise InvalidInputError(f"longitude out of range: {self.lon}")


@dataclass
class DemandTensor:
    """Hourly (or ``interval_s``-ly) counts on the grid: values[t, row, col].

    Observed demand is nonnegative by construction; model predictions
    reuse this container with ``nonnegative=False`` since the predictor's
    output is unconstrained in sign.
    """

    values: np.ndarray
    start_time: int
    interval_s: int = HOUR_S
    nonnegative: bool = True

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3:
            raise InvalidInputError(f"demand tensor needs 3 axes, got {self.values.ndim}")
        if self.nonnegative and (self.values < 0).any():
            raise InvalidInputError("demand tensor has negative entries")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    def time_of(self, t_index: int) -> int:
        return self.start_time + t_index * self.interval_s


@dataclass
class DemographicUnit:
    """One census-style polygon with its population and attribute fractions."""

    ring: list
    population: float
    fractions: dict[str, float]

    def __post_init__(self):
        if self.population < 0:
            raise InvalidInputError(f"negative population {self.population}")
        for name, frac in self.fractions.items():
            if not (0.0 <= frac <= 1.0):
                raise InvalidInputError(f"fraction {name}={frac} outside [0, 1]")


@dataclass
class DemographicField:
    """Per-cell population share and advantaged fractions per attribute."""

    population_share: np.ndarray
    attributes: dict[str, np.ndarray]
    total_population: float

    def __post_init__(self):
        self.population_share = np.asarray(self.population_share, dtype=np.float64)
        total = self.population_share.sum()
        if not math.isclose(total, 1.0, rel_tol=0, abs_tol=1e-9):
            raise InvalidInputError(f"population shares sum to {total}, expected 1")
        for name, arr in self.attributes.items():
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != self.population_share.shape:
                raise InvalidInputError(f"attribute {name!r} shape mismatch")
            if (arr < 0).any() or (arr > 1).any():
                raise InvalidInputError(f"attribute {name!r} has fractions outside [0, 1]")
            self.attributes[name] = arr


@dataclass
class FeatureStack2D:
    names: list[str]
    maps: np.ndarray  # (N, rows, cols)


@dataclass
class SeriesStack1D:
    """City-level hourly series, standardized; the stats used are kept."""

    names: list[str]
    series: np.ndarray  # (M, T)
    mean: np.ndarray  # (M,)
    std: np.ndarray  # (M,)


@dataclass
class TemporalSlice:
    history: np.ndarray  # (window, rows, cols)
    history_1d: np.ndarray  # (M, window)
    target: np.ndarray  # (rows, cols)
    target_index: int


# ---------------------------------------------------------------------------
# timestamp handling

def parse_timestamp(text: str) -> int:
    """RFC3339 text to UTC epoch seconds; non-UTC offsets are rejected."""
    raw = text.strip()
    if raw.endswith(("Z", "z")):
        raw = raw[:-1] + "+00:00"
    try:
        dt = datetime.fromisoformat(raw)
    except ValueError as exc:
        raise DataError(f"bad timestamp {text!r}: {exc}") from exc
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    elif dt.utcoffset().total_seconds() != 0:
        raise DataError(f"timestamp {text!r} is not UTC")
    return int(dt.timestamp())


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# ---------------------------------------------------------------------------
# readers

def read_trips_csv(path: str) -> list[TripRecord]:
    trips = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != ["timestamp", "lat", "lon"]:
            raise DataError(f"{path}: expected header timestamp,lat,lon")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 3:
                raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                ts = parse_timestamp(row[0])
                lat, lon = float(row[1]), float(row[2])
            except (DataError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            try:
                trips.append(TripRecord(ts, lat, lon))
            except InvalidInputError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return trips


def read_demographics_geojson(path: str) -> list[DemographicUnit]:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("type") != "FeatureCollection":
        raise DataError(f"{path}: expected a FeatureCollection")
    units = []
    for k, feat in enumerate(doc.get("features", [])):
        where = f"{path}: feature {k}"
        geom = feat.get("geometry") or {}
        if geom.get("type") != "Polygon":
            raise DataError(f"{where}: expected Polygon geometry, got {geom.get('type')!r}")
        coords = geom.get("coordinates") or []
        if not coords:
            raise DataError(f"{where}: empty polygon")
        # GeoJSON positions are [lon, lat]; only the exterior ring is used.
        ring = [(float(pt[1]), float(pt[0])) for pt in coords[0]]
        props = feat.get("properties") or {}
        if "population" not in props:
            raise DataError(f"{where}: missing 'population' property")
        fractions = {}
        for key, value in props.items():
            if key.endswith("_adv_frac"):
                fractions[key[:-len("_adv_frac")]] = float(value)
        try:
            units.append(DemographicUnit(ring, float(props["population"]), fractions))
        except InvalidInputError as exc:
            raise DataError(f"{where}: {exc}") from exc
    if not units:
        raise DataError(f"{path}: no demographic units")
    return units


def read_features_geojson(path: str) -> dict[str, list]:
    """Layer name -> list of ("point", (lat, lon)) / ("line", [(lat, lon)...])."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: invalid JSON: {exc}") from exc
    if doc.get("type") != "FeatureCollection":
        raise DataError(f"{path}: expected a FeatureCollection")
    layers: dict[str, list] = {}
    for k, feat in enumerate(doc.get("features", [])):
        where = f"{path}: feature {k}"
        props = feat.get("properties") or {}
        layer = props.get("layer")
        if not layer:
            raise DataError(f"{where}: missing 'layer' property")
        geom = feat.get("geometry") or {}
        kind, coords = geom.get("type"), geom.get("coordinates")
        if kind == "Point":
            entry = ("point", (float(coords[1]), float(coords[0])))
        elif kind == "LineString":
            if not coords or len(coords) < 2:
                raise DataError(f"{where}: LineString needs >= 2 positions")
            entry = ("line", [(float(pt[1]), float(pt[0])) for pt in coords])
        else:
            raise DataError(f"{where}: unsupported geometry type {kind!r}")
        layers.setdefault(layer, []).append(entry)
    return layers


# ---------------------------------------------------------------------------
# aggregation

def aggregate_trips(trips, grid: GridSpec, start: int, end: int,
                    interval_s: int = HOUR_S) -> tuple[DemandTensor, int]:
    """Count trips per (interval, cell); returns the tensor and drop count.

    Trips outside [start, end) or outside the grid are dropped, not
    clamped, and tallied in the second return value.
    """
    if start % interval_s or end % interval_s:
        raise InvalidInputError(f"start/end must be aligned to {interval_s} s")
    if start >= end:
        raise InvalidInputError(f"empty period: start {start} >= end {end}")
    frames = (end - start) // interval_s
    values = np.zeros((frames, grid.rows, grid.cols))
    dropped = 0
    for trip in trips:
        if not (start <= trip.timestamp < end):
            dropped += 1
            continue
        cell = locate(grid, trip.lat, trip.lon)
        if cell is None:
            dropped += 1
            continue
        t = (trip.timestamp - start) // interval_s
        values[t, cell[0], cell[1]] += 1.0
    return DemandTensor(values, start_time=start, interval_s=interval_s), dropped


# ---------------------------------------------------------------------------
# area-weighted demographic allocation

def _ring_to_meters(grid: GridSpec, ring) -> list:
    return [grid.to_meters(lat, lon) for lat, lon in ring]


def _candidate_cells(grid: GridSpec, pts):
    xs = [p[0] for p in pts]
    ys = [p[1] for p in pts]
    r0 = max(int(math.floor(min(ys) / grid.cell_size_m)), 0)
    r1 = min(int(math.floor(max(ys) / grid.cell_size_m)), grid.rows - 1)
    c0 = max(int(math.floor(min(xs) / grid.cell_size_m)), 0)
    c1 = min(int(math.floor(max(xs) / grid.cell_size_m)), grid.cols - 1)
    for row in range(r0, r1 + 1):
        for col in range(c0, c1 + 1):
            yield row, col


def polygon_cell_fractions(grid: GridSpec, ring) -> np.ndarray:
    """Fraction of the polygon's area falling in each cell, shape (rows, cols)."""
    pts = geometry.validate_simple_polygon(_ring_to_meters(grid, ring))
    total = geometry.polygon_area(pts)
    out = np.zeros((grid.rows, grid.cols))
    for row, col in _candidate_cells(grid, pts):
        rect = grid.cell_rect_m(row, col)
        clipped = geometry.clip_polygon_rect(pts, *rect)
        if clipped:
            out[row, col] = geometry.polygon_area(clipped) / total
    return out


def clip_polygon_area(grid: GridSpec, ring, cell: tuple[int, int]) -> float:
    """Fraction of the polygon's area inside one grid cell, in [0, 1]."""
    pts = geometry.validate_simple_polygon(_ring_to_meters(grid, ring))
    rect = grid.cell_rect_m(*cell)
    clipped = geometry.clip_polygon_rect(pts, *rect)
    if not clipped:
        return 0.0
    return geometry.polygon_area(clipped) / geometry.polygon_area(pts)


def allocate_demographics(units, grid: GridSpec) -> DemographicField:
    """Spread unit populations over cells by clipped-area fraction.

    Cell attribute fractions are the population-weighted means of the
    contributing units' fractions; cells reached by no population keep 0.
    """
    names = sorted({name for u in units for name in u.fractions})
    population = np.zeros((grid.rows, grid.cols))
    mass = {name: np.zeros((grid.rows, grid.cols)) for name in names}
    for k, unit in enumerate(units):
        for name in names:
            if name not in unit.fractions:
                raise InvalidInputError(f"unit {k} missing attribute {name!r}")
        fractions = polygon_cell_fractions(grid, unit.ring)
        contribution = unit.population * fractions
        population += contribution
        for name in names:
            mass[name] += contribution * unit.fractions[name]
    total = population.sum()
    if total <= 0:
        raise InvalidInputError("total allocated population is zero")
    attributes = {}
    for name in names:
        with np.errstate(invalid="ignore"):
            frac = np.where(population > 0, mass[name] / np.maximum(population, 1e-300), 0.0)
        attributes[name] = np.clip(frac, 0.0, 1.0)
    return DemographicField(population / total, attributes, total_population=float(total))


# ---------------------------------------------------------------------------
# urban feature rasterization

def rasterize_features(geoms, grid: GridSpec, mode: str) -> np.ndarray:
    """One (rows, cols) layer from point/polyline geometries.

    count mode: points add 1 to their cell; each polyline segment adds 1
    to every cell it touches.  total_length mode: each cell accumulates
    the clipped length (meters) of the segments crossing it.
    """
    if mode not in ("count", "total_length"):
        raise InvalidInputError(f"unknown rasterize mode {mode!r}")
    out = np.zeros((grid.rows, grid.cols))
    for kind, coords in geoms:
        if kind == "point":
            cell = locate(grid, coords[0], coords[1])
            if cell is not None and mode == "count":
                out[cell] += 1.0
        elif kind == "line":
            pts = _ring_to_meters(grid, coords)
            for a, b in zip(pts[:-1], pts[1:]):
                for row, col in _candidate_cells(grid, [a, b]):
                    rect = grid.cell_rect_m(row, col)
                    clipped = geometry.clip_segment_rect(a, b, *rect)
                    if clipped is None:
                        continue
                    if mode == "count":
                        out[row, col] += 1.0
                    else:
                        out[row, col] += geometry.segment_length(*clipped)
        else:
            raise InvalidInputError(f"unknown geometry kind {kind!r}")
    return out


# ---------------------------------------------------------------------------
# city-level series

def load_series(path: str, names, start: int, end: int, stats=None) -> SeriesStack1D:
    """Hourly series matrix aligned to [start, end), standardized per row.

    Missing hours are forward-filled; hours before the first observation
    are back-filled from it.  ``stats`` may carry (mean, std) computed on
    a training window so evaluation data reuses training statistics; when
    omitted the loaded window's own mean and population std are used.
    """
    if start % HOUR_S or end % HOUR_S:
        raise InvalidInputError("start/end must be aligned to the hour")
    if start >= end:
        raise InvalidInputError(f"empty period: start {start} >= end {end}")
    names = list(names)
    frames = (end - start) // HOUR_S
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not header or header[0].strip() != "timestamp":
            raise DataError(f"{path}: expected header timestamp,<series>...")
        columns = [h.strip() for h in header[1:]]
        missing = [n for n in names if n not in columns]
        if missing:
            raise InvalidInputError(f"{path}: series not in header: {missing}")
        picks = [columns.index(n) + 1 for n in names]
        observed = np.full((len(names), frames), np.nan)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}")
            try:
                ts = parse_timestamp(row[0])
                vals = [float(row[i]) for i in picks]
            except (DataError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            if not (start <= ts < end):
                continue
            if ts % HOUR_S:
                raise DataError(f"{path}:{lineno}: timestamp not on the hour")
            observed[:, (ts - start) // HOUR_S] = vals
    if np.isnan(observed).all(axis=1).any():
        bad = [names[i] for i in range(len(names)) if np.isnan(observed[i]).all()]
        raise DataError(f"{path}: no observations in range for {bad}")
    filled = observed.copy()
    for i in range(len(names)):
        row = filled[i]
        first = np.flatnonzero(~np.isnan(row))[0]
        row[:first] = row[first]
        for t in range(first + 1, frames):
            if np.isnan(row[t]):
                row[t] = row[t - 1]
    if stats is None:
        mean = filled.mean(axis=1)
        std = filled.std(axis=1)
    else:
        mean = np.asarray(stats[0], dtype=np.float64)
        std = np.asarray(stats[1], dtype=np.float64)
    safe_std = np.where(std > 0, std, 1.0)
    series = (filled - mean[:, None]) / safe_std[:, None]
    return SeriesStack1D(names, series, mean, std)


# ---------------------------------------------------------------------------
# windowing

def make_slices(demand: DemandTensor, series: SeriesStack1D, window: int) -> list[TemporalSlice]:
    """All (history window, next frame) pairs over the tensor, in time order."""
    if window < 1:
        raise InvalidInputError(f"window must be >= 1, got {window}")
    frames = demand.frames
    if frames < window + 1:
        raise InvalidInputError(f"need >= {window + 1} frames, got {frames}")
    if series.series.shape[1] != frames:
        raise InvalidInputError(
            f"series length {series.series.shape[1]} != demand frames {frames}")
    slices = []
    for k in range(frames - window):
        slices.append(TemporalSlice(
            history=demand.values[k:k + window],
            history_1d=series.series[:, k:k + window],
            target=demand.values[k + window],
            target_index=k + window,
        ))
    return slices
