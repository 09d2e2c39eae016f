import json
import math

import numpy as np
import pytest

from faircast.errors import DataError, InvalidInputError
from faircast.ingest import (
    DemandTensor,
    DemographicField,
    DemographicUnit,
    TripRecord,
    aggregate_trips,
    allocate_demographics,
    clip_polygon_area,
    format_timestamp,
    load_series,
    make_slices,
    parse_timestamp,
    polygon_cell_fractions,
    rasterize_features,
    read_demographics_geojson,
    read_features_geojson,
    read_trips_csv,
    SeriesStack1D,
)

T0 = 1704067200  # 2024-01-01T00:00:00Z


def to_latlon(grid, x, y):
    """Grid-local meters back to (lat, lon)."""
    return (grid.origin_lat + y / grid.meters_per_deg_lat,
            grid.origin_lon + x / grid.meters_per_deg_lon)


def ring_latlon(grid, ring_m):
    return [to_latlon(grid, x, y) for x, y in ring_m]


# -- timestamps --------------------------------------------------------------

def test_parse_timestamp_forms():
    assert parse_timestamp("2024-01-01T00:00:00Z") == T0
    assert parse_timestamp("2024-01-01T00:00:00+00:00") == T0
    assert parse_timestamp("2024-01-01 00:00:00") == T0  # naive treated as UTC
    assert parse_timestamp("2024-01-01T01:30:15Z") == T0 + 3600 + 30 * 60 + 15


def test_parse_timestamp_rejects_non_utc_offset():
    with pytest.raises(DataError, match="not UTC"):
        parse_timestamp("2024-01-01T00:00:00+02:00")


def test_parse_timestamp_rejects_garbage():
    with pytest.raises(DataError):
        parse_timestamp("not-a-time")


def test_format_round_trip():
    assert parse_timestamp(format_timestamp(T0 + 12345 * 3600)) == T0 + 12345 * 3600
    assert format_timestamp(T0) == "2024-01-01T00:00:00Z"


# -- containers ---------------------------------------------------------------

def test_demand_tensor_rejects_negative_counts():
    with pytest.raises(InvalidInputError):
        DemandTensor(np.array([[[-1.0]]]), start_time=T0)


def test_demand_tensor_allows_signed_predictions():
    t = DemandTensor(np.array([[[-1.0]]]), start_time=T0, nonnegative=False)
    assert t.frames == 1
    assert t.time_of(2) == T0 + 2 * 3600


def test_trip_record_validates_coordinates():
    with pytest.raises(InvalidInputError):
        TripRecord(T0, 91.0, 0.0)
    with pytest.raises(InvalidInputError):
        TripRecord(T0, 0.0, -181.0)


def test_demographic_field_validates_share_sum():
    with pytest.raises(InvalidInputError):
        DemographicField(np.array([0.5, 0.4]), {}, total_population=10.0)


def test_demographic_field_validates_fraction_range():
    with pytest.raises(InvalidInputError):
        DemographicField(np.array([0.5, 0.5]), {"a": np.array([0.5, 1.5])},
                         total_population=10.0)


# -- trip CSV ------------------------------------------------------------------

def write_trips(tmp_path, rows, header="timestamp,lat,lon"):
    path = tmp_path / "trips.csv"
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return str(path)


def test_read_trips_happy_path(tmp_path):
    path = write_trips(tmp_path, [
        "2024-01-01T00:00:00Z,40.001,-99.999",
        "2024-01-01T05:30:00Z,40.002,-99.998",
        "",
    ])
    trips = read_trips_csv(path)
    assert len(trips) == 2
    assert trips[0] == TripRecord(T0, 40.001, -99.999)


def test_read_trips_bad_header(tmp_path):
    path = write_trips(tmp_path, [], header="time,lat,lon")
    with pytest.raises(DataError, match="header"):
        read_trips_csv(path)


def test_read_trips_errors_carry_line_numbers(tmp_path):
    path = write_trips(tmp_path, [
        "2024-01-01T00:00:00Z,40.0,-100.0",
        "2024-01-01T01:00:00Z,40.0",
    ])
    with pytest.raises(DataError, match=":3:"):
        read_trips_csv(path)
    path = write_trips(tmp_path, ["nope,40.0,-100.0"])
    with pytest.raises(DataError, match=":2:"):
        read_trips_csv(path)
    path = write_trips(tmp_path, ["2024-01-01T00:00:00Z,95.0,-100.0"])
    with pytest.raises(DataError, match=":2:.*latitude"):
        read_trips_csv(path)


# -- demographics GeoJSON -------------------------------------------------------

def feature_collection(features):
    return {"type": "FeatureCollection", "features": features}


def polygon_feature(ring_latlon_pts, population, **fracs):
    props = {"population": population}
    props.update({f"{k}_adv_frac": v for k, v in fracs.items()})
    return {
        "type": "Feature",
        "properties": props,
        "geometry": {
            "type": "Polygon",
            "coordinates": [[[lon, lat] for lat, lon in ring_latlon_pts]],
        },
    }


def test_read_demographics_happy_path(tmp_path):
    ring = [(40.0, -100.0), (40.0, -99.9), (40.1, -99.9), (40.1, -100.0)]
    doc = feature_collection([polygon_feature(ring, 1200, income=0.7)])
    path = tmp_path / "demo.geojson"
    path.write_text(json.dumps(doc))
    units = read_demographics_geojson(str(path))
    assert len(units) == 1
    assert units[0].population == 1200
    assert units[0].fractions == {"income": 0.7}
    # GeoJSON [lon, lat] positions came back as (lat, lon) pairs.
    assert units[0].ring[0] == (40.0, -100.0)


def test_read_demographics_missing_population(tmp_path):
    ring = [(40.0, -100.0), (40.0, -99.9), (40.1, -99.9)]
    feat = polygon_feature(ring, 10)
    del feat["properties"]["population"]
    path = tmp_path / "demo.geojson"
    path.write_text(json.dumps(feature_collection([feat])))
    with pytest.raises(DataError, match="feature 0.*population"):
        read_demographics_geojson(str(path))


def test_read_demographics_rejects_non_polygon(tmp_path):
    feat = {"type": "Feature", "properties": {"population": 5},
            "geometry": {"type": "Point", "coordinates": [0.0, 0.0]}}
    path = tmp_path / "demo.geojson"
    path.write_text(json.dumps(feature_collection([feat])))
    with pytest.raises(DataError, match="Polygon"):
        read_demographics_geojson(str(path))


def test_read_demographics_rejects_bad_fraction(tmp_path):
    ring = [(40.0, -100.0), (40.0, -99.9), (40.1, -99.9)]
    doc = feature_collection([polygon_feature(ring, 10, income=1.5)])
    path = tmp_path / "demo.geojson"
    path.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="feature 0"):
        read_demographics_geojson(str(path))


def test_read_demographics_rejects_invalid_json(tmp_path):
    path = tmp_path / "demo.geojson"
    path.write_text("{broken")
    with pytest.raises(DataError, match="JSON"):
        read_demographics_geojson(str(path))


def test_read_demographics_rejects_empty(tmp_path):
    path = tmp_path / "demo.geojson"
    path.write_text(json.dumps(feature_collection([])))
    with pytest.raises(DataError, match="no demographic units"):
        read_demographics_geojson(str(path))


# -- feature GeoJSON -------------------------------------------------------------

def test_read_features_points_and_lines(tmp_path):
    doc = feature_collection([
        {"type": "Feature", "properties": {"layer": "poi"},
         "geometry": {"type": "Point", "coordinates": [-100.0, 40.0]}},
        {"type": "Feature", "properties": {"layer": "roads"},
         "geometry": {"type": "LineString",
                      "coordinates": [[-100.0, 40.0], [-99.9, 40.1]]}},
    ])
    path = tmp_path / "features.geojson"
    path.write_text(json.dumps(doc))
    layers = read_features_geojson(str(path))
    assert set(layers) == {"poi", "roads"}
    assert layers["poi"] == [("point", (40.0, -100.0))]
    assert layers["roads"][0][0] == "line"
    assert layers["roads"][0][1][1] == (40.1, -99.9)


def test_read_features_missing_layer(tmp_path):
    doc = feature_collection([
        {"type": "Feature", "properties": {},
         "geometry": {"type": "Point", "coordinates": [0.0, 0.0]}},
    ])
    path = tmp_path / "features.geojson"
    path.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="layer"):
        read_features_geojson(str(path))


def test_read_features_rejects_short_linestring(tmp_path):
    doc = feature_collection([
        {"type": "Feature", "properties": {"layer": "roads"},
         "geometry": {"type": "LineString", "coordinates": [[0.0, 0.0]]}},
    ])
    path = tmp_path / "features.geojson"
    path.write_text(json.dumps(doc))
    with pytest.raises(DataError, match="LineString"):
        read_features_geojson(str(path))


# -- trip aggregation -------------------------------------------------------------

def test_aggregate_places_and_bins_correctly(make_grid):
    grid = make_grid(2, 2, 1000.0)
    inside = to_latlon(grid, 500.0, 1500.0)  # row 1, col 0
    trips = [
        TripRecord(T0, *inside),
        TripRecord(T0 + 3599, *inside),   # still frame 0
        TripRecord(T0 + 3600, *inside),   # frame 1
    ]
    tensor, dropped = aggregate_trips(trips, grid, T0, T0 + 2 * 3600)
    assert dropped == 0
    assert tensor.values[0, 1, 0] == 2.0
    assert tensor.values[1, 1, 0] == 1.0
    assert tensor.values.sum() == 3.0


def test_aggregate_conservation_with_drops(make_grid, rng):
    grid = make_grid(3, 3, 1000.0)
    trips = []
    for _ in range(500):
        x = rng.uniform(-500.0, 3500.0)
        y = rng.uniform(-500.0, 3500.0)
        ts = T0 + int(rng.integers(-3600, 25 * 3600))
        trips.append(TripRecord(ts, *to_latlon(grid, x, y)))
    tensor, dropped = aggregate_trips(trips, grid, T0, T0 + 24 * 3600)
    assert tensor.values.sum() + dropped == len(trips)
    oracle = sum(
        1 for t in trips
        if T0 <= t.timestamp < T0 + 24 * 3600
        and 0.0 <= grid.to_meters(t.lat, t.lon)[0] <= grid.width_m
        and 0.0 <= grid.to_meters(t.lat, t.lon)[1] <= grid.height_m)
    assert tensor.values.sum() == oracle


def test_aggregate_drops_end_boundary(make_grid):
    grid = make_grid(1, 1, 1000.0)
    pt = to_latlon(grid, 500.0, 500.0)
    _, dropped = aggregate_trips([TripRecord(T0 + 3600, *pt)], grid, T0, T0 + 3600)
    assert dropped == 1


def test_aggregate_validates_alignment(make_grid):
    grid = make_grid(1, 1, 1000.0)
    with pytest.raises(InvalidInputError):
        aggregate_trips([], grid, T0 + 1, T0 + 3601)
    with pytest.raises(InvalidInputError):
        aggregate_trips([], grid, T0, T0)


# -- polygon allocation -------------------------------------------------------------

def test_single_cell_polygon_fraction_is_one(make_grid):
    grid = make_grid(2, 2, 1000.0)
    ring = ring_latlon(grid, [(100.0, 100.0), (900.0, 100.0), (900.0, 900.0), (100.0, 900.0)])
    frac = polygon_cell_fractions(grid, ring)
    assert frac[0, 0] == pytest.approx(1.0)
    assert frac.sum() == pytest.approx(1.0)


def test_straddling_polygon_splits_half_and_half(make_grid):
    grid = make_grid(1, 2, 1000.0)
    ring = ring_latlon(grid, [(500.0, 200.0), (1500.0, 200.0), (1500.0, 800.0), (500.0, 800.0)])
    frac = polygon_cell_fractions(grid, ring)
    assert frac[0, 0] == pytest.approx(0.5, abs=1e-9)
    assert frac[0, 1] == pytest.approx(0.5, abs=1e-9)


def test_clip_polygon_area_matches_fractions(make_grid):
    grid = make_grid(2, 2, 1000.0)
    ring = ring_latlon(grid, [(500.0, 500.0), (1500.0, 500.0), (1500.0, 1500.0), (500.0, 1500.0)])
    frac = polygon_cell_fractions(grid, ring)
    for cell in ((0, 0), (0, 1), (1, 0), (1, 1)):
        assert clip_polygon_area(grid, ring, cell) == pytest.approx(frac[cell])
        assert clip_polygon_area(grid, ring, cell) == pytest.approx(0.25, abs=1e-9)


def test_polygon_fractions_match_monte_carlo(make_grid, rng):
    grid = make_grid(3, 3, 1000.0)
    tri_m = [(200.0, 300.0), (2800.0, 700.0), (1400.0, 2600.0)]
    frac = polygon_cell_fractions(grid, ring_latlon(grid, tri_m))

    n = 200_000
    a, b, c = (np.array(p) for p in tri_m)
    u = rng.uniform(size=n)
    v = rng.uniform(size=n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    rows = np.minimum((pts[:, 1] // 1000.0).astype(int), 2)
    cols = np.minimum((pts[:, 0] // 1000.0).astype(int), 2)
    mc = np.zeros((3, 3))
    np.add.at(mc, (rows, cols), 1.0)
    mc /= n
    np.testing.assert_allclose(frac, mc, atol=5e-3)
    assert frac.sum() == pytest.approx(1.0, rel=1e-9)


def test_allocate_single_unit_uniform(make_grid):
    grid = make_grid(2, 2, 1000.0)
    ring = ring_latlon(grid, [(0.0, 0.0), (2000.0, 0.0), (2000.0, 2000.0), (0.0, 2000.0)])
    field = allocate_demographics([DemographicUnit(ring, 800.0, {"income": 0.7})], grid)
    np.testing.assert_allclose(field.population_share, np.full((2, 2), 0.25), atol=1e-9)
    np.testing.assert_allclose(field.attributes["income"], np.full((2, 2), 0.7))
    assert field.total_population == pytest.approx(800.0)


def test_allocate_disjoint_units(make_grid):
    grid = make_grid(1, 2, 1000.0)
    left = ring_latlon(grid, [(0.0, 0.0), (1000.0, 0.0), (1000.0, 1000.0), (0.0, 1000.0)])
    right = ring_latlon(grid, [(1000.0, 0.0), (2000.0, 0.0), (2000.0, 1000.0), (1000.0, 1000.0)])
    field = allocate_demographics([
        DemographicUnit(left, 300.0, {"income": 0.9}),
        DemographicUnit(right, 100.0, {"income": 0.2}),
    ], grid)
    np.testing.assert_allclose(field.population_share, [[0.75, 0.25]], atol=1e-9)
    np.testing.assert_allclose(field.attributes["income"], [[0.9, 0.2]], atol=1e-9)


def test_allocate_overlapping_units_population_weighted(make_grid):
    grid = make_grid(1, 1, 1000.0)
    ring = ring_latlon(grid, [(0.0, 0.0), (1000.0, 0.0), (1000.0, 1000.0), (0.0, 1000.0)])
    field = allocate_demographics([
        DemographicUnit(ring, 300.0, {"income": 1.0}),
        DemographicUnit(ring, 100.0, {"income": 0.0}),
    ], grid)
    assert field.attributes["income"][0, 0] == pytest.approx(0.75)
    assert field.total_population == pytest.approx(400.0)


def test_allocate_matches_brute_force_oracle(make_grid, rng):
    grid = make_grid(2, 2, 1000.0)
    units = []
    for _ in range(4):
        x0 = rng.uniform(0.0, 1200.0)
        y0 = rng.uniform(0.0, 1200.0)
        w = rng.uniform(400.0, 800.0)
        h = rng.uniform(400.0, 800.0)
        ring = ring_latlon(grid, [(x0, y0), (x0 + w, y0), (x0 + w, y0 + h), (x0, y0 + h)])
        units.append(DemographicUnit(ring, float(rng.uniform(100, 1000)),
                                     {"income": float(rng.uniform(0, 1))}))
    field = allocate_demographics(units, grid)

    population = np.zeros((2, 2))
    mass = np.zeros((2, 2))
    for unit in units:
        for r in range(2):
            for c in range(2):
                share = clip_polygon_area(grid, unit.ring, (r, c))
                population[r, c] += unit.population * share
                mass[r, c] += unit.population * share * unit.fractions["income"]
    np.testing.assert_allclose(field.population_share, population / population.sum(), atol=1e-12)
    expect = np.where(population > 0, mass / np.maximum(population, 1e-300), 0.0)
    np.testing.assert_allclose(field.attributes["income"], expect, atol=1e-12)


def test_allocate_rejects_zero_population(make_grid):
    grid = make_grid(1, 1, 1000.0)
    ring = ring_latlon(grid, [(0.0, 0.0), (1000.0, 0.0), (1000.0, 1000.0), (0.0, 1000.0)])
    with pytest.raises(InvalidInputError, match="zero"):
        allocate_demographics([DemographicUnit(ring, 0.0, {"income": 0.5})], grid)


def test_allocate_rejects_missing_attribute(make_grid):
    grid = make_grid(1, 1, 1000.0)
    ring = ring_latlon(grid, [(0.0, 0.0), (1000.0, 0.0), (1000.0, 1000.0), (0.0, 1000.0)])
    with pytest.raises(InvalidInputError, match="missing attribute"):
        allocate_demographics([
            DemographicUnit(ring, 10.0, {"income": 0.5}),
            DemographicUnit(ring, 10.0, {}),
        ], grid)


# -- rasterization -------------------------------------------------------------

def test_rasterize_points_count(make_grid):
    grid = make_grid(2, 2, 1000.0)
    geoms = [
        ("point", to_latlon(grid, 500.0, 500.0)),
        ("point", to_latlon(grid, 600.0, 400.0)),
        ("point", to_latlon(grid, 1500.0, 1500.0)),
        ("point", to_latlon(grid, 5000.0, 5000.0)),  # outside, ignored
    ]
    out = rasterize_features(geoms, grid, "count")
    assert out[0, 0] == 2.0
    assert out[1, 1] == 1.0
    assert out.sum() == 3.0


def test_rasterize_line_counts_each_touched_cell_once(make_grid):
    grid = make_grid(1, 3, 1000.0)
    line = [to_latlon(grid, 100.0, 500.0), to_latlon(grid, 2900.0, 500.0)]
    out = rasterize_features([("line", line)], grid, "count")
    np.testing.assert_allclose(out, [[1.0, 1.0, 1.0]])


def test_rasterize_total_length_conserves(make_grid):
    grid = make_grid(2, 2, 1000.0)
    line = [to_latlon(grid, 100.0, 100.0), to_latlon(grid, 1900.0, 1900.0)]
    out = rasterize_features([("line", line)], grid, "total_length")
    assert out.sum() == pytest.approx(math.hypot(1800.0, 1800.0), rel=1e-9)
    assert out[0, 0] == pytest.approx(out[1, 1], rel=1e-9)
    # Diagonal corner touch contributes zero length off the diagonal.
    assert out[0, 1] + out[1, 0] == pytest.approx(0.0, abs=1e-9)


def test_rasterize_total_length_ignores_points(make_grid):
    grid = make_grid(1, 1, 1000.0)
    out = rasterize_features([("point", to_latlon(grid, 500.0, 500.0))], grid, "total_length")
    assert out.sum() == 0.0


def test_rasterize_validates_mode(make_grid):
    grid = make_grid(1, 1, 1000.0)
    with pytest.raises(InvalidInputError):
        rasterize_features([], grid, "density")
    with pytest.raises(InvalidInputError):
        rasterize_features([("blob", (0.0, 0.0))], grid, "count")


# -- city-level series -------------------------------------------------------------

def write_series(tmp_path, rows, header="timestamp,temp,wind"):
    path = tmp_path / "weather.csv"
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    return str(path)


def test_series_standardization_exact(tmp_path):
    path = write_series(tmp_path, [
        f"{format_timestamp(T0)},1.0,5.0",
        f"{format_timestamp(T0 + 3600)},2.0,5.0",
        f"{format_timestamp(T0 + 7200)},3.0,5.0",
    ])
    stack = load_series(path, ["temp", "wind"], T0, T0 + 3 * 3600)
    root = math.sqrt(1.5)
    np.testing.assert_allclose(stack.series[0], [-root, 0.0, root], rtol=1e-12)
    assert stack.mean[0] == pytest.approx(2.0)
    assert stack.std[0] == pytest.approx(math.sqrt(2.0 / 3.0))
    # Constant series: std 0 guards to 1, standardized to all zeros.
    np.testing.assert_array_equal(stack.series[1], np.zeros(3))


def test_series_forward_fill_and_leading_backfill(tmp_path):
    path = write_series(tmp_path, [
        f"{format_timestamp(T0 + 3600)},10.0,0.0",
        f"{format_timestamp(T0 + 3 * 3600)},30.0,0.0",
    ])
    stack = load_series(path, ["temp"], T0, T0 + 4 * 3600)
    filled = stack.series[0] * stack.std[0] + stack.mean[0]
    np.testing.assert_allclose(filled, [10.0, 10.0, 10.0, 30.0], rtol=1e-12)


def test_series_reuses_training_stats(tmp_path):
    path = write_series(tmp_path, [
        f"{format_timestamp(T0)},1.0,0.0",
        f"{format_timestamp(T0 + 3600)},2.0,0.0",
        f"{format_timestamp(T0 + 7200)},3.0,0.0",
    ])
    train = load_series(path, ["temp"], T0, T0 + 2 * 3600)
    both = load_series(path, ["temp"], T0, T0 + 3 * 3600, stats=(train.mean, train.std))
    assert both.mean[0] == train.mean[0] and both.std[0] == train.std[0]
    np.testing.assert_allclose(both.series[0], (np.array([1.0, 2.0, 3.0]) - 1.5) / 0.5)


def test_series_missing_name_rejected(tmp_path):
    path = write_series(tmp_path, [f"{format_timestamp(T0)},1.0,2.0"])
    with pytest.raises(InvalidInputError, match="pressure"):
        load_series(path, ["pressure"], T0, T0 + 3600)


def test_series_no_data_in_range_rejected(tmp_path):
    path = write_series(tmp_path, [f"{format_timestamp(T0)},1.0,2.0"])
    with pytest.raises(DataError, match="no observations"):
        load_series(path, ["temp"], T0 + 86400, T0 + 86400 + 3600)


def test_series_rejects_off_hour_rows(tmp_path):
    path = write_series(tmp_path, [f"{format_timestamp(T0 + 60)},1.0,2.0"])
    with pytest.raises(DataError, match="on the hour"):
        load_series(path, ["temp"], T0, T0 + 3600)


# -- windowing -------------------------------------------------------------

def demand_and_series(frames, rows=2, cols=2, m=2):
    values = np.arange(frames * rows * cols, dtype=np.float64).reshape(frames, rows, cols)
    demand = DemandTensor(values, start_time=T0)
    series = SeriesStack1D(
        names=[f"s{i}" for i in range(m)],
        series=np.arange(m * frames, dtype=np.float64).reshape(m, frames),
        mean=np.zeros(m), std=np.ones(m))
    return demand, series


def test_make_slices_count_and_reconstruction():
    demand, series = demand_and_series(10)
    slices = make_slices(demand, series, window=3)
    assert len(slices) == 7
    for k, sl in enumerate(slices):
        assert sl.target_index == k + 3
        np.testing.assert_array_equal(sl.history, demand.values[k:k + 3])
        np.testing.assert_array_equal(sl.history_1d, series.series[:, k:k + 3])
        np.testing.assert_array_equal(sl.target, demand.values[k + 3])


def test_make_slices_validates_window():
    demand, series = demand_and_series(5)
    with pytest.raises(InvalidInputError):
        make_slices(demand, series, window=0)
    with pytest.raises(InvalidInputError):
        make_slices(demand, series, window=5)


def test_make_slices_validates_series_alignment():
    demand, _ = demand_and_series(6)
    _, series = demand_and_series(5)
    with pytest.raises(InvalidInputError):
        make_slices(demand, series, window=2)
