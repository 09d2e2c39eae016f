"""Command-line pipeline: synth, prepare, train, evaluate, predict, sweep.

Every command reads one flat config file (see config.py) plus repeatable
`--set key=value` overrides.  Failures exit with a machine-parsable
single line on stderr: `error code=<n> kind=<ExceptionName> msg="..."`,
with code 2 for configuration problems, 3 for data problems, and 4 for
numeric failures.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import fairness, ingest, model, synth, train
from .evaluate import evaluate as run_evaluate
from .evaluate import export_heatmap
from .checkpoint import load_container, save_container
from .config import RunConfig
from .errors import (
    ConfigError,
    DataError,
    DegenerateGroupError,
    FaircastError,
    InvalidInputError,
    NumericError,
    UndefinedCorrelationError,
)
from .fileio import write_text_atomic
from .grid import BoundingBox, GridSpec, build_grid

_EXIT_CODES = {
    ConfigError: 2,
    InvalidInputError: 2,
    DataError: 3,
    DegenerateGroupError: 3,
    UndefinedCorrelationError: 3,
    NumericError: 4,
}


def _exit_code(exc: Exception) -> int:
    for kind, code in _EXIT_CODES.items():
        if isinstance(exc, kind):
            return code
    if isinstance(exc, OSError):
        return 3
    return 1


def _error_line(exc: Exception) -> str:
    msg = str(exc).replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ")
    return f'error code={_exit_code(exc)} kind={type(exc).__name__} msg="{msg}"'


# ---------------------------------------------------------------------------
# config plumbing

def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if args.config else RunConfig()
    cfg.apply_overrides(args.set or [])
    return cfg


def _grid_from_config(cfg: RunConfig) -> GridSpec:
    bbox = BoundingBox(cfg.get_float("grid.lat_min"), cfg.get_float("grid.lon_min"),
                       cfg.get_float("grid.lat_max"), cfg.get_float("grid.lon_max"))
    return build_grid(bbox, cfg.get_float("grid.cell_size_m"))


def _fairness_from_config(cfg: RunConfig) -> fairness.FairnessConfig:
    attributes = cfg.get_str_list("fairness.attributes", [])
    lams = {a: cfg.get_float(f"fairness.lambda.{a}", 1.0) for a in attributes}
    thresholds = {a: cfg.get_float(f"fairness.threshold.{a}", 0.5) for a in attributes}
    return fairness.FairnessConfig(
        kind=cfg.get_str("fairness.kind", "none"),
        weight=cfg.get_float("fairness.weight", 0.0),
        attributes=lams,
        thresholds=thresholds,
        p_min=cfg.get_float("fairness.p_min", fairness.DEFAULT_P_MIN),
        y_min=cfg.get_float("fairness.y_min", fairness.DEFAULT_Y_MIN),
    )


def _arch_from_config(cfg: RunConfig, rows: int, cols: int, m: int, n: int) -> model.ArchConfig:
    return model.ArchConfig(
        rows=rows, cols=cols, m_series=m, n_features=n,
        window=cfg.get_int("model.window", 168),
        filters_3d=tuple(int(f) for f in cfg.get_float_list("model.filters_3d", [16, 32, 1])),
        kernel=cfg.get_int("model.kernel", 3),
        c3=cfg.get_int("model.c3", 8),
        c2=cfg.get_int("model.c2", 4),
        c1=cfg.get_int("model.c1", 4),
        head_channels=cfg.get_int("model.head_channels", 8),
        head_layers=cfg.get_int("model.head_layers", 2),
    )


def _train_from_config(cfg: RunConfig, out_dir: str) -> train.TrainConfig:
    return train.TrainConfig(
        epochs=cfg.get_int("train.epochs"),
        seed=cfg.get_int("train.seed", 0),
        batch_size=cfg.get_int("train.batch_size", 32),
        lr_base=cfg.get_float("train.lr_base", 0.005),
        lr_decay=cfg.get_float("train.lr_decay", 0.96),
        lr_interval=cfg.get_int("train.lr_interval", 5000),
        checkpoint_every=cfg.get_int("train.checkpoint_every", 0),
        checkpoint_path=os.path.join(out_dir, "model.fct"),
    )


# ---------------------------------------------------------------------------
# prepared-data container

class PreparedData:
    def __init__(self, arrays: dict, meta: dict):
        g = meta["grid"]
        self.grid = GridSpec(g["origin_lat"], g["origin_lon"], g["cell_size_m"],
                             g["rows"], g["cols"], g["meters_per_deg_lat"],
                             g["meters_per_deg_lon"])
        self.demand = ingest.DemandTensor(arrays["demand"], meta["start_time"],
                                          meta["interval_s"])
        self.series = ingest.SeriesStack1D(meta["series_names"], arrays["series"],
                                           arrays["series_mean"], arrays["series_std"])
        self.features = ingest.FeatureStack2D(meta["feature_names"], arrays["features"])
        self.field = ingest.DemographicField(
            arrays["population_share"],
            {name: arrays[f"attr.{name}"] for name in meta["attributes"]},
            total_population=meta["total_population"])
        self.boundary_index = meta["boundary_index"]
        self.meta = meta


def _load_prepared(out_dir: str) -> PreparedData:
    path = os.path.join(out_dir, "prepared.fct")
    arrays, meta = load_container(path)
    if meta.get("kind") != "prepared":
        raise DataError(f"{path} is not a prepared-data file")
    return PreparedData(arrays, meta)


def _labelings(cfg: RunConfig, fconf: fairness.FairnessConfig, field_):
    return {a: fairness.discretize_groups(field_, a, fconf.thresholds[a], fconf.p_min)
            for a in fconf.attributes}


def _test_tensors(prepared: PreparedData, params: model.ModelParams,
                  window: int, clamp: bool):
    """(predictions, truth) DemandTensors over the held-out period."""
    slices = ingest.make_slices(prepared.demand, prepared.series, window)
    test = [s for s in slices if s.target_index >= prepared.boundary_index]
    if not test:
        raise InvalidInputError("no test slices after the train boundary")
    preds = np.stack([model.predict_frame(s, prepared.features.maps, params).data
                      for s in test])
    truth = np.stack([s.target for s in test])
    if clamp:
        preds = np.maximum(preds, 0.0)
    start = prepared.demand.time_of(test[0].target_index)
    pred_t = ingest.DemandTensor(preds, start, prepared.demand.interval_s,
                                 nonnegative=False)
    truth_t = ingest.DemandTensor(truth, start, prepared.demand.interval_s)
    return pred_t, truth_t


# ---------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    cfg = _load_config(args)
    sconf = synth.SynthConfig(
        seed=cfg.get_int("synth.seed", 0),
        rows=cfg.get_int("synth.rows", 8),
        cols=cfg.get_int("synth.cols", 8),
        cell_size_m=cfg.get_float("synth.cell_size_m", 1000.0),
        days=cfg.get_int("synth.days", 21),
        bias=cfg.get_float("synth.bias", 3.0),
        base_rate=cfg.get_float("synth.base_rate", 2.0),
        attribute=cfg.get_str("synth.attribute", "income"),
        threshold=cfg.get_float("synth.threshold", 0.5),
    )
    out_dir = args.out or cfg.get_str("paths.out_dir")
    info = generate_with_config(out_dir, sconf, cfg)
    print(f"synth: wrote {info['trip_count']} trips and a run config under {out_dir}")
    return 0


def generate_with_config(out_dir: str, sconf: synth.SynthConfig, cfg: RunConfig) -> dict:
    """Generate the dataset and a ready-to-run config file next to it."""
    info = synth.generate_city(out_dir, sconf)
    grid = info["grid"]
    # Hold out the final week when there is one, else the final day.
    train_days = sconf.days - 7 if sconf.days > 7 else max(sconf.days - 1, 1)
    boundary = info["start_time"] + train_days * 24 * ingest.HOUR_S
    lat_max = grid.origin_lat + grid.rows * grid.cell_size_m / grid.meters_per_deg_lat
    lon_max = grid.origin_lon + grid.cols * grid.cell_size_m / grid.meters_per_deg_lon
    window = cfg.get_int("model.window", 24)
    lines = [
        "# generated alongside the synthetic dataset",
        f"paths.trips = {info['trips']}",
        f"paths.demographics = {info['demographics']}",
        f"paths.weather = {info['weather']}",
        f"paths.features = {info['features']}",
        f"paths.out_dir = {out_dir}",
        f"grid.lat_min = {grid.origin_lat!r}",
        f"grid.lon_min = {grid.origin_lon!r}",
        f"grid.lat_max = {lat_max!r}",
        f"grid.lon_max = {lon_max!r}",
        f"grid.cell_size_m = {grid.cell_size_m!r}",
        f"time.start = {ingest.format_timestamp(info['start_time'])}",
        f"time.end = {ingest.format_timestamp(info['end_time'])}",
        f"time.train_boundary = {ingest.format_timestamp(boundary)}",
        "series.names = temperature,pressure,precipitation",
        "features.layers = poi,roads",
        f"model.window = {window}",
        "model.filters_3d = 4,4,1",
        "model.c3 = 4",
        "model.c2 = 2",
        "model.c1 = 2",
        "model.head_channels = 4",
        "train.epochs = 12",
        "train.seed = 0",
        f"fairness.attributes = {info['attribute']}",
        f"fairness.threshold.{info['attribute']} = {info['threshold']!r}",
        "fairness.kind = individual",
        "fairness.weight = 0.0",
    ]
    write_text_atomic(os.path.join(out_dir, "run.cfg"), "\n".join(lines) + "\n")
    return info


def cmd_prepare(args) -> int:
    cfg = _load_config(args)
    out_dir = args.out or cfg.get_str("paths.out_dir")
    os.makedirs(out_dir, exist_ok=True)
    grid = _grid_from_config(cfg)
    start = ingest.parse_timestamp(cfg.get_str("time.start"))
    end = ingest.parse_timestamp(cfg.get_str("time.end"))
    boundary = ingest.parse_timestamp(cfg.get_str("time.train_boundary"))
    if not (start < boundary < end):
        raise ConfigError("time.train_boundary must fall inside (time.start, time.end)")
    trips = ingest.read_trips_csv(cfg.get_str("paths.trips"))
    demand, dropped = ingest.aggregate_trips(trips, grid, start, end)
    units = ingest.read_demographics_geojson(cfg.get_str("paths.demographics"))
    field_ = ingest.allocate_demographics(units, grid)
    names = cfg.get_str_list("series.names")
    weather_path = cfg.get_str("paths.weather")
    stats_src = ingest.load_series(weather_path, names, start, boundary)
    series = ingest.load_series(weather_path, names, start, end,
                                stats=(stats_src.mean, stats_src.std))
    layers = cfg.get_str_list("features.layers", [])
    feature_names = []
    feature_maps = []
    if layers:
        geoms = ingest.read_features_geojson(cfg.get_str("paths.features"))
        for layer in layers:
            if layer not in geoms:
                raise DataError(f"feature layer {layer!r} not present in the GeoJSON")
            default_mode = "count" if all(k == "point" for k, _ in geoms[layer]) \
                else "total_length"
            mode = cfg.get_str(f"features.mode.{layer}", default_mode)
            feature_names.append(layer)
            feature_maps.append(ingest.rasterize_features(geoms[layer], grid, mode))
    features = np.stack(feature_maps) if feature_maps \
        else np.zeros((0, grid.rows, grid.cols))
    arrays = {
        "demand": demand.values,
        "series": series.series,
        "series_mean": series.mean,
        "series_std": series.std,
        "features": features,
        "population_share": field_.population_share,
    }
    for name, arr in field_.attributes.items():
        arrays[f"attr.{name}"] = arr
    meta = {
        "kind": "prepared",
        "grid": {"origin_lat": grid.origin_lat, "origin_lon": grid.origin_lon,
                 "cell_size_m": grid.cell_size_m, "rows": grid.rows, "cols": grid.cols,
                 "meters_per_deg_lat": grid.meters_per_deg_lat,
                 "meters_per_deg_lon": grid.meters_per_deg_lon},
        "start_time": start,
        "interval_s": demand.interval_s,
        "boundary_index": (boundary - start) // demand.interval_s,
        "series_names": names,
        "feature_names": feature_names,
        "attributes": sorted(field_.attributes),
        "total_population": field_.total_population,
        "dropped_trips": dropped,
    }
    save_container(os.path.join(out_dir, "prepared.fct"), arrays, meta)
    print(f"prepare: {demand.frames} frames, {int(demand.values.sum())} trips kept, "
          f"{dropped} dropped, {len(feature_names)} feature layers")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out_dir = args.out or cfg.get_str("paths.out_dir")
    prepared = _load_prepared(out_dir)
    fconf = _fairness_from_config(cfg)
    arch = _arch_from_config(cfg, prepared.grid.rows, prepared.grid.cols,
                             len(prepared.series.names), len(prepared.features.names))
    tconf = _train_from_config(cfg, out_dir)
    slices = ingest.make_slices(prepared.demand, prepared.series, arch.window)
    train_slices = [s for s in slices if s.target_index < prepared.boundary_index]
    if not train_slices:
        raise InvalidInputError("no training slices before the train boundary")
    labelings = _labelings(cfg, fconf, prepared.field)
    params, log = train.train_model(train_slices, prepared.features.maps, arch,
                                    tconf, fconf, prepared.field, labelings)
    train.save_params(os.path.join(out_dir, "model.fct"), params)
    log.write(os.path.join(out_dir, "trainlog.csv"))
    final = log.rows[-1]
    print(f"train: {len(train_slices)} slices, {tconf.epochs} epochs, "
          f"final acc_loss {final[1]:.4f}, fair_loss {final[2]:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    out_dir = args.out or cfg.get_str("paths.out_dir")
    prepared = _load_prepared(out_dir)
    params = train.load_params(os.path.join(out_dir, "model.fct"))
    fconf = _fairness_from_config(cfg)
    labelings = _labelings(cfg, fconf, prepared.field)
    clamp = cfg.get_bool("eval.clamp_negative", False)
    pred_t, truth_t = _test_tensors(prepared, params, params.config.window, clamp)
    report = run_evaluate(pred_t, truth_t, prepared.field, labelings,
                               fconf.p_min, source="prediction")
    report.write(os.path.join(out_dir, "report.csv"))
    if cfg.get_bool("eval.truth_report", True):
        truth_report = run_evaluate(truth_t, truth_t, prepared.field, labelings,
                                         fconf.p_min, source="truth")
        truth_report.write(os.path.join(out_dir, "report_truth.csv"))
    print(f"evaluate: MAE {report.mae:.4f} over {pred_t.frames} test frames")
    return 0


def cmd_predict(args) -> int:
    cfg = _load_config(args)
    out_dir = args.out or cfg.get_str("paths.out_dir")
    prepared = _load_prepared(out_dir)
    params = train.load_params(os.path.join(out_dir, "model.fct"))
    clamp = cfg.get_bool("eval.clamp_negative", False)
    window = params.config.window
    wanted = args.hours or cfg.get_str("predict.hours", "")
    if not str(wanted).strip():
        raise ConfigError("predict needs --hours or predict.hours (frame indices)")
    indices = [int(tok) for tok in str(wanted).split(",") if tok.strip()]
    slices = ingest.make_slices(prepared.demand, prepared.series, window)
    by_index = {s.target_index: s for s in slices}
    written = []
    for idx in indices:
        if idx not in by_index:
            raise InvalidInputError(
                f"frame {idx} has no full history window (valid: {window}.."
                f"{prepared.demand.frames - 1})")
        frame = model.predict_frame(by_index[idx], prepared.features.maps, params).data
        if clamp:
            frame = np.maximum(frame, 0.0)
        written += list(export_heatmap(
            frame, os.path.join(out_dir, f"heatmap_{idx}")))
    print(f"predict: wrote {len(written)} files for {len(indices)} frames")
    return 0


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    out_dir = args.out or cfg.get_str("paths.out_dir")
    prepared = _load_prepared(out_dir)
    lams = cfg.get_float_list("fairness.sweep")
    if not lams:
        raise ConfigError("fairness.sweep must list at least one weight")
    fconf = _fairness_from_config(cfg)
    arch = _arch_from_config(cfg, prepared.grid.rows, prepared.grid.cols,
                             len(prepared.series.names), len(prepared.features.names))
    tconf = _train_from_config(cfg, out_dir)
    slices = ingest.make_slices(prepared.demand, prepared.series, arch.window)
    train_slices = [s for s in slices if s.target_index < prepared.boundary_index]
    labelings = _labelings(cfg, fconf, prepared.field)
    clamp = cfg.get_bool("eval.clamp_negative", False)
    rows = ["lambda,attribute,mae,region_gap,individual_gap,spearman_rho"]
    for lam in lams:
        # A zero weight contributes nothing, so skip the penalty evaluation.
        run_f = fairness.FairnessConfig(
            kind="none" if lam == 0 else fconf.kind,
            weight=lam, attributes=fconf.attributes, thresholds=fconf.thresholds,
            p_min=fconf.p_min, y_min=fconf.y_min)
        params, _ = train.train_model(train_slices, prepared.features.maps, arch,
                                      tconf, run_f, prepared.field, labelings)
        pred_t, truth_t = _test_tensors(prepared, params, arch.window, clamp)
        report = run_evaluate(pred_t, truth_t, prepared.field, labelings,
                                   fconf.p_min)
        by_attr = {}
        for metric, attribute, value, _p in report.rows:
            by_attr.setdefault(attribute, {})[metric] = value
        for attribute in fconf.attributes:
            got = by_attr.get(attribute, {})
            cells = [repr(value) if value is not None else ""
                     for value in (got.get("region_gap"), got.get("individual_gap"),
                                   got.get("spearman_rho"))]
            rows.append(f"{lam!r},{attribute},{report.mae!r}," + ",".join(cells))
        print(f"sweep: lambda={lam} MAE={report.mae:.4f} "
              f"IFG={[round(by_attr[a]['individual_gap'], 4) for a in fconf.attributes]}")
    write_text_atomic(os.path.join(out_dir, "sweep.csv"), "\n".join(rows) + "\n")
    return 0


# ---------------------------------------------------------------------------
# entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="faircast",
        description="Fairness-aware spatiotemporal demand forecasting pipeline.")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for compiled kernels (1 = deterministic)")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, extra in (
        ("synth", cmd_synth, "generate a seeded synthetic city dataset"),
        ("prepare", cmd_prepare, "ingest raw files into grid tensors"),
        ("train", cmd_train, "train the predictor on prepared data"),
        ("evaluate", cmd_evaluate, "score the trained model on the test period"),
        ("predict", cmd_predict, "export predicted heatmaps for chosen frames"),
        ("sweep", cmd_sweep, "train/evaluate across fairness weights"),
    ):
        p = sub.add_parser(name, help=extra)
        p.add_argument("--config", help="path to the flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
        p.add_argument("--out", help="output directory (overrides paths.out_dir)")
        if name == "predict":
            p.add_argument("--hours", help="comma-separated target frame indices")
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads and args.threads > 1:
        try:
            import numba

            numba.set_num_threads(args.threads)
        except ImportError:
            pass
    try:
        return args.func(args)
    except FaircastError as exc:
        print(_error_line(exc), file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(_error_line(exc), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
