"""Fairness-aware spatiotemporal demand forecasting on city grids.

The package turns raw trip records into hourly grid tensors, trains a
three-stream convolutional predictor (demand history in 3D, urban
feature maps in 2D, city-level series in 1D) on its own reverse-mode
autodiff engine, and measures or penalizes demographic inequity in the
predictions through region- and individual-level fairness gaps.
"""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DegenerateGroupError,
    FaircastError,
    InvalidInputError,
    NumericError,
    UndefinedCorrelationError,
)
from .grid import BoundingBox, GridSpec, build_grid, locate
from .ingest import (
    DemandTensor,
    DemographicField,
    DemographicUnit,
    FeatureStack2D,
    SeriesStack1D,
    TemporalSlice,
    TripRecord,
    aggregate_trips,
    allocate_demographics,
    clip_polygon_area,
    load_series,
    make_slices,
    rasterize_features,
)
from .model import ArchConfig, ModelParams, forward, ha_predict, init_params, predict_frame
from .fairness import (
    FairnessConfig,
    GapReport,
    GroupLabeling,
    composite_loss,
    discretize_groups,
    equal_means_loss,
    individual_fairness_gap,
    individual_fairness_loss,
    pairwise_loss,
    region_fairness_gap,
    region_fairness_loss,
)
from .train import TrainConfig, TrainLog, batch_loss, load_params, save_params, train_model
from .evaluate import EvalReport, evaluate, export_heatmap, mae, spearman
from .optim import AdamState, adam_init, adam_step, lr_at

__all__ = [
    "ArchConfig",
    "AdamState",
    "BoundingBox",
    "ConfigError",
    "DataError",
    "DegenerateGroupError",
    "DemandTensor",
    "DemographicField",
    "DemographicUnit",
    "EvalReport",
    "FaircastError",
    "FairnessConfig",
    "FeatureStack2D",
    "GapReport",
    "GridSpec",
    "GroupLabeling",
    "InvalidInputError",
    "ModelParams",
    "NumericError",
    "SeriesStack1D",
    "TemporalSlice",
    "TrainConfig",
    "TrainLog",
    "TripRecord",
    "UndefinedCorrelationError",
    "adam_init",
    "adam_step",
    "aggregate_trips",
    "allocate_demographics",
    "batch_loss",
    "build_grid",
    "clip_polygon_area",
    "composite_loss",
    "discretize_groups",
    "equal_means_loss",
    "evaluate",
    "export_heatmap",
    "forward",
    "ha_predict",
    "individual_fairness_gap",
    "individual_fairness_loss",
    "init_params",
    "load_params",
    "load_series",
    "locate",
    "lr_at",
    "mae",
    "make_slices",
    "pairwise_loss",
    "predict_frame",
    "rasterize_features",
    "region_fairness_gap",
    "region_fairness_loss",
    "save_params",
    "spearman",
    "train_model",
    "__version__",
]
