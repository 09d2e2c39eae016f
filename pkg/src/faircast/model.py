"""Three-stream convolutional demand predictor and a seasonal baseline.

The predictor fuses three inputs for one target frame: the demand history
window through stacked 3D convolutions (closed by a 2D convolution that
reads the time axis as channels), city-level series through 1D
convolutions collapsed over time and broadcast across space, and static
urban feature maps through 2D convolutions.  The fused channel stack runs
through a small convolutional head ending in one linear map of the grid.

Demand is scaled by the training maximum before entering the network and
predictions are rescaled on the way out, so losses and fairness weights
operate in original demand units regardless of dataset scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidInputError
from .ingest import DAY_S, HOUR_S, DemandTensor, TemporalSlice


@dataclass(frozen=True)
class ArchConfig:
    rows: int
    cols: int
    m_series: int
    n_features: int
    window: int = 168
    filters_3d: tuple = (16, 32, 1)
    kernel: int = 3
    c3: int = 8
    c2: int = 4
    c1: int = 4
    head_channels: int = 8
    head_layers: int = 2

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1 or self.window < 1:
            raise InvalidInputError("rows, cols and window must be >= 1")
        if self.m_series < 0 or self.n_features < 0:
            raise InvalidInputError("series/feature counts must be >= 0")
        if not self.filters_3d or self.filters_3d[-1] != 1:
            raise InvalidInputError(
                f"filters_3d must end in 1 (the reduction layer), got {self.filters_3d}")
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise InvalidInputError(f"kernel size must be odd, got {self.kernel}")
        if min(self.c3, self.c2, self.c1, self.head_channels) < 1 or self.head_layers < 1:
            raise InvalidInputError("stream widths and head layer count must be >= 1")

    def to_meta(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "m_series": self.m_series,
                "n_features": self.n_features, "window": self.window,
                "filters_3d": list(self.filters_3d), "kernel": self.kernel,
                "c3": self.c3, "c2": self.c2, "c1": self.c1,
                "head_channels": self.head_channels, "head_layers": self.head_layers}

    @classmethod
    def from_meta(cls, meta: dict) -> "ArchConfig":
        meta = dict(meta)
        meta["filters_3d"] = tuple(meta["filters_3d"])
        return cls(**meta)


@dataclass
class ModelParams:
    """Named parameter tensors plus the demand scale they were trained at."""

    config: ArchConfig
    tensors: dict[str, Tensor]
    demand_scale: float = 1.0

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def copy(self) -> "ModelParams":
        clone = {k: Tensor(t.data.copy()) for k, t in self.tensors.items()}
        return ModelParams(self.config, clone, self.demand_scale)


def _layer_shapes(config: ArchConfig):
    """Name -> (weight shape, fan_in) for every layer, in forward order."""
    k = config.kernel
    shapes = {}
    prev = 1
    for i, f in enumerate(config.filters_3d):
        shapes[f"s3.conv{i}"] = ((f, prev, k, k, k), prev * k * k * k)
        prev = f
    shapes["s3.close"] = ((config.c3, config.window, k, k), config.window * k * k)
    shapes["s1.conv0"] = ((config.c1, config.m_series, k), config.m_series * k)
    shapes["s1.conv1"] = ((config.c1, config.c1, k), config.c1 * k)
    shapes["s1.collapse"] = ((config.c1, config.c1, config.window), config.c1 * config.window)
    shapes["s2.conv0"] = ((config.c2, config.n_features, k, k), config.n_features * k * k)
    shapes["s2.conv1"] = ((config.c2, config.c2, k, k), config.c2 * k * k)
    fused = config.c3 + config.c2 + config.c1
    prev = fused
    for i in range(config.head_layers):
        out = 1 if i == config.head_layers - 1 else config.head_channels
        shapes[f"head.conv{i}"] = ((out, prev, k, k), prev * k * k)
        prev = out
    return shapes


def init_params(config: ArchConfig, seed: int) -> ModelParams:
    """Fan-in-scaled uniform weights, zero biases, deterministic in seed."""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, (shape, fan_in) in _layer_shapes(config).items():
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        tensors[name + ".w"] = Tensor(rng.uniform(-bound, bound, size=shape))
        tensors[name + ".b"] = Tensor(np.zeros(shape[0]))
    return ModelParams(config, tensors)


def parameter_count(config: ArchConfig) -> int:
    return sum(int(np.prod(shape)) + shape[0] for shape, _ in _layer_shapes(config).values())


# ---------------------------------------------------------------------------
# streams

def stream3d(history: Tensor, params: ModelParams) -> Tensor:
    """(1, window, rows, cols) history -> (c3, rows, cols) feature maps."""
    cfg = params.config
    if history.shape != (1, cfg.window, cfg.rows, cfg.cols):
        raise InvalidInputError(
            f"history shape {history.shape} != (1, {cfg.window}, {cfg.rows}, {cfg.cols})")
    x = history
    for i in range(len(cfg.filters_3d)):
        x = ad.conv_same(x, params.tensors[f"s3.conv{i}.w"], 3, params.tensors[f"s3.conv{i}.b"])
        x = ad.leaky_relu(x)
    # The final filter count is 1, so dropping that axis reads the time
    # axis as channels for the closing 2D convolution.
    x = x.reshape(cfg.window, cfg.rows, cfg.cols)
    x = ad.conv_same(x, params.tensors["s3.close.w"], 2, params.tensors["s3.close.b"])
    return ad.leaky_relu(x)


def stream1d(series: Tensor, params: ModelParams) -> Tensor:
    """(m_series, window) city series -> spatially constant (c1, rows, cols)."""
    cfg = params.config
    if series.shape != (cfg.m_series, cfg.window):
        raise InvalidInputError(
            f"series shape {series.shape} != ({cfg.m_series}, {cfg.window})")
    x = ad.conv_same(series, params.tensors["s1.conv0.w"], 1, params.tensors["s1.conv0.b"])
    x = ad.leaky_relu(x)
    x = ad.conv_same(x, params.tensors["s1.conv1.w"], 1, params.tensors["s1.conv1.b"])
    x = ad.leaky_relu(x)
    vec = ad.collapse_time(x, params.tensors["s1.collapse.w"], params.tensors["s1.collapse.b"])
    return ad.spatial_broadcast(vec, cfg.rows, cfg.cols)


def stream2d(features: Tensor, params: ModelParams) -> Tensor:
    """(n_features, rows, cols) static maps -> (c2, rows, cols)."""
    cfg = params.config
    if features.shape != (cfg.n_features, cfg.rows, cfg.cols):
        raise InvalidInputError(
            f"features shape {features.shape} != ({cfg.n_features}, {cfg.rows}, {cfg.cols})")
    x = ad.conv_same(features, params.tensors["s2.conv0.w"], 2, params.tensors["s2.conv0.b"])
    x = ad.leaky_relu(x)
    x = ad.conv_same(x, params.tensors["s2.conv1.w"], 2, params.tensors["s2.conv1.b"])
    return ad.leaky_relu(x)


def forward(history: Tensor, series: Tensor, features: Tensor,
            params: ModelParams) -> Tensor:
    """Fused prediction of the next frame, shape (rows, cols), unscaled."""
    cfg = params.config
    fused = ad.concat_channels([
        stream3d(history, params),
        stream2d(features, params),
        stream1d(series, params),
    ])
    x = fused
    for i in range(cfg.head_layers):
        x = ad.conv_same(x, params.tensors[f"head.conv{i}.w"], 2,
                         params.tensors[f"head.conv{i}.b"])
        if i < cfg.head_layers - 1:
            x = ad.leaky_relu(x)
    return x.reshape(cfg.rows, cfg.cols)


def predict_frame(slice_: TemporalSlice, features: np.ndarray,
                  params: ModelParams) -> Tensor:
    """Forward pass in original demand units: scale in, predict, scale out."""
    cfg = params.config
    scale = params.demand_scale
    history = Tensor(slice_.history.reshape(1, cfg.window, cfg.rows, cfg.cols) / scale)
    out = forward(history, Tensor(slice_.history_1d), Tensor(features), params)
    return out * scale


def fit_demand_scale(slices) -> float:
    """Max demand across histories and targets; 1.0 for an all-zero set."""
    peak = 0.0
    for s in slices:
        peak = max(peak, float(s.history.max(initial=0.0)), float(s.target.max(initial=0.0)))
    return peak if peak > 0 else 1.0


# ---------------------------------------------------------------------------
# seasonal baseline

def ha_predict(history: DemandTensor, target_time: int) -> np.ndarray:
    """Mean of all prior frames sharing hour-of-day and day-of-week.

    ``target_time`` is UTC seconds; only frames strictly before it are
    averaged.  No matching prior frame is an error, not a zero frame.
    """
    if history.interval_s != HOUR_S:
        raise InvalidInputError("seasonal baseline requires hourly data")
    want_hour = (target_time // HOUR_S) % 24
    want_day = (target_time // DAY_S) % 7
    times = history.start_time + np.arange(history.frames, dtype=np.int64) * HOUR_S
    match = ((times < target_time)
             & ((times // HOUR_S) % 24 == want_hour)
             & ((times // DAY_S) % 7 == want_day))
    if not match.any():
        raise InvalidInputError(
            f"no prior frame matches hour/day pattern of timestamp {target_time}")
    return history.values[match].mean(axis=0)
