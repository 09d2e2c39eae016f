"""Test-period evaluation: error, gap metrics, rank correlation, heatmaps.

The headline question is whether predicted per-capita demand tracks how
advantaged a cell's population is.  Besides MAE and the two gap metrics,
the report carries Spearman's rho between each cell's mean per-capita
prediction and its advantaged fraction, with a two-sided p-value (exact
by permutation enumeration for n <= 8, t-approximation above).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sp_stats

from . import fairness
from .errors import InvalidInputError, UndefinedCorrelationError
from .fileio import write_bytes_atomic, write_text_atomic
from .ingest import DemandTensor

EXACT_PERMUTATION_MAX_N = 8


def mae(pred, truth) -> float:
    """Mean absolute error over every (frame, cell)."""
    a = pred.values if isinstance(pred, DemandTensor) else np.asarray(pred, dtype=np.float64)
    b = truth.values if isinstance(truth, DemandTensor) else np.asarray(truth, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.abs(a - b).mean())


def _rank_average(x: np.ndarray) -> np.ndarray:
    return sp_stats.rankdata(x, method="average")


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    return float(np.corrcoef(x, y)[0, 1])


def spearman(x, y) -> tuple[float, float]:
    """(rho, two-sided p) by average ranks and Pearson correlation of ranks.

    Ties get fractional ranks, which builds the tie correction into the
    Pearson step.  For n <= 8 the p-value enumerates all rank
    permutations exactly; larger n uses the t approximation
    t = rho * sqrt((n-2) / (1-rho^2)).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidInputError(f"spearman needs equal-length vectors, got {x.shape}, {y.shape}")
    n = x.size
    if n < 3:
        raise InvalidInputError(f"spearman needs n >= 3, got {n}")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise InvalidInputError("spearman inputs must be finite")
    if (x == x[0]).all() or (y == y[0]).all():
        raise UndefinedCorrelationError("correlation undefined for a constant input")
    rx, ry = _rank_average(x), _rank_average(y)
    # Identical or exactly mirrored rank vectors are rho = +/-1 by
    # definition; computing them floats through corrcoef loses the last ulp.
    if np.array_equal(rx, ry):
        rho = 1.0
    elif np.array_equal(rx + ry, np.full(n, n + 1.0)):
        rho = -1.0
    else:
        rho = _pearson(rx, ry)
    if n <= EXACT_PERMUTATION_MAX_N:
        p = _exact_permutation_p(rx, ry, rho)
    else:
        if abs(rho) >= 1.0:
            p = 0.0
        else:
            t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
            p = float(2.0 * sp_stats.t.sf(abs(t), n - 2))
    return rho, min(p, 1.0)


def _exact_permutation_p(rx: np.ndarray, ry: np.ndarray, rho_obs: float) -> float:
    """P(|rho| >= |observed|) over all n! orderings of one rank vector."""
    n = rx.size
    hits = 0
    total = 0
    threshold = abs(rho_obs) - 1e-12
    for perm in itertools.permutations(range(n)):
        rho = _pearson(rx, ry[list(perm)])
        if abs(rho) >= threshold:
            hits += 1
        total += 1
    return hits / total


@dataclass
class EvalReport:
    """MAE plus per-attribute gaps and rank correlation for one period."""

    mae: float
    source: str  # "prediction" or "truth"
    rows: list = field(default_factory=list)
    # rows: (metric, attribute, value, p_value-or-None)

    def to_csv(self) -> str:
        lines = ["metric,attribute,value,p_value"]
        lines.append(f"mae,,{self.mae!r},")
        for metric, attribute, value, p_value in self.rows:
            p_text = "" if p_value is None else repr(p_value)
            lines.append(f"{metric},{attribute},{value!r},{p_text}")
        return "\n".join(lines) + "\n"

    def write(self, path: str) -> None:
        write_text_atomic(path, self.to_csv())


def read_report_csv(path: str) -> EvalReport:
    """Inverse of EvalReport.write; float repr round-trips bit-exact."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != "metric,attribute,value,p_value":
        raise InvalidInputError(f"{path}: not an evaluation report")
    report = EvalReport(mae=float("nan"), source="unknown")
    for ln in lines[1:]:
        metric, attribute, value, p_text = ln.split(",")
        if metric == "mae":
            report.mae = float(value)
        else:
            report.rows.append((metric, attribute, float(value),
                                None if p_text == "" else float(p_text)))
    return report


def evaluate(pred: DemandTensor, truth: DemandTensor, field_, labelings,
             p_min: float = fairness.DEFAULT_P_MIN, source: str = "prediction") -> EvalReport:
    """Full report over a period: MAE, both gaps, and per-capita rho.

    When either correlation input is constant (e.g. predictions exactly
    proportional to population), the rho row is omitted rather than
    failing the whole report; the gap rows still tell the story.
    """
    if pred.values.shape != truth.values.shape:
        raise InvalidInputError(
            f"prediction/truth shape mismatch: {pred.values.shape} vs {truth.values.shape}")
    if pred.frames < 1:
        raise InvalidInputError("empty evaluation period")
    report = EvalReport(mae=mae(pred, truth), source=source)
    mean_pred = pred.values.mean(axis=0)
    p = field_.population_share
    include = p >= p_min
    per_capita = mean_pred[include] / p[include]
    for attribute, labels in labelings.items():
        rfg = fairness.region_fairness_gap(pred, labels, field_)
        ifg = fairness.individual_fairness_gap(pred, field_, attribute, p_min)
        report.rows.append(("region_gap", attribute, rfg, None))
        report.rows.append(("individual_gap", attribute, ifg, None))
        w_plus = field_.attributes[attribute][include]
        try:
            rho, p_value = spearman(per_capita, w_plus)
        except UndefinedCorrelationError:
            continue
        report.rows.append(("spearman_rho", attribute, rho, p_value))
    return report


# ---------------------------------------------------------------------------
# heatmap export

def export_heatmap(frame: np.ndarray, path_stem: str) -> tuple[str, str]:
    """Write raw values as CSV and an 8-bit grayscale map as binary PGM.

    Pixels scale linearly from [0, max] to [0, 255] with round-half-up;
    negative values clamp to 0 in the image only, never in the CSV.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2:
        raise InvalidInputError(f"heatmap frame must be 2-D, got shape {frame.shape}")
    if not np.isfinite(frame).all():
        raise InvalidInputError("heatmap frame must be finite")
    csv_path = path_stem + ".csv"
    pgm_path = path_stem + ".pgm"
    lines = [",".join(repr(float(v)) for v in row) for row in frame]
    write_text_atomic(csv_path, "\n".join(lines) + "\n")
    peak = float(frame.max())
    clamped = np.maximum(frame, 0.0)
    if peak > 0:
        pixels = np.floor(clamped * (255.0 / peak) + 0.5)
    else:
        pixels = np.zeros_like(frame)
    pixels = np.clip(pixels, 0, 255).astype(np.uint8)
    header = f"P5\n{frame.shape[1]} {frame.shape[0]}\n255\n".encode("ascii")
    write_bytes_atomic(pgm_path, header + pixels.tobytes())
    return csv_path, pgm_path
