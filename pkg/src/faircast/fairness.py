"""Group fairness for gridded demand: gap metrics and training penalties.

Cells are split per attribute into an advantaged and a disadvantaged
group by thresholding the cell's advantaged-population fraction w+.  Two
gap metrics summarize inequity over a period: the region gap compares
group per-capita demand using whole-cell membership, and the individual
gap apportions every cell's demand by its w+/w- mix instead.  Both keep
their sign; positive means the advantaged group is over-served.

Four differentiable per-frame penalties suit training: region and
individual versions of the gap (normalized by total true demand), an
equal-means penalty on group averages of per-capita demand, and a
pairwise penalty over cross-group cell pairs weighted by how similar the
cells' true per-capita demand is.  Multiple attributes combine as a
weighted sum.

Cells whose population share falls below ``p_min`` are excluded from
every sum: per-capita quantities are undefined there, and padding cells
would otherwise distort the gaps.  Loss normalizers are floored at
``y_min`` so quiet hours cannot blow the penalty up.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DegenerateGroupError, InvalidInputError
from .fileio import write_text_atomic
from .ingest import DemandTensor, DemographicField

DEFAULT_P_MIN = 1e-9
DEFAULT_Y_MIN = 1.0

LOSS_KINDS = ("region", "individual", "equal_means", "pairwise", "none")

ADVANTAGED = 1
DISADVANTAGED = -1
EXCLUDED = 0


@dataclass(frozen=True)
class GroupLabeling:
    """Per-cell group membership for one attribute at one threshold."""

    attribute: str
    labels: np.ndarray  # int8 (rows, cols): 1 advantaged, -1 disadvantaged, 0 excluded
    threshold: float


@dataclass
class FairnessConfig:
    kind: str = "none"
    weight: float = 0.0  # global lambda multiplying the composite loss
    attributes: dict[str, float] = field(default_factory=dict)  # name -> lambda_a
    thresholds: dict[str, float] = field(default_factory=dict)
    p_min: float = DEFAULT_P_MIN
    y_min: float = DEFAULT_Y_MIN

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise InvalidInputError(f"unknown fairness kind {self.kind!r}")
        if self.weight < 0:
            raise InvalidInputError(f"fairness weight must be >= 0, got {self.weight}")
        if any(lam < 0 for lam in self.attributes.values()):
            raise InvalidInputError("per-attribute weights must be >= 0")
        if self.p_min <= 0:
            raise InvalidInputError(f"p_min must be > 0, got {self.p_min}")


@dataclass
class GapReport:
    """(attribute, metric, value) rows for one evaluation period."""

    rows: list

    def to_csv(self) -> str:
        lines = ["attribute,metric,value"]
        for attribute, metric, value in self.rows:
            lines.append(f"{attribute},{metric},{value!r}")
        return "\n".join(lines) + "\n"

    def write(self, path: str) -> None:
        write_text_atomic(path, self.to_csv())


# ---------------------------------------------------------------------------
# group construction

def discretize_groups(field_: DemographicField, attribute: str, threshold: float,
                      p_min: float = DEFAULT_P_MIN) -> GroupLabeling:
    """Label cells advantaged where w+ strictly exceeds the threshold.

    Ties go to the disadvantaged side; cells under the population floor
    are excluded entirely.
    """
    if not (0.0 <= threshold <= 1.0):
        raise InvalidInputError(f"threshold must be in [0, 1], got {threshold}")
    if attribute not in field_.attributes:
        raise InvalidInputError(f"unknown attribute {attribute!r}")
    w_plus = field_.attributes[attribute]
    labels = np.where(w_plus > threshold, ADVANTAGED, DISADVANTAGED).astype(np.int8)
    labels[field_.population_share < p_min] = EXCLUDED
    return GroupLabeling(attribute, labels, threshold)


def _period_mean(pred) -> np.ndarray:
    values = pred.values if isinstance(pred, DemandTensor) else np.asarray(pred, dtype=np.float64)
    if values.ndim == 2:
        return values
    if values.ndim == 3:
        return values.mean(axis=0)
    raise InvalidInputError(f"predictions must be (T, rows, cols) or (rows, cols), got {values.shape}")


# ---------------------------------------------------------------------------
# gap metrics (plain numpy, sign-preserving)

def region_fairness_gap(pred, labels: GroupLabeling, field_: DemographicField) -> float:
    """Per-capita demand of the advantaged cells minus the disadvantaged ones."""
    mean_pred = _period_mean(pred)
    p = field_.population_share
    adv = labels.labels == ADVANTAGED
    dis = labels.labels == DISADVANTAGED
    if not adv.any() or not dis.any():
        raise DegenerateGroupError(
            f"attribute {labels.attribute!r}: a group is empty at threshold {labels.threshold}")
    p_adv, p_dis = p[adv].sum(), p[dis].sum()
    if p_adv <= 0 or p_dis <= 0:
        raise DegenerateGroupError(
            f"attribute {labels.attribute!r}: a group has zero population mass")
    return float(mean_pred[adv].sum() / p_adv - mean_pred[dis].sum() / p_dis)


def individual_fairness_gap(pred, field_: DemographicField, attribute: str,
                            p_min: float = DEFAULT_P_MIN) -> float:
    """Gap with each cell's demand apportioned by its w+/w- population mix."""
    if attribute not in field_.attributes:
        raise InvalidInputError(f"unknown attribute {attribute!r}")
    mean_pred = _period_mean(pred)
    p = field_.population_share
    include = p >= p_min
    w_plus = field_.attributes[attribute]
    w_minus = 1.0 - w_plus
    mass_plus = (p * w_plus)[include].sum()
    mass_minus = (p * w_minus)[include].sum()
    if mass_plus <= 0 or mass_minus <= 0:
        raise DegenerateGroupError(
            f"attribute {attribute!r}: one side has zero population mass")
    served_plus = (mean_pred * w_plus)[include].sum()
    served_minus = (mean_pred * w_minus)[include].sum()
    return float(served_plus / mass_plus - served_minus / mass_minus)


# ---------------------------------------------------------------------------
# differentiable per-frame losses

def _truth_normalizer(truth_t: np.ndarray, y_min: float) -> float:
    return max(float(np.asarray(truth_t).sum()), y_min)


def _masked_sum(pred_t: Tensor, mask: np.ndarray) -> Tensor:
    return (pred_t * Tensor(mask)).sum()


def region_fairness_loss(pred_t: Tensor, truth_t: np.ndarray, labels: GroupLabeling,
                         field_: DemographicField, y_min: float = DEFAULT_Y_MIN) -> Tensor:
    """|per-capita group gap| of one frame over the frame's total true demand."""
    p = field_.population_share
    adv = (labels.labels == ADVANTAGED).astype(np.float64)
    dis = (labels.labels == DISADVANTAGED).astype(np.float64)
    if adv.sum() == 0 or dis.sum() == 0:
        raise DegenerateGroupError(
            f"attribute {labels.attribute!r}: a group is empty at threshold {labels.threshold}")
    p_adv, p_dis = (p * adv).sum(), (p * dis).sum()
    if p_adv <= 0 or p_dis <= 0:
        raise DegenerateGroupError(
            f"attribute {labels.attribute!r}: a group has zero population mass")
    gap = _masked_sum(pred_t, adv) / p_adv - _masked_sum(pred_t, dis) / p_dis
    return gap.abs() / _truth_normalizer(truth_t, y_min)


def individual_fairness_loss(pred_t: Tensor, truth_t: np.ndarray,
                             field_: DemographicField, attribute: str,
                             p_min: float = DEFAULT_P_MIN,
                             y_min: float = DEFAULT_Y_MIN) -> Tensor:
    """Individual-mix version of the region loss for one frame."""
    if attribute not in field_.attributes:
        raise InvalidInputError(f"unknown attribute {attribute!r}")
    p = field_.population_share
    include = (p >= p_min).astype(np.float64)
    w_plus = field_.attributes[attribute] * include
    w_minus = (1.0 - field_.attributes[attribute]) * include
    mass_plus = (p * w_plus).sum()
    mass_minus = (p * w_minus).sum()
    if mass_plus <= 0 or mass_minus <= 0:
        raise DegenerateGroupError(
            f"attribute {attribute!r}: one side has zero population mass")
    gap = _masked_sum(pred_t, w_plus) / mass_plus - _masked_sum(pred_t, w_minus) / mass_minus
    return gap.abs() / _truth_normalizer(truth_t, y_min)


def equal_means_loss(pred_t: Tensor, truth_t: np.ndarray, labels: GroupLabeling,
                     field_: DemographicField, p_min: float = DEFAULT_P_MIN,
                     y_min: float = DEFAULT_Y_MIN) -> Tensor:
    """|group means of per-capita prediction differ| over total true demand."""
    p = field_.population_share
    adv = labels.labels == ADVANTAGED
    dis = labels.labels == DISADVANTAGED
    n_adv, n_dis = int(adv.sum()), int(dis.sum())
    if n_adv == 0 or n_dis == 0:
        raise DegenerateGroupError(
            f"attribute {labels.attribute!r}: a group is empty at threshold {labels.threshold}")
    # Per-capita prediction per cell as a linear map: mask / p on included cells.
    inv_p = np.zeros_like(p)
    np.divide(1.0, p, out=inv_p, where=p >= p_min)
    mean_adv = _masked_sum(pred_t, adv * inv_p) * (1.0 / n_adv)
    mean_dis = _masked_sum(pred_t, dis * inv_p) * (1.0 / n_dis)
    return (mean_adv - mean_dis).abs() / _truth_normalizer(truth_t, y_min)


def pairwise_loss(pred_t: Tensor, truth_t: np.ndarray, labels: GroupLabeling,
                  field_: DemographicField, p_min: float = DEFAULT_P_MIN,
                  y_min: float = DEFAULT_Y_MIN) -> Tensor:
    """Squared mean of similarity-weighted per-capita differences across groups.

    Pair weights d = exp(-(z_i - z_j)^2) come from the *true* per-capita
    demand, so cells that genuinely serve similar populations are pushed
    together hardest.  Since d is constant, the double sum collapses to a
    per-cell weighting of the predicted per-capita values, keeping the
    cost at one n+ x n- weight matrix per frame.
    """
    p = field_.population_share
    adv = labels.labels == ADVANTAGED
    dis = labels.labels == DISADVANTAGED
    n_adv, n_dis = int(adv.sum()), int(dis.sum())
    if n_adv == 0 or n_dis == 0:
        raise DegenerateGroupError(
            f"attribute {labels.attribute!r}: a group is empty at threshold {labels.threshold}")
    truth = np.asarray(truth_t, dtype=np.float64)
    inv_p = np.zeros_like(p)
    np.divide(1.0, p, out=inv_p, where=p >= p_min)
    z_true = truth * inv_p
    d = np.exp(-np.subtract.outer(z_true[adv], z_true[dis]) ** 2)
    coeff_adv = np.zeros_like(p)
    coeff_dis = np.zeros_like(p)
    coeff_adv[adv] = d.sum(axis=1)
    coeff_dis[dis] = d.sum(axis=0)
    scale = 1.0 / (n_adv * n_dis)
    total = _masked_sum(pred_t, (coeff_adv - coeff_dis) * inv_p) * scale
    normalized = total / _truth_normalizer(truth_t, y_min)
    return normalized * normalized


def composite_loss(pred_t: Tensor, truth_t: np.ndarray, config: FairnessConfig,
                   field_: DemographicField, labelings: dict[str, GroupLabeling]) -> Tensor:
    """Weighted sum of the configured per-attribute losses for one frame."""
    if config.kind == "none" or not config.attributes:
        return Tensor(0.0)
    total = None
    for attribute, lam in config.attributes.items():
        if attribute not in field_.attributes:
            raise InvalidInputError(f"unknown attribute {attribute!r}")
        if config.kind == "individual":
            term = individual_fairness_loss(pred_t, truth_t, field_, attribute,
                                            config.p_min, config.y_min)
        else:
            if attribute not in labelings:
                raise InvalidInputError(f"no group labeling for attribute {attribute!r}")
            labels = labelings[attribute]
            if config.kind == "region":
                term = region_fairness_loss(pred_t, truth_t, labels, field_, config.y_min)
            elif config.kind == "equal_means":
                term = equal_means_loss(pred_t, truth_t, labels, field_,
                                        config.p_min, config.y_min)
            else:
                term = pairwise_loss(pred_t, truth_t, labels, field_,
                                     config.p_min, config.y_min)
        term = term * lam
        total = term if total is None else total + term
    return total


def gap_report(pred, field_: DemographicField, labelings: dict[str, GroupLabeling],
               p_min: float = DEFAULT_P_MIN) -> GapReport:
    """Both gap metrics for every labeled attribute over a period."""
    rows = []
    for attribute, labels in labelings.items():
        rows.append((attribute, "region_gap",
                     region_fairness_gap(pred, labels, field_)))
        rows.append((attribute, "individual_gap",
                     individual_fairness_gap(pred, field_, attribute, p_min)))
    return GapReport(rows)
