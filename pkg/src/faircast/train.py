"""Mini-batch training under the accuracy-plus-fairness objective.

The total loss of a batch is the mean absolute prediction error over the
batch's frames plus the global fairness weight times the mean composite
fairness penalty of those frames.  Batches are reshuffled each epoch with
a seeded generator and the trailing partial batch is kept, so a run is
fully determined by (data, config, seed) on a single thread.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as model_mod
from . import optim
from .autodiff import Tensor
from .checkpoint import save_container
from .errors import InvalidInputError, NumericError
from .fairness import FairnessConfig, composite_loss
from .fileio import write_text_atomic


@dataclass
class TrainConfig:
    epochs: int
    seed: int = 0
    batch_size: int = 32
    lr_base: float = 0.005
    lr_decay: float = 0.96
    lr_interval: int = 5000
    checkpoint_every: int = 0  # epochs between checkpoints; 0 disables
    checkpoint_path: str = ""

    def __post_init__(self):
        if self.epochs < 1:
            raise InvalidInputError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidInputError(f"batch size must be >= 1, got {self.batch_size}")


@dataclass
class TrainLog:
    """Per-epoch means of the loss components plus lr and wall time."""

    rows: list = field(default_factory=list)  # (epoch, acc, fair, lr, seconds)

    def to_csv(self) -> str:
        lines = ["epoch,acc_loss,fair_loss,lr,seconds"]
        for epoch, acc, fair, lr, seconds in self.rows:
            lines.append(f"{epoch},{acc!r},{fair!r},{lr!r},{seconds:.3f}")
        return "\n".join(lines) + "\n"

    def write(self, path: str) -> None:
        write_text_atomic(path, self.to_csv())


def batch_loss(slices, features: np.ndarray, params: model_mod.ModelParams,
               fairness: FairnessConfig, field_,
               labelings) -> tuple[Tensor, float, float]:
    """(total loss tensor, accuracy component, fairness component).

    total = acc + weight * fair, where acc is the mean |error| over the
    batch's cells and fair is the mean per-frame composite penalty.  The
    components are plain floats satisfying total = acc + weight * fair
    exactly as computed.
    """
    if not slices:
        raise InvalidInputError("empty batch")
    acc_terms = []
    fair_terms = []
    for s in slices:
        pred = model_mod.predict_frame(s, features, params)
        acc_terms.append((pred - Tensor(s.target)).abs().mean())
        if fairness.kind != "none" and fairness.attributes:
            fair_terms.append(composite_loss(pred, s.target, fairness, field_, labelings))
    inv_n = 1.0 / len(slices)
    acc = acc_terms[0]
    for term in acc_terms[1:]:
        acc = acc + term
    acc = acc * inv_n
    if fair_terms:
        fair = fair_terms[0]
        for term in fair_terms[1:]:
            fair = fair + term
        fair = fair * inv_n
        total = acc + fair * fairness.weight
    else:
        fair = Tensor(0.0)
        total = acc
    return total, acc.item(), fair.item()


def train_model(slices, features: np.ndarray, arch: model_mod.ArchConfig,
                config: TrainConfig, fairness: FairnessConfig, field_,
                labelings) -> tuple[model_mod.ModelParams, TrainLog]:
    """Seeded mini-batch Adam training; returns final params and the log."""
    if not slices:
        raise InvalidInputError("no training slices")
    params = model_mod.init_params(arch, config.seed)
    params.demand_scale = model_mod.fit_demand_scale(slices)
    state = optim.adam_init(params.tensors)
    rng = np.random.default_rng(config.seed)
    log = TrainLog()
    step = 0
    lr = config.lr_base
    for epoch in range(config.epochs):
        t0 = time.time()
        order = rng.permutation(len(slices))
        acc_sum = 0.0
        fair_sum = 0.0
        batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [slices[i] for i in order[start:start + config.batch_size]]
            total, acc, fair = batch_loss(batch, features, params, fairness,
                                          field_, labelings)
            if not math.isfinite(total.item()):
                raise NumericError(
                    f"non-finite loss at epoch {epoch} batch {batches}")
            params.zero_grad()
            total.backward()
            lr = optim.lr_at(step, config.lr_base, config.lr_decay, config.lr_interval)
            optim.adam_step(params.tensors, state, lr)
            step += 1
            acc_sum += acc
            fair_sum += fair
            batches += 1
        log.rows.append((epoch, acc_sum / batches, fair_sum / batches,
                         lr, time.time() - t0))
        if config.checkpoint_every and config.checkpoint_path \
                and (epoch + 1) % config.checkpoint_every == 0:
            save_params(config.checkpoint_path, params, extra={"epoch": epoch})
    return params, log


# ---------------------------------------------------------------------------
# checkpoint round trip

def save_params(path: str, params: model_mod.ModelParams, extra: dict | None = None) -> None:
    meta = {"kind": "model", "arch": params.config.to_meta(),
            "demand_scale": params.demand_scale}
    if extra:
        meta.update(extra)
    save_container(path, {k: t.data for k, t in params.tensors.items()}, meta)


def load_params(path: str) -> model_mod.ModelParams:
    from .checkpoint import load_container

    arrays, meta = load_container(path)
    if meta.get("kind") != "model":
        raise InvalidInputError(f"{path} is not a model checkpoint")
    arch = model_mod.ArchConfig.from_meta(meta["arch"])
    expected = set()
    for name, (shape, _) in model_mod._layer_shapes(arch).items():
        expected.add(name + ".w")
        expected.add(name + ".b")
        if name + ".w" not in arrays or arrays[name + ".w"].shape != shape:
            raise InvalidInputError(f"{path}: missing or misshapen tensor {name}.w")
    if set(arrays) != expected:
        raise InvalidInputError(f"{path}: tensor names do not match the architecture")
    tensors = {k: Tensor(v) for k, v in arrays.items()}
    return model_mod.ModelParams(arch, tensors, float(meta["demand_scale"]))
