"""Adam optimizer and the staircase learning-rate schedule."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import InvalidInputError


def lr_at(step: int, base: float = 0.005, decay: float = 0.96, interval: int = 5000) -> float:
    """Learning rate after ``step`` optimizer updates (staircase decay).

    The rate is constant within each interval and drops by the decay
    factor at every interval boundary: base * decay ** (step // interval).
    """
    if step < 0:
        raise InvalidInputError(f"step must be >= 0, got {step}")
    if interval <= 0:
        raise InvalidInputError(f"interval must be positive, got {interval}")
    return base * decay ** (step // interval)


class AdamState:
    """Per-parameter first/second moment estimates plus the update count."""

    __slots__ = ("m", "v", "t", "beta1", "beta2", "eps")

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.t = 0
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps


def adam_init(params: dict[str, Tensor], beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> AdamState:
    return AdamState(params, beta1, beta2, eps)


def adam_step(params: dict[str, Tensor], state: AdamState, lr: float) -> None:
    """Apply one in-place Adam update from the gradients currently held."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for key, p in params.items():
        g = p.grad
        m = state.m[key]
        v = state.v[key]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / bias1
        v_hat = v / bias2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
