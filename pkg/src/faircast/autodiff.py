"""Reverse-mode automatic differentiation over dense float64 arrays.

The graph is implicit: a Tensor produced by an operation keeps references
to its parents and a closure that routes the output gradient back to them.
``Tensor.backward`` topologically sorts the reachable graph and runs the
closures in reverse, accumulating into ``.grad``.  Parameters shared by
many graph branches (e.g. one weight used by every slice in a batch)
therefore accumulate their full gradient in a single backward pass.

Deliberately small: double precision only, and elementwise operations
require equal shapes or a scalar operand -- there is no general
broadcasting.  The model-specific ops it does carry are same-padding
convolution (ranks 1-3), leaky ReLU, channel concatenation, a spatial
broadcast for city-level series, and a full-window time collapse.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import InvalidInputError


class Tensor:
    """Dense float64 array with an accumulated gradient of the same shape."""

    __slots__ = ("data", "grad", "_parents", "_backprop", "_op")

    def __init__(self, data, parents=(), backprop=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = np.zeros_like(self.data)
        self._parents = tuple(parents)
        self._backprop = backprop
        self._op = op

    # -- basics ------------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise InvalidInputError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Tensor(op={self._op!r}, shape={self.shape})"

    def backward(self) -> None:
        """Backpropagate from this scalar through every reachable node."""
        if self.data.size != 1:
            raise InvalidInputError(f"backward() needs a scalar loss, got shape {self.shape}")
        order = _toposort(self)
        self.grad[...] = 1.0
        for node in reversed(order):
            if node._backprop is not None:
                node._backprop(node.grad)

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        other = _lift(other)
        _check_elementwise(self, other, "+")
        out = Tensor(self.data + other.data, (self, other), op="+")

        def backprop(g):
            _accumulate(self, g)
            _accumulate(other, g)

        out._backprop = backprop
        return out

    __radd__ = __add__

    def __mul__(self, other):
        other = _lift(other)
        _check_elementwise(self, other, "*")
        out = Tensor(self.data * other.data, (self, other), op="*")

        def backprop(g):
            _accumulate(self, g * other.data)
            _accumulate(other, g * self.data)

        out._backprop = backprop
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-_lift(other))

    def __rsub__(self, other):
        return _lift(other) + (-self)

    def __truediv__(self, other):
        other = _lift(other)
        _check_elementwise(self, other, "/")
        out = Tensor(self.data / other.data, (self, other), op="/")

        def backprop(g):
            _accumulate(self, g / other.data)
            _accumulate(other, -g * self.data / (other.data * other.data))

        out._backprop = backprop
        return out

    def __rtruediv__(self, other):
        return _lift(other) / self

    def abs(self):
        """Elementwise absolute value; subgradient 0 at the kink."""
        out = Tensor(np.abs(self.data), (self,), op="abs")
        sign = np.sign(self.data)

        def backprop(g):
            _accumulate(self, g * sign)

        out._backprop = backprop
        return out

    def sum(self):
        out = Tensor(self.data.sum(), (self,), op="sum")

        def backprop(g):
            self.grad += g

        out._backprop = backprop
        return out

    def mean(self):
        n = self.data.size
        out = Tensor(self.data.mean(), (self,), op="mean")

        def backprop(g):
            self.grad += g / n

        out._backprop = backprop
        return out

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        orig = self.data.shape
        out = Tensor(self.data.reshape(shape), (self,), op="reshape")

        def backprop(g):
            self.grad += g.reshape(orig)

        out._backprop = backprop
        return out


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_elementwise(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape == b.data.shape or a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise InvalidInputError(f"shape mismatch for {op}: {a.shape} vs {b.shape}")


def _accumulate(t: Tensor, g) -> None:
    # Scalar operands collect the sum of the broadcast gradient.
    if t.data.ndim == 0 and np.ndim(g) != 0:
        t.grad += g.sum()
    else:
        t.grad += g


def _toposort(root: Tensor):
    order, visited, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


# ---------------------------------------------------------------------------
# model operations

def conv_same(x: Tensor, kernels_t: Tensor, rank: int, bias: Tensor) -> Tensor:
    """Same-padding cross-correlation of rank 1, 2 or 3.

    x is (C_in, *spatial) with ``rank`` spatial axes, kernels_t is
    (C_out, C_in, *extent) with odd extents, bias is (C_out,).  Output is
    (C_out, *spatial): the spatial shape is preserved by zero padding.
    """
    x = _lift(x)
    kernels_t = _lift(kernels_t)
    bias = _lift(bias)
    if rank not in (1, 2, 3):
        raise InvalidInputError(f"rank must be 1, 2 or 3, got {rank}")
    if x.data.ndim != rank + 1:
        raise InvalidInputError(f"rank-{rank} input must have {rank + 1} axes, got {x.data.ndim}")
    if kernels_t.data.ndim != rank + 2:
        raise InvalidInputError(
            f"rank-{rank} kernels must have {rank + 2} axes, got {kernels_t.data.ndim}")
    if kernels_t.data.shape[1] != x.data.shape[0]:
        raise InvalidInputError(
            f"kernel input channels {kernels_t.data.shape[1]} != input channels {x.data.shape[0]}")
    if any(k % 2 == 0 for k in kernels_t.data.shape[2:]):
        raise InvalidInputError(f"kernel extents must be odd, got {kernels_t.data.shape[2:]}")
    if bias.data.shape != (kernels_t.data.shape[0],):
        raise InvalidInputError(
            f"bias shape {bias.data.shape} != ({kernels_t.data.shape[0]},)")

    out_data = kernels.conv_same_forward(x.data, kernels_t.data, bias.data)
    out = Tensor(out_data, (x, kernels_t, bias), op=f"conv{rank}d")

    def backprop(g):
        gx, gw, gb = kernels.conv_same_backward(x.data, kernels_t.data, g)
        x.grad += gx
        kernels_t.grad += gw
        bias.grad += gb

    out._backprop = backprop
    return out


def leaky_relu(x: Tensor, alpha: float = 0.01) -> Tensor:
    """max(x, alpha*x) elementwise."""
    x = _lift(x)
    out = Tensor(np.where(x.data > 0, x.data, alpha * x.data), (x,), op="leaky_relu")
    slope = np.where(x.data > 0, 1.0, alpha)

    def backprop(g):
        x.grad += g * slope

    out._backprop = backprop
    return out


def concat_channels(parts) -> Tensor:
    """Concatenate tensors along axis 0 (the channel axis)."""
    parts = [_lift(p) for p in parts]
    if not parts:
        raise InvalidInputError("concat_channels needs at least one tensor")
    tails = {p.data.shape[1:] for p in parts}
    if len(tails) != 1:
        raise InvalidInputError(f"mismatched trailing shapes in concat: {sorted(tails)}")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0), tuple(parts), op="concat")
    sizes = [p.data.shape[0] for p in parts]

    def backprop(g):
        offset = 0
        for p, n in zip(parts, sizes):
            p.grad += g[offset:offset + n]
            offset += n

    out._backprop = backprop
    return out


def spatial_broadcast(v: Tensor, rows: int, cols: int) -> Tensor:
    """Tile a (C,) vector to a spatially constant (C, rows, cols) map."""
    v = _lift(v)
    if v.data.ndim != 1:
        raise InvalidInputError(f"spatial_broadcast needs a vector, got shape {v.shape}")
    out = Tensor(np.broadcast_to(v.data[:, None, None], (v.data.shape[0], rows, cols)).copy(),
                 (v,), op="broadcast")

    def backprop(g):
        v.grad += g.sum(axis=(1, 2))

    out._backprop = backprop
    return out


def collapse_time(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Contract a (C, T) map against weights (K, C, T) into a (K,) vector."""
    x, w, b = _lift(x), _lift(w), _lift(b)
    if x.data.ndim != 2 or w.data.ndim != 3 or w.data.shape[1:] != x.data.shape:
        raise InvalidInputError(
            f"collapse_time shapes: x {x.shape}, w {w.shape} (want w = (K,) + x.shape)")
    if b.data.shape != (w.data.shape[0],):
        raise InvalidInputError(f"bias shape {b.data.shape} != ({w.data.shape[0]},)")
    out = Tensor(np.einsum("kct,ct->k", w.data, x.data) + b.data, (x, w, b), op="collapse")

    def backprop(g):
        x.grad += np.einsum("k,kct->ct", g, w.data)
        w.grad += np.einsum("k,ct->kct", g, x.data)
        b.grad += g

    out._backprop = backprop
    return out
