"""Same-padding convolution kernels, the hot inner loops of the package.

Two interchangeable backends compute identical results (up to float
summation order):

* ``numba`` -- explicit loops compiled with ``@njit(cache=True)``.  This is
  the default whenever numba imports cleanly and is what makes training
  usable on a laptop.
* ``numpy`` -- a vectorized fallback built on ``sliding_window_view`` and
  ``einsum``; slower and more memory hungry but dependency-light.

Selection happens once at import via the ``FAIRCAST_BACKEND`` environment
variable: ``numba`` (require numba), ``numpy`` (force the fallback), or
unset/``auto`` (prefer numba, fall back silently).  ``benchmarks/
bench_kernels.py`` times one against the other.

All kernels operate channel-first on float64 arrays.  Ranks 1 and 2 are
routed through the rank-3 code by inserting singleton spatial axes, so
there is exactly one compiled loop nest for forward and one for backward.
Kernels must have odd extent along every convolved axis; convolution is
cross-correlation (no kernel flip) with zero padding, so outputs keep the
input's spatial shape.
"""

import os

import numpy as np

_ENV_VAR = "FAIRCAST_BACKEND"


def _pick_backend() -> str:
    choice = os.environ.get(_ENV_VAR, "auto").strip().lower() or "auto"
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        import numba  # noqa: F401  -- fail loudly if forced but missing

        return "numba"
    if choice == "auto":
        try:
            import numba  # noqa: F401

            return "numba"
        except ImportError:
            return "numpy"
    raise ValueError(f"unknown {_ENV_VAR} value: {choice!r} (use numba/numpy/auto)")


BACKEND = _pick_backend()


def active_backend() -> str:
    """Name of the convolution backend selected at import time."""
    return BACKEND


# ---------------------------------------------------------------------------
# numpy fallback

def _forward_np(x, w, b):
    # x (C, D, H, W), w (O, C, kd, kh, kw), b (O,)
    kd, kh, kw = w.shape[2], w.shape[3], w.shape[4]
    xp = np.pad(x, ((0, 0), (kd // 2, kd // 2), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kd, kh, kw), axis=(1, 2, 3))
    out = np.einsum("cdhwijk,ocijk->odhw", win, w, optimize=True)
    return out + b[:, None, None, None]


def _backward_np(x, w, gout):
    kd, kh, kw = w.shape[2], w.shape[3], w.shape[4]
    xp = np.pad(x, ((0, 0), (kd // 2, kd // 2), (kh // 2, kh // 2), (kw // 2, kw // 2)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kd, kh, kw), axis=(1, 2, 3))
    gb = gout.sum(axis=(1, 2, 3))
    gw = np.einsum("odhw,cdhwijk->ocijk", gout, win, optimize=True)
    # Input gradient: correlate gout with channel-swapped, spatially flipped
    # weights.  Valid only for odd kernels, which the wrapper enforces.
    wt = np.ascontiguousarray(w.transpose(1, 0, 2, 3, 4)[:, :, ::-1, ::-1, ::-1])
    gx = _forward_np(gout, wt, np.zeros(x.shape[0]))
    return gx, gw, gb


# ---------------------------------------------------------------------------
# numba backend

if BACKEND == "numba":
    from numba import njit

    @njit(cache=True)
    def _forward_loops(x, w, b, out):  # pragma: no cover -- compiled
        co_n, ci_n = w.shape[0], w.shape[1]
        kd, kh, kw = w.shape[2], w.shape[3], w.shape[4]
        nd, nh, nw = x.shape[1], x.shape[2], x.shape[3]
        rd, rh, rw = kd // 2, kh // 2, kw // 2
        for o in range(co_n):
            for z in range(nd):
                for y in range(nh):
                    for xx in range(nw):
                        acc = b[o]
                        for c in range(ci_n):
                            for i in range(kd):
                                iz = z + i - rd
                                if iz < 0 or iz >= nd:
                                    continue
                                for j in range(kh):
                                    iy = y + j - rh
                                    if iy < 0 or iy >= nh:
                                        continue
                                    for k in range(kw):
                                        ix = xx + k - rw
                                        if ix < 0 or ix >= nw:
                                            continue
                                        acc += w[o, c, i, j, k] * x[c, iz, iy, ix]
                        out[o, z, y, xx] = acc

    @njit(cache=True)
    def _backward_loops(x, w, gout, gx, gw, gb):  # pragma: no cover -- compiled
        co_n, ci_n = w.shape[0], w.shape[1]
        kd, kh, kw = w.shape[2], w.shape[3], w.shape[4]
        nd, nh, nw = x.shape[1], x.shape[2], x.shape[3]
        rd, rh, rw = kd // 2, kh // 2, kw // 2
        for o in range(co_n):
            for z in range(nd):
                for y in range(nh):
                    for xx in range(nw):
                        g = gout[o, z, y, xx]
                        gb[o] += g
                        for c in range(ci_n):
                            for i in range(kd):
                                iz = z + i - rd
                                if iz < 0 or iz >= nd:
                                    continue
                                for j in range(kh):
                                    iy = y + j - rh
                                    if iy < 0 or iy >= nh:
                                        continue
                                    for k in range(kw):
                                        ix = xx + k - rw
                                        if ix < 0 or ix >= nw:
                                            continue
                                        gw[o, c, i, j, k] += g * x[c, iz, iy, ix]
                                        gx[c, iz, iy, ix] += g * w[o, c, i, j, k]


# ---------------------------------------------------------------------------
# public wrappers

def _as_rank3(x, w):
    """Pad rank-1/2 arrays with singleton spatial axes so one kernel serves all ranks."""
    rank = x.ndim - 1
    while x.ndim < 4:
        x = x[:, None]
        w = w[:, :, None]
    return x, w, rank


def conv_same_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross-correlate x (C, *spatial) with w (O, C, *kernel) under zero padding.

    Output spatial shape equals the input's; bias b (O,) is added per
    output channel.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    x3, w3, rank = _as_rank3(x, w)
    if BACKEND == "numba":
        out = np.empty((w3.shape[0],) + x3.shape[1:], dtype=np.float64)
        _forward_loops(x3, w3, b, out)
    else:
        out = _forward_np(x3, w3, b)
    return out.reshape((w.shape[0],) + x.shape[1:]) if rank < 3 else out


def conv_same_backward(x: np.ndarray, w: np.ndarray, gout: np.ndarray):
    """Gradients of conv_same_forward w.r.t. input, weights, and bias."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    gout = np.ascontiguousarray(gout, dtype=np.float64)
    x3, w3, rank = _as_rank3(x, w)
    g3 = gout.reshape((w3.shape[0],) + x3.shape[1:])
    if BACKEND == "numba":
        gx = np.zeros_like(x3)
        gw = np.zeros_like(w3)
        gb = np.zeros(w3.shape[0], dtype=np.float64)
        _backward_loops(x3, w3, g3, gx, gw, gb)
    else:
        gx, gw, gb = _backward_np(x3, w3, g3)
    if rank < 3:
        return gx.reshape(x.shape), gw.reshape(w.shape), gb
    return gx, gw, gb


def warmup() -> None:
    """Trigger JIT compilation so timings/budgets exclude compile time."""
    x = np.zeros((1, 3, 3, 3))
    w = np.zeros((1, 1, 3, 3, 3))
    b = np.zeros(1)
    out = conv_same_forward(x, w, b)
    conv_same_backward(x, w, out)
