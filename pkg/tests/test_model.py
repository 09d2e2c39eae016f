import numpy as np
import pytest

from faircast import autodiff as ad
from faircast.autodiff import Tensor
from faircast.errors import InvalidInputError
from faircast.ingest import DemandTensor, TemporalSlice
from faircast.model import (
    ArchConfig,
    ModelParams,
    _layer_shapes,
    fit_demand_scale,
    forward,
    ha_predict,
    init_params,
    parameter_count,
    predict_frame,
    stream1d,
    stream2d,
    stream3d,
)
from faircast.optim import adam_init, adam_step

T0 = 1704067200  # 2024-01-01T00:00:00Z, a Monday

TINY = ArchConfig(rows=3, cols=4, m_series=2, n_features=2, window=5,
                  filters_3d=(2, 1), kernel=3, c3=2, c2=2, c1=2,
                  head_channels=3, head_layers=2)


def make_inputs(cfg, rng):
    history = Tensor(rng.standard_normal((1, cfg.window, cfg.rows, cfg.cols)))
    series = Tensor(rng.standard_normal((cfg.m_series, cfg.window)))
    features = Tensor(rng.standard_normal((cfg.n_features, cfg.rows, cfg.cols)))
    return history, series, features


def test_arch_config_validation():
    with pytest.raises(InvalidInputError):
        ArchConfig(rows=0, cols=1, m_series=1, n_features=1)
    with pytest.raises(InvalidInputError):
        ArchConfig(rows=1, cols=1, m_series=1, n_features=1, filters_3d=(4, 2))
    with pytest.raises(InvalidInputError):
        ArchConfig(rows=1, cols=1, m_series=1, n_features=1, kernel=4)
    with pytest.raises(InvalidInputError):
        ArchConfig(rows=1, cols=1, m_series=1, n_features=1, head_layers=0)


def test_arch_config_meta_round_trip():
    assert ArchConfig.from_meta(TINY.to_meta()) == TINY


def test_init_is_deterministic_in_seed():
    a = init_params(TINY, seed=7)
    b = init_params(TINY, seed=7)
    c = init_params(TINY, seed=8)
    assert set(a.tensors) == set(b.tensors)
    for name in a.tensors:
        np.testing.assert_array_equal(a.tensors[name].data, b.tensors[name].data)
    assert any(not np.array_equal(a.tensors[n].data, c.tensors[n].data) for n in a.tensors)


def test_init_biases_zero_and_weights_bounded():
    params = init_params(TINY, seed=0)
    shapes = _layer_shapes(TINY)
    for layer, (shape, fan_in) in shapes.items():
        w = params.tensors[layer + ".w"].data
        b = params.tensors[layer + ".b"].data
        assert w.shape == shape
        np.testing.assert_array_equal(b, np.zeros(shape[0]))
        assert np.abs(w).max() <= 1.0 / np.sqrt(fan_in)


def test_parameter_count_matches_shape_walk():
    total = 0
    k = TINY.kernel
    # Independent walk of the architecture as documented.
    layers = [
        (2, 1, k, k, k), (1, 2, k, k, k),       # 3D stack
        (TINY.c3, TINY.window, k, k),           # closing 2D conv
        (TINY.c1, TINY.m_series, k), (TINY.c1, TINY.c1, k),
        (TINY.c1, TINY.c1, TINY.window),        # time collapse
        (TINY.c2, TINY.n_features, k, k), (TINY.c2, TINY.c2, k, k),
        (TINY.head_channels, TINY.c3 + TINY.c2 + TINY.c1, k, k),
        (1, TINY.head_channels, k, k),
    ]
    for shape in layers:
        total += int(np.prod(shape)) + shape[0]
    assert parameter_count(TINY) == total
    params = init_params(TINY, seed=0)
    assert sum(t.data.size for t in params.tensors.values()) == total


def test_zero_weights_give_zero_output(rng):
    params = init_params(TINY, seed=0)
    for t in params.tensors.values():
        t.data[...] = 0.0
    out = forward(*make_inputs(TINY, rng), params)
    np.testing.assert_array_equal(out.data, np.zeros((TINY.rows, TINY.cols)))


def test_forward_shape_and_determinism(rng):
    params = init_params(TINY, seed=3)
    inputs = make_inputs(TINY, rng)
    out1 = forward(*inputs, params)
    out2 = forward(*inputs, params)
    assert out1.shape == (TINY.rows, TINY.cols)
    np.testing.assert_array_equal(out1.data, out2.data)


def test_stream1d_output_is_spatially_constant(rng):
    params = init_params(TINY, seed=1)
    series = Tensor(rng.standard_normal((TINY.m_series, TINY.window)))
    out = stream1d(series, params)
    assert out.shape == (TINY.c1, TINY.rows, TINY.cols)
    for ch in out.data:
        assert ch.max() == ch.min()


def test_stream1d_matches_hand_rolled_forward(rng):
    params = init_params(TINY, seed=2)
    series = rng.standard_normal((TINY.m_series, TINY.window))
    out = stream1d(Tensor(series), params)

    def conv1d(x, w, b):
        co, ci, k = w.shape
        pad = k // 2
        xp = np.pad(x, ((0, 0), (pad, pad)))
        res = np.zeros((co, x.shape[1]))
        for o in range(co):
            for t in range(x.shape[1]):
                res[o, t] = (xp[:, t:t + k] * w[o]).sum() + b[o]
        return res

    def leaky(x):
        return np.where(x > 0, x, 0.01 * x)

    t = params.tensors
    x = leaky(conv1d(series, t["s1.conv0.w"].data, t["s1.conv0.b"].data))
    x = leaky(conv1d(x, t["s1.conv1.w"].data, t["s1.conv1.b"].data))
    vec = np.einsum("kct,ct->k", t["s1.collapse.w"].data, x) + t["s1.collapse.b"].data
    expect = np.broadcast_to(vec[:, None, None], (TINY.c1, TINY.rows, TINY.cols))
    np.testing.assert_allclose(out.data, expect, rtol=1e-12)


def test_stream2d_identity_kernel_passes_features_through(rng):
    params = init_params(TINY, seed=0)
    feats = np.abs(rng.standard_normal((TINY.n_features, TINY.rows, TINY.cols))) + 0.1
    # Both 2D convs as per-channel identities: positive inputs survive the
    # leaky activations untouched.
    for layer in ("s2.conv0", "s2.conv1"):
        w = params.tensors[layer + ".w"]
        w.data[...] = 0.0
        for o in range(min(w.data.shape[0], w.data.shape[1])):
            w.data[o, o, 1, 1] = 1.0
        params.tensors[layer + ".b"].data[...] = 0.0
    out = stream2d(Tensor(feats), params)
    np.testing.assert_allclose(out.data, feats[:TINY.c2], rtol=1e-12)


def test_stream3d_shape_and_input_validation(rng):
    params = init_params(TINY, seed=0)
    history = Tensor(rng.standard_normal((1, TINY.window, TINY.rows, TINY.cols)))
    assert stream3d(history, params).shape == (TINY.c3, TINY.rows, TINY.cols)
    with pytest.raises(InvalidInputError):
        stream3d(Tensor(rng.standard_normal((1, 2, TINY.rows, TINY.cols))), params)
    with pytest.raises(InvalidInputError):
        stream1d(Tensor(rng.standard_normal((5, TINY.window))), params)
    with pytest.raises(InvalidInputError):
        stream2d(Tensor(rng.standard_normal((9, TINY.rows, TINY.cols))), params)


def test_receptive_field_grows_with_depth(rng):
    # A pulse at one cell must influence the prediction only within the
    # head+streams receptive field; a far-away cell stays untouched when
    # the grid is large enough.
    cfg = ArchConfig(rows=11, cols=11, m_series=1, n_features=1, window=3,
                     filters_3d=(1,), kernel=3, c3=1, c2=1, c1=1,
                     head_channels=1, head_layers=1)
    params = init_params(cfg, seed=4)
    rng_local = np.random.default_rng(0)
    history = rng_local.standard_normal((1, cfg.window, cfg.rows, cfg.cols))
    series = rng_local.standard_normal((cfg.m_series, cfg.window))
    features = rng_local.standard_normal((cfg.n_features, cfg.rows, cfg.cols))
    base = forward(Tensor(history), Tensor(series), Tensor(features), params).data
    bumped = history.copy()
    bumped[0, 1, 5, 5] += 10.0
    out = forward(Tensor(bumped), Tensor(series), Tensor(features), params).data
    diff = np.abs(out - base)
    # conv3d (k=3) + closing conv2d (k=3) + head conv (k=3): radius 3.
    assert diff[5, 5] > 0
    assert np.all(diff[5, 9:] == 0.0)
    assert np.all(diff[0, :2] == 0.0)


def test_every_stream_receives_gradient(rng):
    params = init_params(TINY, seed=5)
    history, series, features = make_inputs(TINY, rng)
    loss = forward(history, series, features, params).abs().sum()
    loss.backward()
    streams = {"s3.": False, "s2.": False, "s1.": False, "head.": False}
    for name, t in params.tensors.items():
        for prefix in streams:
            if name.startswith(prefix) and np.any(t.grad != 0):
                streams[prefix] = True
    assert all(streams.values()), f"gradient-dead streams: {streams}"


def test_one_adam_step_reduces_loss(rng):
    params = init_params(TINY, seed=6)
    history, series, features = make_inputs(TINY, rng)
    target = rng.standard_normal((TINY.rows, TINY.cols))

    def loss_value():
        return (forward(history, series, features, params) - Tensor(target)).abs().mean()

    state = adam_init(params.tensors)
    before = loss_value()
    params.zero_grad()
    before.backward()
    adam_step(params.tensors, state, lr=0.005)
    after = loss_value()
    assert after.item() < before.item()


def test_predict_frame_scales_in_and_out(rng):
    params = init_params(TINY, seed=7)
    history = np.abs(rng.standard_normal((TINY.window, TINY.rows, TINY.cols))) * 50.0
    series = rng.standard_normal((TINY.m_series, TINY.window))
    features = rng.standard_normal((TINY.n_features, TINY.rows, TINY.cols))
    sl = TemporalSlice(history=history, history_1d=series,
                       target=history[-1], target_index=TINY.window)

    params.demand_scale = 1.0
    unscaled_in = forward(Tensor(history.reshape(1, TINY.window, TINY.rows, TINY.cols) / 25.0),
                          Tensor(series), Tensor(features), params)
    params.demand_scale = 25.0
    out = predict_frame(sl, features, params)
    np.testing.assert_allclose(out.data, unscaled_in.data * 25.0, rtol=1e-12)


def test_fit_demand_scale():
    h = np.zeros((3, 2, 2))
    h[1, 0, 1] = 7.0
    t = np.zeros((2, 2))
    slices = [TemporalSlice(history=h, history_1d=np.zeros((1, 3)), target=t, target_index=3)]
    assert fit_demand_scale(slices) == 7.0
    t2 = np.full((2, 2), 9.0)
    slices.append(TemporalSlice(history=h, history_1d=np.zeros((1, 3)), target=t2,
                                target_index=4))
    assert fit_demand_scale(slices) == 9.0
    empty = [TemporalSlice(history=np.zeros((3, 2, 2)), history_1d=np.zeros((1, 3)),
                           target=t, target_index=3)]
    assert fit_demand_scale(empty) == 1.0


# -- seasonal baseline -------------------------------------------------------

def test_ha_predict_averages_matching_frames():
    frames = 15 * 24
    values = np.zeros((frames, 1, 1))
    # Encode the frame index so matched frames are identifiable.
    values[:, 0, 0] = np.arange(frames)
    history = DemandTensor(values, start_time=T0)
    # Target: hour 5 of the Monday after two full weeks.
    target_time = T0 + 14 * 86400 + 5 * 3600
    out = ha_predict(history, target_time)
    # Matching prior frames: hour 5 on days 0 and 7.
    assert out[0, 0] == pytest.approx((5 + (7 * 24 + 5)) / 2.0)


def test_ha_predict_weekly_periodic_signal_is_exact():
    week = 7 * 24
    base = np.arange(week, dtype=np.float64) + 1.0
    values = np.tile(base, 3)[:, None, None]  # three identical weeks
    history = DemandTensor(values, start_time=T0)
    for k in (0, 13, 100):
        target_time = T0 + (2 * week + k) * 3600
        out = ha_predict(history, target_time)
        assert out[0, 0] == pytest.approx(base[k % week], rel=1e-15)


def test_ha_predict_requires_a_matching_frame():
    values = np.ones((24, 1, 1))
    history = DemandTensor(values, start_time=T0)
    with pytest.raises(InvalidInputError, match="no prior frame"):
        ha_predict(history, T0 + 86400 + 3600)  # Tuesday, no Tuesday in history


def test_ha_predict_rejects_non_hourly():
    history = DemandTensor(np.ones((4, 1, 1)), start_time=T0, interval_s=1800)
    with pytest.raises(InvalidInputError, match="hourly"):
        ha_predict(history, T0 + 7200)


def test_model_params_copy_is_deep():
    params = init_params(TINY, seed=0)
    clone = params.copy()
    name = next(iter(params.tensors))
    clone.tensors[name].data[...] = 123.0
    assert not np.array_equal(params.tensors[name].data, clone.tensors[name].data)
    assert clone.demand_scale == params.demand_scale
