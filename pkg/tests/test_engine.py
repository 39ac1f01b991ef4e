import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qcprobe.engine import (BatchNorm, BatchNormState, Conv1d, Dense, MaxPool2, NonFiniteGradientError,
                            ParamStore, ReLU, ShapeError, Tensor, Unflatten, Upsample2, adam_step,
                            batchnorm_channels, conv1d_same, dense, grad_check, kernels, masked_mse,
                            maxpool2, relu, reshape, run_layers, upsample2)
from qcprobe.engine import _pykernels
from qcprobe.engine.gradcheck import draw_off_kinks, kink_margin

from oracles import adam_reference, naive_batchnorm, naive_conv1d_same, numeric_grad

try:
    from qcprobe.engine import _ckernels
    BACKENDS = [_pykernels, _ckernels]
except ImportError:  # extension not built
    BACKENDS = [_pykernels]


def _t(a, grad=True):
    return Tensor(np.array(a, dtype=np.float64), grad)


# ------------------------------------------------------------ conv kernels

@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.BACKEND)
def test_conv_matches_triple_loop_on_random_instances(backend):
    rng = np.random.default_rng(0)
    for _ in range(100):
        bs, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 6)
        n, k = rng.integers(1, 14), rng.integers(1, 8)
        x = rng.standard_normal((bs, c, n))
        w = rng.standard_normal((o, c, k))
        b = rng.standard_normal(o)
        got = backend.conv1d_forward(x, w, b, (k - 1) // 2)
        np.testing.assert_allclose(got, naive_conv1d_same(x, w, b), rtol=0, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.BACKEND)
def test_conv_backward_matches_finite_differences(backend):
    rng = np.random.default_rng(1)
    for o in (1, 2, 7):  # narrow direct loop and the gemm path
        x = rng.standard_normal((2, 3, 11))
        w = rng.standard_normal((o, 3, 4))
        b = rng.standard_normal(o)
        dy = rng.standard_normal((2, o, 11))

        def f():
            return float((backend.conv1d_forward(x, w, b, 1) * dy).sum())

        dx, dw, db = backend.conv1d_backward(dy, x, w, 1)
        np.testing.assert_allclose(dx, numeric_grad(f, x), atol=1e-7)
        np.testing.assert_allclose(dw, numeric_grad(f, w), atol=1e-7)
        np.testing.assert_allclose(db, numeric_grad(f, b), atol=1e-7)


def test_backends_agree_on_large_layer():
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 15, 300))
    w = rng.standard_normal((30, 15, 50))
    b = rng.standard_normal(30)
    y = [m.conv1d_forward(x, w, b, 24) for m in BACKENDS]
    np.testing.assert_allclose(y[0], y[1], rtol=1e-12, atol=1e-10)
    dy = rng.standard_normal(y[0].shape)
    g = [m.conv1d_backward(dy, x, w, 24) for m in BACKENDS]
    for a, c in zip(*g):
        np.testing.assert_allclose(a, c, rtol=1e-11, atol=1e-9)


def test_even_kernel_pads_extra_zero_on_the_right():
    x = np.arange(1.0, 6.0)[None, None, :]
    w = np.array([[[1.0, 0.0]]])  # picks x[l + 0 - 0]
    y = conv1d_same(_t(x), _t(w), _t([0.0])).values
    np.testing.assert_array_equal(y, x)
    w = np.array([[[0.0, 1.0]]])  # picks x[l + 1], zero past the right edge
    y = conv1d_same(_t(x), _t(w), _t([0.0])).values
    np.testing.assert_array_equal(y[0, 0], [2, 3, 4, 5, 0])


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        conv1d_same(_t(np.zeros((1, 2, 5))), _t(np.zeros((1, 3, 3))), _t([0.0]))


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.BACKEND)
def test_maxpool_ties_route_to_first_element(backend):
    x = np.array([[[3.0, 3.0, 1.0, 2.0]]])
    y, idx = backend.maxpool2_forward(x)
    np.testing.assert_array_equal(y, [[[3.0, 2.0]]])
    dx = backend.maxpool2_backward(np.ones_like(y), idx)
    np.testing.assert_array_equal(dx, [[[1.0, 0.0, 0.0, 1.0]]])


@pytest.mark.parametrize("backend", BACKENDS, ids=lambda m: m.BACKEND)
def test_upsample_repeats_and_backward_sums(backend):
    x = np.array([[[1.0, 2.0]]])
    np.testing.assert_array_equal(backend.upsample2_forward(x), [[[1, 1, 2, 2]]])
    np.testing.assert_array_equal(backend.upsample2_backward(np.array([[[1.0, 2, 3, 4]]])), [[[3, 7]]])


def test_kernel_selection_reports_a_backend():
    assert kernels.BACKEND in ("cython", "python")


# --------------------------------------------------------------- autodiff

def test_relu_subgradient_at_zero_is_zero():
    x = _t([[[-1.0, 0.0, 2.0]]])
    y = relu(x)
    y.backward(np.ones_like(y.values))
    np.testing.assert_array_equal(x.grad, [[[0.0, 0.0, 1.0]]])


def test_maxpool_rejects_odd_length():
    with pytest.raises(ShapeError):
        maxpool2(_t(np.zeros((1, 1, 5))))


def test_batchnorm_train_matches_reference_and_updates_running_stats(rng):
    x = rng.standard_normal((4, 3, 10)) * 2 + 1
    gain, shift = rng.standard_normal(3), rng.standard_normal(3)
    state = BatchNormState(np.zeros(3), np.ones(3))
    y = batchnorm_channels(_t(x), _t(gain), _t(shift), state, "train").values
    np.testing.assert_allclose(y, naive_batchnorm(x, gain, shift), atol=1e-12)
    np.testing.assert_allclose(state.running_mean, 0.1 * x.mean(axis=(0, 2)), atol=1e-14)
    np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * x.var(axis=(0, 2)), atol=1e-14)


def test_batchnorm_eval_uses_running_stats_only(rng):
    x = rng.standard_normal((1, 2, 6))
    state = BatchNormState(np.array([1.0, -1.0]), np.array([4.0, 0.25]))
    y = batchnorm_channels(_t(x), _t([1.0, 1.0]), _t([0.0, 0.0]), state, "eval").values
    expect = (x - state.running_mean[None, :, None]) / np.sqrt(state.running_var[None, :, None] + 1e-5)
    np.testing.assert_allclose(y, expect, atol=1e-14)
    np.testing.assert_array_equal(state.running_mean, [1.0, -1.0])


def test_batchnorm_train_needs_two_samples():
    state = BatchNormState(np.zeros(1), np.ones(1))
    with pytest.raises(ValueError):
        batchnorm_channels(_t(np.zeros((1, 1, 4))), _t([1.0]), _t([0.0]), state, "train")


@pytest.mark.parametrize("mode", ["train", "eval"])
def test_batchnorm_gradients(rng, mode):
    x = rng.standard_normal((3, 2, 5))
    gain, shift = rng.standard_normal(2), rng.standard_normal(2)
    w = rng.standard_normal(x.shape)
    xt, gt, st_ = _t(x), _t(gain), _t(shift)

    def f():
        state = BatchNormState(np.full(2, 0.3), np.full(2, 1.7))
        return float((batchnorm_channels(Tensor(x), Tensor(gain), Tensor(shift), state, mode).values * w).sum())

    out = batchnorm_channels(xt, gt, st_, BatchNormState(np.full(2, 0.3), np.full(2, 1.7)), mode)
    out.backward(w)
    for t, arr in ((xt, x), (gt, gain), (st_, shift)):
        np.testing.assert_allclose(t.grad, numeric_grad(f, arr), atol=1e-7)


def test_dense_flattens_channel_major(rng):
    x = rng.standard_normal((2, 3, 4))
    w = rng.standard_normal((5, 12))
    b = rng.standard_normal(5)
    y = dense(_t(x), _t(w), _t(b)).values
    assert y.shape == (2, 5, 1)
    np.testing.assert_allclose(y[:, :, 0], x.reshape(2, 12) @ w.T + b)
    with pytest.raises(ShapeError):
        dense(_t(x), _t(rng.standard_normal((5, 11))), _t(b))


def test_dense_and_reshape_gradients(rng):
    x, w, b = rng.standard_normal((2, 3, 4)), rng.standard_normal((6, 12)), rng.standard_normal(6)
    probe = rng.standard_normal((2, 3, 2))

    def f():
        return float((reshape(dense(Tensor(x), Tensor(w), Tensor(b)), (2, 3, 2)).values * probe).sum())

    xt, wt, bt = _t(x), _t(w), _t(b)
    reshape(dense(xt, wt, bt), (2, 3, 2)).backward(probe)
    for t, arr in ((xt, x), (wt, w), (bt, b)):
        np.testing.assert_allclose(t.grad, numeric_grad(f, arr), atol=1e-7)


def test_masked_mse_value_and_zero_gradient_on_unpunished(rng):
    p, t = rng.standard_normal((2, 1, 8)), rng.standard_normal((2, 1, 8))
    mask = np.array([1, 1, 0, 0, 1, 1, 1, 1], dtype=bool)
    pt = _t(p)
    loss = masked_mse(pt, t, mask)
    expect = ((p - t) ** 2)[..., mask].sum() / (2 * mask.sum())
    assert float(loss.values) == pytest.approx(expect, rel=1e-15)
    loss.backward()
    assert np.all(pt.grad[..., ~mask] == 0.0)
    np.testing.assert_allclose(pt.grad[..., mask], 2 * (p - t)[..., mask] / (2 * mask.sum()))


def test_masked_mse_full_mask_is_plain_mse(rng):
    p, t = rng.standard_normal((3, 1, 7)), rng.standard_normal((3, 1, 7))
    assert float(masked_mse(_t(p), t, np.ones(7, bool)).values) == pytest.approx(np.mean((p - t) ** 2))


def test_masked_mse_errors():
    with pytest.raises(ValueError):
        masked_mse(_t(np.zeros((1, 1, 3))), np.zeros((1, 1, 3)), np.zeros(3, bool))
    with pytest.raises(ShapeError):
        masked_mse(_t(np.zeros((1, 1, 3))), np.zeros((1, 1, 4)), np.ones(3, bool))


def test_gradient_accumulates_over_shared_use():
    x = _t([[[1.0, -2.0]]])
    y = upsample2(x)
    z = masked_mse(y, np.zeros((1, 1, 4)), np.ones(4, bool))
    z.backward()
    # d/dx of mean((x repeated)^2) = 2 * 2x / 4
    np.testing.assert_allclose(x.grad, [[[1.0, -2.0]]])


# ---------------------------------------------------------------- layers

def _tiny_stack():
    return [Conv1d(1, 3, 5), ReLU(), BatchNorm(3), MaxPool2(), Conv1d(3, 2, 3), ReLU(), BatchNorm(2),
            Dense(2 * 8, 4), Dense(4, 2 * 8), Unflatten(2, 8), Upsample2(), Conv1d(2, 1, 5)]


def test_layer_stack_gradient_check():
    layers = _tiny_stack()
    rng = np.random.default_rng(3)
    for layer in layers:
        layer.init(rng)
    x = draw_off_kinks(layers, (3, 1, 16), rng)
    assert kink_margin(layers, x) >= 1e-3
    mask = np.ones(16, bool)
    mask[5:9] = False
    report = grad_check(layers, x, lambda out: masked_mse(out, x, mask))
    assert report.passed, report.summary()
    assert report.n_checked == sum(l.params()[k].values.size for l in layers for k in l.params()) + x.size


def test_output_shapes_are_consistent():
    layers = _tiny_stack()
    rng = np.random.default_rng(0)
    c, n = 1, 16
    for layer in layers:
        layer.init(rng)
        c, n = layer.output_shape(c, n)
    assert (c, n) == (1, 16)
    assert run_layers(layers, Tensor(np.zeros((2, 1, 16)))).shape == (2, 1, 16)


def test_glorot_init_bounds():
    conv = Conv1d(4, 6, 5)
    conv.init(np.random.default_rng(0))
    limit = np.sqrt(6.0 / (4 * 5 + 6 * 5))
    assert np.abs(conv.kernel.values).max() <= limit
    assert np.abs(conv.kernel.values).max() > 0.8 * limit
    np.testing.assert_array_equal(conv.bias.values, 0.0)


# ------------------------------------------------------------ param store

def test_param_store_canonical_names():
    store = ParamStore(_tiny_stack())
    assert store.names[:6] == ["000.bias", "000.kernel", "002.gain", "002.running_mean",
                               "002.running_var", "002.shift"]
    assert "002.running_mean" not in store.trainable
    assert store.n_parameters() == sum(t.values.size for t in store.trainable.values())


def test_param_store_set_checks_shape():
    store = ParamStore(_tiny_stack())
    with pytest.raises(ValueError):
        store.set("000.kernel", np.zeros((1, 1, 1)))
    store.set("002.running_var", np.full(3, 2.0))
    np.testing.assert_array_equal(store.get("002.running_var"), 2.0)


# ------------------------------------------------------------------- adam

def test_adam_matches_textbook_reference(rng):
    layer = Dense(3, 2)
    layer.init(rng)
    store = ParamStore([layer])
    start = store.get("000.weight").copy()
    grads = [rng.standard_normal((2, 3)) for _ in range(5)]
    for g in grads:
        adam_step(store, {"000.weight": g, "000.bias": np.zeros(2)}, lr=0.01)
    np.testing.assert_allclose(store.get("000.weight"), adam_reference(start, grads, lr=0.01), atol=1e-15)
    assert store.t == 5


def test_adam_first_step_moves_by_lr():
    layer = Dense(2, 1)
    layer.init(np.random.default_rng(0))
    store = ParamStore([layer])
    w0 = store.get("000.weight").copy()
    adam_step(store, {"000.weight": np.array([[3.0, -0.5]]), "000.bias": np.array([1.0])}, lr=1e-3)
    np.testing.assert_allclose(store.get("000.weight") - w0, [[-1e-3, 1e-3]], rtol=1e-6)


def test_adam_rejects_non_finite_gradients():
    layer = Dense(2, 1)
    store = ParamStore([layer])
    with pytest.raises(NonFiniteGradientError) as err:
        adam_step(store, {"000.weight": np.array([[np.nan, 0.0]]), "000.bias": np.zeros(1)})
    assert err.value.names == ["000.weight"]
    assert store.t == 0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 4), st.integers(1, 9), st.integers(1, 6),
       st.integers(0, 2**32 - 1))
def test_conv_property_linear_in_input(bs, c, o, n, k, seed):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.standard_normal((2, bs, c, n))
    w = rng.standard_normal((o, c, k))
    zero = np.zeros(o)
    f = lambda x: kernels.conv1d_forward(x, w, zero, (k - 1) // 2)
    np.testing.assert_allclose(f(x1 + 2 * x2), f(x1) + 2 * f(x2), atol=1e-10)
