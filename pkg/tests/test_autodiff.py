import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpnet.autodiff import BatchNormState, Parameter, Tensor, l2_penalty, no_grad, sgd_step, zero_grad
from kpnet.autodiff import functional as F
from kpnet.autodiff.gradcheck import check_gradients, relative_error
from kpnet.errors import ConfigError, DataError, ShapeError


def t(a, grad=False, dtype=np.float64):
    return Tensor(np.asarray(a, dtype=dtype), requires_grad=grad)


# conv2d


def test_conv_output_shape():
    out = F.conv2d(t(np.ones((1, 1, 4, 4))), t(np.ones((1, 1, 3, 3))))
    assert out.shape == (1, 1, 2, 2)


def test_conv_strided_padded_shape():
    out = F.conv2d(t(np.ones((2, 3, 7, 5))), t(np.ones((4, 3, 3, 3))), stride=2, pad=1)
    assert out.shape == (2, 4, 4, 3)


def test_conv_zero_input_gives_zero_output():
    rng = np.random.default_rng(0)
    out = F.conv2d(t(np.zeros((2, 3, 5, 5))), t(rng.normal(size=(4, 3, 3, 3))), 1, 1)
    assert not out.data.any()


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 2, 5, 6))
    w = rng.normal(size=(3, 2, 3, 2))
    stride, pad = 2, 1
    out = F.conv2d(t(x), t(w), stride, pad).data
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ref = np.zeros_like(out)
    for n in range(2):
        for o in range(3):
            for i in range(out.shape[2]):
                for j in range(out.shape[3]):
                    patch = xp[n, :, i * stride : i * stride + 3, j * stride : j * stride + 2]
                    ref[n, o, i, j] = (patch * w[o]).sum()
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)


def test_conv_spec_gradient_case_float32():
    rng = np.random.default_rng(2)
    x = t(rng.normal(size=(1, 2, 5, 5)), True, np.float32)
    w = t(rng.normal(size=(3, 2, 3, 3)), True, np.float32)
    errs = check_gradients(lambda a, b: F.conv2d(a, b, 2, 1), [x, w], h=1e-3)
    assert max(errs) < 1e-3


def test_conv_channel_mismatch_is_shape_error():
    with pytest.raises(ShapeError):
        F.conv2d(t(np.ones((1, 2, 4, 4))), t(np.ones((1, 3, 3, 3))))


def test_conv_empty_output_is_config_error():
    with pytest.raises(ConfigError):
        F.conv2d(t(np.ones((1, 1, 2, 2))), t(np.ones((1, 1, 3, 3))))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_conv_and_dense_are_linear(seed, a, b):
    rng = np.random.default_rng(seed)
    x1, x2 = rng.normal(size=(2, 2, 5, 5)), rng.normal(size=(2, 2, 5, 5))
    w1, w2 = rng.normal(size=(3, 2, 3, 3)), rng.normal(size=(3, 2, 3, 3))
    conv = lambda x, w: F.conv2d(t(x), t(w), 1, 1).data  # noqa: E731
    lhs = conv(a * x1 + b * x2, w1)
    rhs = a * conv(x1, w1) + b * conv(x2, w1)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-9)
    np.testing.assert_allclose(conv(x1, a * w1 + b * w2), a * conv(x1, w1) + b * conv(x1, w2), rtol=1e-6, atol=1e-9)
    d1, d2, dw = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(4, 2))
    dense = lambda x, w: F.dense(t(x), t(w)).data  # noqa: E731
    np.testing.assert_allclose(dense(a * d1 + b * d2, dw), a * dense(d1, dw) + b * dense(d2, dw), rtol=1e-6, atol=1e-9)


# batchnorm


def test_batchnorm_train_normalizes():
    rng = np.random.default_rng(3)
    x = t(rng.normal(3, 2, size=(8, 4, 3, 3)))
    state = BatchNormState(4, np.float64)
    out = F.batchnorm(x, t(np.ones(4)), t(np.zeros(4)), state, training=True).data
    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-4)
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-4)


def test_batchnorm_eval_is_affine_with_unit_stats():
    state = BatchNormState(2, np.float64)  # running mean 0, var 1
    x = np.arange(8, dtype=np.float64).reshape(1, 2, 2, 2)
    out = F.batchnorm(t(x), t([2.0, 2.0]), t([3.0, 3.0]), state, training=False, eps=0.0).data
    np.testing.assert_allclose(out, 2 * x + 3)


def test_batchnorm_updates_running_state_only_in_training():
    rng = np.random.default_rng(4)
    x = t(rng.normal(5, 1, size=(6, 3, 2, 2)))
    state = BatchNormState(3, np.float64)
    F.batchnorm(x, t(np.ones(3)), t(np.zeros(3)), state, training=False)
    assert not state.running_mean.any()
    F.batchnorm(x, t(np.ones(3)), t(np.zeros(3)), state, training=True)
    mu = x.data.mean(axis=(0, 2, 3))
    np.testing.assert_allclose(state.running_mean, 0.1 * mu)
    unbiased = x.data.var(axis=(0, 2, 3), ddof=1)
    np.testing.assert_allclose(state.running_var, 0.9 + 0.1 * unbiased)


def test_batchnorm_single_sample_constant_channel_is_finite():
    x = t(np.full((1, 2, 1, 1), 4.0), True)
    out = F.batchnorm(x, t(np.ones(2), True), t(np.zeros(2), True), BatchNormState(2, np.float64), True)
    assert np.isfinite(out.data).all()
    F.sum(out).backward()
    assert np.isfinite(x.grad).all()


@pytest.mark.parametrize("training", [True, False])
def test_batchnorm_gradients(training):
    rng = np.random.default_rng(5)
    x = t(rng.normal(size=(4, 3, 2, 2)), True)
    g, b = t(rng.normal(size=3), True), t(rng.normal(size=3), True)
    state = BatchNormState(3, np.float64)
    state.running_var[...] = rng.uniform(0.5, 2, 3)

    def fn(x, g, b):
        s = BatchNormState(3, np.float64)
        s.running_mean[...], s.running_var[...] = state.running_mean, state.running_var
        return F.batchnorm(x, g, b, s, training)

    assert max(check_gradients(fn, [x, g, b], h=1e-6)) < 1e-5


# activations and pooling


def test_leaky_relu_definition():
    np.testing.assert_allclose(F.leaky_relu(t([-2.0, 0.0, 3.0]), 0.25).data, [-0.5, 0.0, 3.0])


def test_leaky_relu_slope_one_is_identity():
    x = np.array([-2.0, -0.1, 0.0, 4.0])
    np.testing.assert_array_equal(F.leaky_relu(t(x), 1.0).data, x)


def test_relu_zeroes_negatives():
    np.testing.assert_array_equal(F.relu(t([-1.0, 2.0])).data, [0.0, 2.0])


def test_maxpool_example():
    out = F.maxpool2d(t([[[[1.0, 2.0], [3.0, 4.0]]]]), 2, 2)
    np.testing.assert_array_equal(out.data, [[[[4.0]]]])


def test_maxpool_window_too_large():
    with pytest.raises(ConfigError):
        F.maxpool2d(t(np.ones((1, 1, 2, 2))), 3)


def test_global_avgpool_of_constant():
    out = F.global_avgpool(t(np.full((2, 3, 4, 5), 1.75)))
    np.testing.assert_allclose(out.data, 1.75)


# dense and loss


def test_dense_identity_and_bias():
    x = np.arange(6, dtype=np.float64).reshape(2, 3)
    np.testing.assert_array_equal(F.dense(t(x), t(np.eye(3)), t(np.zeros(3))).data, x)
    out = F.dense(t(x), t(np.zeros((3, 2))), t([1.5, -2.0])).data
    np.testing.assert_array_equal(out, [[1.5, -2.0], [1.5, -2.0]])


def test_cross_entropy_uniform_logits():
    loss = F.softmax_cross_entropy(t(np.zeros((4, 10))), [0, 3, 9, 5])
    assert float(loss.data) == pytest.approx(math.log(10), abs=1e-6)
    assert float(loss.data) == pytest.approx(2.302585, abs=1e-6)


def test_cross_entropy_confident_correct_is_near_zero():
    logits = np.zeros((2, 5))
    logits[0, 1] = logits[1, 4] = 100
    assert float(F.softmax_cross_entropy(t(logits), [1, 4]).data) < 1e-30


def test_cross_entropy_rejects_bad_labels():
    with pytest.raises(DataError):
        F.softmax_cross_entropy(t(np.zeros((2, 3))), [0, 3])
    with pytest.raises(DataError):
        F.softmax_cross_entropy(t(np.zeros((2, 3))), [-1, 0])


# graph mechanics


def test_backward_accumulates_only_on_learnable_leaves():
    frozen = Parameter(np.ones((2, 2)))
    frozen.freeze()
    live = Parameter(np.full((2, 2), 2.0))
    loss = F.sum(F.mul(frozen, live))
    loss.backward()
    assert frozen.grad is None
    np.testing.assert_array_equal(live.grad, np.ones((2, 2)))


def test_gradients_accumulate_across_uses():
    p = Parameter(np.array([3.0]))
    F.sum(F.add(F.mul(p, p), p)).backward()
    np.testing.assert_allclose(p.grad, [7.0])


def test_no_grad_records_nothing():
    p = Parameter(np.array([1.0, 2.0]))
    with no_grad():
        out = F.mul(p, p)
    assert not out.requires_grad


def test_ops_do_not_mutate_inputs():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 2, 4, 4))
    w = rng.normal(size=(3, 2, 3, 3))
    xc, wc = x.copy(), w.copy()
    out = F.conv2d(t(x, True), t(w, True), 1, 1)
    F.sum(F.leaky_relu(F.maxpool2d(out, 2), 0.1)).backward()
    np.testing.assert_array_equal(x, xc)
    np.testing.assert_array_equal(w, wc)


def test_relative_error_metric():
    assert relative_error(np.array([1.0, 2.0]), np.array([1.0, 2.0])) == 0
    assert relative_error(np.array([1.0, 2.1]), np.array([1.0, 2.0])) == pytest.approx(0.1 / 2.1)


# optimizer


def test_sgd_plain_step():
    p = Parameter(np.array([1.0, -1.0]), weight_decay=0.0)
    p.grad = np.array([0.5, 2.0])
    sgd_step([p], lr=0.1, momentum=0.0)
    np.testing.assert_allclose(p.data, [0.95, -1.2])


def test_sgd_leaves_frozen_parameters_bitwise():
    p = Parameter(np.array([0.1, 0.2], dtype=np.float32), weight_decay=0.5)
    before = p.data.tobytes()
    p.freeze()
    p.grad = np.ones(2, dtype=np.float32)
    sgd_step([p], lr=1.0, momentum=0.9)
    assert p.data.tobytes() == before


def test_sgd_two_step_momentum_recurrence():
    w0, g1, g2 = 1.0, 0.5, -0.25
    lr, m, wd = 0.1, 0.9, 0.01
    p = Parameter(np.array([w0]), weight_decay=wd)
    p.grad = np.array([g1])
    sgd_step([p], lr, m)
    p.grad = np.array([g2])
    sgd_step([p], lr, m)
    # hand-rolled recurrence
    v1 = g1 + wd * w0
    w1 = w0 - lr * v1
    v2 = m * v1 + g2 + wd * w1
    w2 = w1 - lr * v2
    assert p.data[0] == pytest.approx(w2, rel=1e-15)
    assert p.momentum_buffer[0] == pytest.approx(v2, rel=1e-15)


def test_weight_decay_equals_explicit_l2_term():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(5, 3))
    y = rng.integers(0, 2, 5)
    w0 = rng.normal(size=(3, 2))

    def run(explicit: bool):
        w = Parameter(w0.copy(), weight_decay=0.05)
        for _ in range(3):
            zero_grad([w])
            loss = F.softmax_cross_entropy(F.dense(t(x), w), y)
            if explicit:
                loss = F.add(loss, l2_penalty([w]))
                decay, w.weight_decay = w.weight_decay, 0.0
                loss.backward()
                sgd_step([w], 0.1, 0.9)
                w.weight_decay = decay
            else:
                loss.backward()
                sgd_step([w], 0.1, 0.9)
        return w.data

    np.testing.assert_allclose(run(True), run(False), rtol=1e-12, atol=1e-14)
