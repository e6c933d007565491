from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from myodec.errors import ShapeMismatch
from myodec.neural import (
    DenseModel,
    LayerParams,
    adam_step,
    causal_conv1d,
    causal_conv1d_backward,
    finite_diff_check,
    lstm_step,
    lstm_step_backward,
    lstm_step_forward,
    mse_loss,
    sigmoid,
)


def test_conv_identity_and_delays(rng):
    x = rng.standard_normal((12, 3))
    w = np.eye(3)[None]
    np.testing.assert_array_equal(causal_conv1d(x, w, np.zeros(3)), x)
    w2 = np.zeros((2, 1, 1))
    w2[1, 0, 0] = 1.0
    x1 = x[:, :1]
    y = causal_conv1d(x1, w2, np.zeros(1), 1)
    np.testing.assert_array_equal(y[1:], x1[:-1])
    assert y[0, 0] == 0
    y = causal_conv1d(x1, w2, np.zeros(1), 2)
    np.testing.assert_array_equal(y[2:], x1[:-2])
    with pytest.raises(ShapeMismatch):
        causal_conv1d(x, np.zeros((2, 4, 1)), np.zeros(1))


def test_conv_matches_definition(rng):
    x = rng.standard_normal((9, 2))
    w = rng.standard_normal((3, 2, 4))
    b = rng.standard_normal(4)
    y = causal_conv1d(x, w, b, 2)
    for t in range(9):
        ref = b.copy()
        for k in range(3):
            if t - 2 * k >= 0:
                ref += x[t - 2 * k] @ w[k]
        np.testing.assert_allclose(y[t], ref, atol=1e-12)


def test_conv_causal_jacobian(rng):
    x = rng.standard_normal((1, 20, 2))
    w = rng.standard_normal((3, 2, 2))
    y = causal_conv1d(x, w, np.zeros(2), 4)
    for t in range(20):
        z = x.copy()
        z[0, t + 1:] += 1.0
        assert np.array_equal(causal_conv1d(z, w, np.zeros(2), 4)[0, :t + 1], y[0, :t + 1])


def test_conv_backward_fd(rng):
    x = rng.standard_normal((2, 10, 3))
    w = rng.standard_normal((3, 3, 2))
    b = rng.standard_normal(2)
    dy = rng.standard_normal((2, 10, 2))
    dx, dw, db = causal_conv1d_backward(x, w, 2, dy)
    f = lambda x_, w_, b_: float((causal_conv1d(x_, w_, b_, 2) * dy).sum())  # noqa: E731
    h = 1e-6
    for arr, g in ((x, dx), (w, dw), (b, db)):
        for idx in list(np.ndindex(arr.shape))[:15]:
            old = arr[idx]
            arr[idx] = old + h
            up = f(x, w, b)
            arr[idx] = old - h
            dn = f(x, w, b)
            arr[idx] = old
            assert (up - dn) / (2 * h) == pytest.approx(g[idx], abs=1e-6)


def test_lstm_hand_values():
    H, D = 3, 2
    p = LayerParams(np.zeros((D + H, 4 * H)), np.zeros(4 * H))
    h, c = lstm_step(np.ones(D), np.zeros(H), np.zeros(H), p)
    np.testing.assert_array_equal(h, 0)
    np.testing.assert_array_equal(c, 0)
    c0 = np.array([1.0, -2.0, 0.5])
    h, c = lstm_step(np.ones(D), np.zeros(H), c0, p)
    np.testing.assert_allclose(c, 0.5 * c0, atol=1e-15)
    np.testing.assert_allclose(h, 0.5 * np.tanh(0.5 * c0), atol=1e-15)
    b = np.zeros(4 * H)
    b[:H] = -50.0  # input gate closed
    b[H:2 * H] = 50.0  # forget gate open
    h, c = lstm_step(np.ones(D), np.zeros(H), c0, LayerParams(np.zeros((D + H, 4 * H)), b))
    np.testing.assert_allclose(c, c0, atol=1e-15)


def test_lstm_backward_fd(rng):
    D, H = 3, 4
    p = LayerParams(rng.standard_normal((D + H, 4 * H)) * 0.5, rng.standard_normal(4 * H) * 0.1)
    x, h0, c0 = rng.standard_normal((2, D)), rng.standard_normal((2, H)), rng.standard_normal((2, H))
    gh, gc = rng.standard_normal((2, H)), rng.standard_normal((2, H))

    def f():
        h, c = lstm_step(x, h0, c0, p)
        return float((h * gh).sum() + (c * gc).sum())

    _, _, cache = lstm_step_forward(x, h0, c0, p)
    dx, dh, dc, dW, db = lstm_step_backward(gh, gc, cache, p)
    eps = 1e-6
    for arr, g in ((x, dx), (h0, dh), (c0, dc), (p.weights, dW), (p.biases, db)):
        for idx in list(np.ndindex(arr.shape))[:12]:
            old = arr[idx]
            arr[idx] = old + eps
            up = f()
            arr[idx] = old - eps
            dn = f()
            arr[idx] = old
            assert (up - dn) / (2 * eps) == pytest.approx(g[idx], abs=1e-7)
    with pytest.raises(ShapeMismatch):
        lstm_step(np.ones(D + 1), h0[0], c0[0], p)


def test_sigmoid_and_mse():
    assert sigmoid(0.0) == 0.5
    big = sigmoid(np.array([-800.0, 800.0, 30.0]))
    assert np.all(np.isfinite(big)) and big[0] >= 0 and big[1] <= 1
    t = np.random.default_rng(0).uniform(size=(4, 7))
    loss, g = mse_loss(t, t)
    assert loss == 0 and not g.any()
    assert mse_loss(t + 1, t)[0] == pytest.approx(1.0)
    with pytest.raises(ShapeMismatch):
        mse_loss(t, t[:, :3])


@settings(max_examples=50, deadline=None)
@given(st.floats(-30, 30))
def test_sigmoid_open_interval(x):
    y = sigmoid(x)
    assert 0 < y < 1


def test_adam_first_step_and_fixed_point():
    p = LayerParams(np.ones((2, 3)), np.zeros(3))
    adam_step(p, (np.zeros((2, 3)), np.zeros(3)), lr=0.1)
    np.testing.assert_array_equal(p.weights, 1.0)
    g = np.array([[0.3, -2.0, 5.0], [1e-3, -1e-2, 7.0]])
    p = LayerParams(np.zeros((2, 3)), np.zeros(3))
    adam_step(p, (g, np.full(3, 0.5)), lr=1e-3)
    np.testing.assert_allclose(p.weights, -1e-3 * np.sign(g), atol=1e-6)
    q = LayerParams(np.zeros((2, 3)), np.zeros(3))
    adam_step(q, (g, np.full(3, 0.5)), lr=1e-3)
    assert np.array_equal(p.weights, q.weights) and q.step == 1
    with pytest.raises(ShapeMismatch):
        adam_step(q, (g[:1], np.zeros(3)))


def test_dense_gradient_audit(rng):
    m = DenseModel.create(6, 7, seed=1)
    batch = (rng.standard_normal((8, 6)), rng.uniform(size=(8, 7)))
    assert finite_diff_check(m, batch, h=1e-5) < 1e-8


class _FlippedDense(DenseModel):
    def loss_and_grads(self, x, y):
        loss, grads = super().loss_and_grads(x, y)
        gw, gb = grads[0]
        return loss, [(-gw, gb)]


def test_fault_injection_detected(rng):
    base = DenseModel.create(6, 7, seed=1)
    m = _FlippedDense(base.layers)
    batch = (rng.standard_normal((8, 6)), rng.uniform(size=(8, 7)))
    assert finite_diff_check(m, batch) > 1e-2
