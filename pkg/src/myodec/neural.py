"""Small float64 neural-network primitives with hand-written backward passes.

Only what the TCN and LSTM regressors need: causal dilated 1-D convolution,
dense layers, an LSTM cell, sigmoid, MSE and Adam.  Every backward pass is
audited against central finite differences by :func:`finite_diff_check`.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonFiniteLoss, ShapeMismatch


@dataclass
class LayerParams:
    """Weights, biases and their Adam moments."""

    weights: np.ndarray
    biases: np.ndarray
    m_w: np.ndarray | None = None
    v_w: np.ndarray | None = None
    m_b: np.ndarray | None = None
    v_b: np.ndarray | None = None
    step: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        for name, ref in (("m_w", self.weights), ("v_w", self.weights),
                          ("m_b", self.biases), ("v_b", self.biases)):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(ref))

    @property
    def size(self) -> int:
        return self.weights.size + self.biases.size

    def copy(self) -> "LayerParams":
        return LayerParams(self.weights.copy(), self.biases.copy(), self.m_w.copy(),
                           self.v_w.copy(), self.m_b.copy(), self.v_b.copy(), self.step)


def init_uniform(rng: np.random.Generator, shape, fan_in: int, scale: float = 1.0) -> np.ndarray:
    """U(-a, a) with a = scale / sqrt(fan_in)."""
    a = scale / np.sqrt(fan_in)
    return rng.uniform(-a, a, size=shape)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def mse_loss(pred: np.ndarray, truth: np.ndarray) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs truth {truth.shape}")
    diff = pred - truth
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n


# -- dense ------------------------------------------------------------------

def dense(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[-1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"dense: x {x.shape}, w {w.shape}, b {b.shape}")
    return x @ w + b


def dense_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray):
    x2 = x.reshape(-1, w.shape[0])
    dy2 = dy.reshape(-1, w.shape[1])
    return (dy @ w.T), x2.T @ dy2, dy2.sum(axis=0)


# -- causal dilated convolution ---------------------------------------------

def _conv_cols(x: np.ndarray, K: int, dilation: int) -> np.ndarray:
    B, L, C = x.shape
    pad = (K - 1) * dilation
    xp = np.concatenate([np.zeros((B, pad, C)), x], axis=1)
    # tap k reads x[t - k*dilation]
    return np.stack([xp[:, pad - k * dilation: pad - k * dilation + L] for k in range(K)], axis=2)


def causal_conv1d(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int = 1) -> np.ndarray:
    """y[t, o] = b[o] + sum_k sum_i w[k, i, o] * x[t - k*dilation, i], zero for t < 0.

    ``x`` is (L, Cin) or batched (B, L, Cin); output keeps the length L.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    if w.ndim != 3 or x.ndim != 3 or x.shape[2] != w.shape[1] or b.shape != (w.shape[2],):
        raise ShapeMismatch(f"conv: x {x.shape}, w {w.shape}, b {b.shape}")
    if dilation < 1 or w.shape[0] < 1:
        raise ShapeMismatch("kernel size and dilation must be >= 1")
    K, Cin, Cout = w.shape
    B, L, _ = x.shape
    cols = _conv_cols(x, K, dilation).reshape(B * L, K * Cin)
    y = (cols @ w.reshape(K * Cin, Cout) + b).reshape(B, L, Cout)
    return y[0] if squeeze else y


def causal_conv1d_backward(x: np.ndarray, w: np.ndarray, dilation: int, dy: np.ndarray):
    """Gradients (dx, dw, db) of :func:`causal_conv1d`."""
    squeeze = x.ndim == 2
    if squeeze:
        x, dy = x[None], dy[None]
    K, Cin, Cout = w.shape
    B, L, _ = x.shape
    cols = _conv_cols(x, K, dilation).reshape(B * L, K * Cin)
    dy2 = dy.reshape(B * L, Cout)
    dw = (cols.T @ dy2).reshape(K, Cin, Cout)
    db = dy2.sum(axis=0)
    dcols = (dy2 @ w.reshape(K * Cin, Cout).T).reshape(B, L, K, Cin)
    pad = (K - 1) * dilation
    dxp = np.zeros((B, L + pad, Cin))
    for k in range(K):
        dxp[:, pad - k * dilation: pad - k * dilation + L] += dcols[:, :, k]
    dx = dxp[:, pad:]
    return (dx[0] if squeeze else dx), dw, db


# -- LSTM cell ----------------------------------------------------------------

def lstm_gates(z: np.ndarray, H: int):
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    return i, f, g, o


def lstm_step(x: np.ndarray, h: np.ndarray, c: np.ndarray, params: LayerParams):
    """One LSTM step; weights are (Cin + H, 4H) with gate blocks [i, f, g, o]."""
    h_new, c_new, _ = lstm_step_forward(x, h, c, params)
    return h_new, c_new


def lstm_step_forward(x, h, c, params: LayerParams):
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    H = h.shape[-1]
    W, b = params.weights, params.biases
    if (c.shape != h.shape or W.shape != (x.shape[-1] + H, 4 * H) or b.shape != (4 * H,)
            or x.shape[:-1] != h.shape[:-1]):
        raise ShapeMismatch(f"lstm: x {x.shape}, h {h.shape}, c {c.shape}, W {W.shape}")
    xh = np.concatenate([x, h], axis=-1)
    i, f, g, o = lstm_gates(xh @ W + b, H)
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (xh, c, i, f, g, o, tc)


def lstm_gate_backward(dh, dc, c_prev, i, f, g, o, tc):
    """Gradient w.r.t. the pre-activation z and the previous cell state."""
    do = dh * tc
    dct = dc + dh * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dct * g * i * (1.0 - i),
        dct * c_prev * f * (1.0 - f),
        dct * i * (1.0 - g * g),
        do * o * (1.0 - o),
    ], axis=-1)
    return dz, dct * f


def lstm_step_backward(dh, dc, cache, params: LayerParams):
    """Returns (dx, dh_prev, dc_prev, dW, db) for one :func:`lstm_step_forward`."""
    xh, c_prev, i, f, g, o, tc = cache
    dz, dc_prev = lstm_gate_backward(dh, dc, c_prev, i, f, g, o, tc)
    dxh = dz @ params.weights.T
    n_in = xh.shape[-1] - dh.shape[-1]
    dW = xh.reshape(-1, xh.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
    db = dz.reshape(-1, dz.shape[-1]).sum(axis=0)
    return dxh[..., :n_in], dxh[..., n_in:], dc_prev, dW, db


# -- optimizer ----------------------------------------------------------------

def adam_step(params: LayerParams, grads, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> LayerParams:
    """Bias-corrected Adam update applied in place; returns ``params``."""
    gw, gb = grads
    if gw.shape != params.weights.shape or gb.shape != params.biases.shape:
        raise ShapeMismatch(
            f"grads {gw.shape}/{gb.shape} vs params {params.weights.shape}/{params.biases.shape}"
        )
    params.step += 1
    t = params.step
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for p, g, m, v in ((params.weights, gw, params.m_w, params.v_w),
                       (params.biases, gb, params.m_b, params.v_b)):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params


# -- gradient audit -----------------------------------------------------------

@dataclass
class DenseModel:
    """A lone affine layer (optionally sigmoid-capped) trained with MSE."""

    layers: list[LayerParams] = field(default_factory=list)
    activation: str = "linear"

    @classmethod
    def create(cls, n_in: int, n_out: int, seed: int = 0, activation: str = "linear"):
        rng = np.random.default_rng(seed)
        lp = LayerParams(init_uniform(rng, (n_in, n_out), n_in), np.zeros(n_out))
        return cls([lp], activation)

    def forward(self, x):
        z = dense(x, self.layers[0].weights, self.layers[0].biases)
        return sigmoid(z) if self.activation == "sigmoid" else z

    def loss(self, x, y) -> float:
        return mse_loss(self.forward(x), y)[0]

    def loss_and_grads(self, x, y):
        p = self.forward(x)
        loss, dp = mse_loss(p, y)
        dz = dp * p * (1 - p) if self.activation == "sigmoid" else dp
        _, dw, db = dense_backward(x, self.layers[0].weights, dz)
        return loss, [(dw, db)]


def finite_diff_check(model, batch, h: float = 1e-4, max_per_tensor: int = 20,
                      seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``model`` exposes ``layers`` (list of :class:`LayerParams`), ``loss(x, y)``
    and ``loss_and_grads(x, y)``; both must be deterministic.  At most
    ``max_per_tensor`` entries of each weight/bias tensor are probed.
    """
    x, y = batch
    loss, grads = model.loss_and_grads(x, y)
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for lp, (gw, gb) in zip(model.layers, grads):
        for arr, g in ((lp.weights, gw), (lp.biases, gb)):
            flat = arr.reshape(-1)
            gflat = np.asarray(g).reshape(-1)
            n = flat.size
            idx = np.arange(n) if n <= max_per_tensor else rng.choice(n, max_per_tensor, replace=False)
            for j in idx:
                orig = flat[j]
                flat[j] = orig + h
                lp_ = model.loss(x, y)
                flat[j] = orig - h
                lm_ = model.loss(x, y)
                flat[j] = orig
                if not (np.isfinite(lp_) and np.isfinite(lm_)):
                    raise NonFiniteLoss("loss became non-finite under perturbation")
                num = (lp_ - lm_) / (2 * h)
                a = gflat[j]
                worst = max(worst, abs(a - num) / max(1.0, abs(a), abs(num)))
    return worst
