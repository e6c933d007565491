"""Temporal convolutional network regressor.

Residual blocks of two causal dilated convolutions (ReLU, dropout) with a
1x1 projection on the residual path when channel counts differ.  The
regression head reads only the final time step, so each layer is evaluated
only at the positions that final step depends on (``TcnPlan``); the result
equals the full-length network exactly in exact arithmetic.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import TcnConfig
from ..neural import LayerParams, causal_conv1d, init_uniform, sigmoid
from .base import NeuralRegressor


@dataclass(frozen=True)
class BlockPlan:
    in_pos: np.ndarray
    mid_pos: np.ndarray
    out_pos: np.ndarray
    g1: np.ndarray   # (n_mid, K) into block input, n_in = zero row
    g2: np.ndarray   # (n_out, K) into conv1 output, n_mid = zero row
    res: np.ndarray  # (n_out,) into block input
    s1: np.ndarray   # (K, n_in + 1, n_mid) 0/1 scatter matrices, transposes of g1
    s2: np.ndarray   # (K, n_mid + 1, n_out) likewise for g2


def _scatter_matrix(g: np.ndarray, n_src: int) -> np.ndarray:
    n, K = g.shape
    S = np.zeros((K, n_src + 1, n))
    for k in range(K):
        S[k, g[:, k], np.arange(n)] = 1.0
    return S


def _pad_row(h: np.ndarray) -> np.ndarray:
    return np.concatenate([h, np.zeros((1,) + h.shape[1:])], axis=0)


def _taps_matmul(xp: np.ndarray, g: np.ndarray, w: np.ndarray) -> np.ndarray:
    """sum_k xp[g[:, k]] @ w[k], flattened to (n_out * B, Cout)."""
    C = xp.shape[2]
    out = xp[g[:, 0]].reshape(-1, C) @ w[0]
    for k in range(1, g.shape[1]):
        out += xp[g[:, k]].reshape(-1, C) @ w[k]
    return out


def _taps_backward(xp, g, S, w, dz, n_out, B):
    """Weight gradient and scatter-added input gradient (pad row included)."""
    C = xp.shape[2]
    dw = np.empty_like(w)
    dxp = np.zeros((xp.shape[0], B * C))
    for k in range(g.shape[1]):
        dw[k] = xp[g[:, k]].reshape(-1, C).T @ dz
        dxp += S[k] @ (dz @ w[k].T).reshape(n_out, B * C)
    return dw, dxp


def _gather(out_pos, in_pos, d, K):
    idx = np.full((out_pos.size, K), in_pos.size, dtype=np.int64)
    lookup = {int(p): i for i, p in enumerate(in_pos)}
    for r, p in enumerate(out_pos):
        for k in range(K):
            q = int(p) - k * d
            if q >= 0:
                idx[r, k] = lookup[q]
    return idx


def tcn_plan(L: int, K: int, dilations) -> list[BlockPlan]:
    need = np.array([L - 1])
    raw = []
    for d in reversed(tuple(dilations)):
        out_pos = need
        mid = np.unique(np.concatenate([out_pos - k * d for k in range(K)]))
        mid = mid[mid >= 0]
        inp = np.unique(np.concatenate([mid - k * d for k in range(K)] + [out_pos]))
        inp = inp[inp >= 0]
        raw.append((inp, mid, out_pos, d))
        need = inp
    plans = []
    for inp, mid, out_pos, d in reversed(raw):
        g1, g2 = _gather(mid, inp, d, K), _gather(out_pos, mid, d, K)
        plans.append(BlockPlan(inp, mid, out_pos, g1, g2, np.searchsorted(inp, out_pos),
                               _scatter_matrix(g1, inp.size), _scatter_matrix(g2, mid.size)))
    return plans


class TcnRegressor(NeuralRegressor):
    kind = "tcn"

    def __init__(self, n_features: int = 80, n_outputs: int = 7, config: TcnConfig | None = None,
                 seed: int = 0):
        cfg = config or TcnConfig()
        super().__init__(n_features, n_outputs, cfg.window_ms, cfg.sequence)
        self.cfg = cfg
        self.default_epochs = cfg.epochs
        self.seed = seed
        rng = np.random.default_rng(seed)
        K, M = cfg.kernel, cfg.filters
        self.layers: list[LayerParams] = []
        self._blocks = []
        cin = n_features
        for _ in cfg.dilations:
            c1 = len(self.layers)
            self.layers.append(LayerParams(init_uniform(rng, (K, cin, M), K * cin, np.sqrt(6)),
                                           np.zeros(M)))
            self.layers.append(LayerParams(init_uniform(rng, (K, M, M), K * M, np.sqrt(6)),
                                           np.zeros(M)))
            down = None
            if cin != M:
                down = len(self.layers)
                self.layers.append(LayerParams(init_uniform(rng, (1, cin, M), cin), np.zeros(M)))
            self._blocks.append((c1, c1 + 1, down))
            cin = M
        self.layers.append(LayerParams(init_uniform(rng, (M, n_outputs), M), np.zeros(n_outputs)))
        self._plan = tcn_plan(cfg.sequence, K, cfg.dilations)

    # Activations are kept position-major, (positions, batch, channels), so each
    # tap of a dilated convolution is a contiguous row gather.
    def _forward(self, X, training: bool = False, rng=None):
        drop = self.cfg.dropout if training else 0.0
        B = X.shape[0]
        h = np.ascontiguousarray(X.transpose(1, 0, 2)[self._plan[0].in_pos])
        caches = []
        for (i1, i2, idn), plan in zip(self._blocks, self._plan):
            c1, c2 = self.layers[i1], self.layers[i2]
            hp = _pad_row(h)
            z1 = _taps_matmul(hp, plan.g1, c1.weights) + c1.biases
            a1 = np.maximum(z1, 0.0)
            m1 = _mask(rng, a1.shape, drop)
            if m1 is not None:
                a1 *= m1
            ap = _pad_row(a1.reshape(plan.mid_pos.size, B, -1))
            z2 = _taps_matmul(ap, plan.g2, c2.weights) + c2.biases
            a2 = np.maximum(z2, 0.0)
            m2 = _mask(rng, a2.shape, drop)
            if m2 is not None:
                a2 *= m2
            res_in = h[plan.res].reshape(plan.out_pos.size * B, -1)
            if idn is not None:
                dn = self.layers[idn]
                s = a2 + (res_in @ dn.weights[0] + dn.biases)
            else:
                s = a2 + res_in
            caches.append((hp, z1, m1, ap, z2, m2, res_in, s))
            h = np.maximum(s, 0.0).reshape(plan.out_pos.size, B, -1)
        last = h[-1]
        return self._head(last), (caches, last)

    def _backward(self, cache, dz):
        caches, last = cache
        grads: list = [None] * len(self.layers)
        outl = self.layers[-1]
        grads[-1] = (last.T @ dz, dz.sum(axis=0))
        dh = (dz @ outl.weights.T)[None]
        for (i1, i2, idn), plan, c in reversed(list(zip(self._blocks, self._plan, caches))):
            hp, z1, m1, ap, z2, m2, res_in, s = c
            n_in, B, C = hp.shape[0] - 1, hp.shape[1], hp.shape[2]
            n_mid, n_out = plan.mid_pos.size, plan.out_pos.size
            c1, c2 = self.layers[i1], self.layers[i2]
            ds = dh.reshape(n_out * B, -1) * (s > 0)
            if idn is not None:
                dn = self.layers[idn]
                grads[idn] = ((res_in.T @ ds)[None], ds.sum(axis=0))
                dres_in = ds @ dn.weights[0].T
            else:
                dres_in = ds
            dz2 = ds if m2 is None else ds * m2
            dz2 = dz2 * (z2 > 0)
            dw2, da1 = _taps_backward(ap, plan.g2, plan.s2, c2.weights, dz2, n_out, B)
            grads[i2] = (dw2, dz2.sum(axis=0))
            da1 = da1[:n_mid].reshape(n_mid * B, -1)
            if m1 is not None:
                da1 = da1 * m1
            dz1 = da1 * (z1 > 0)
            dw1, dhp = _taps_backward(hp, plan.g1, plan.s1, c1.weights, dz1, n_mid, B)
            grads[i1] = (dw1, dz1.sum(axis=0))
            dh = dhp[:n_in].reshape(n_in, B, C)
            dh[plan.res] += dres_in.reshape(n_out, B, C)
        return grads

    def reference_forward(self, X) -> np.ndarray:
        """Full-length evaluation through :func:`causal_conv1d` (eval mode)."""
        Xs = np.asarray(X, dtype=np.float64)
        h = Xs
        for (i1, i2, idn), d in zip(self._blocks, self.cfg.dilations):
            c1, c2 = self.layers[i1], self.layers[i2]
            a1 = np.maximum(causal_conv1d(h, c1.weights, c1.biases, d), 0.0)
            a2 = np.maximum(causal_conv1d(a1, c2.weights, c2.biases, d), 0.0)
            res = h if idn is None else causal_conv1d(h, self.layers[idn].weights,
                                                      self.layers[idn].biases, 1)
            h = np.maximum(a2 + res, 0.0)
        out = self.layers[-1]
        return sigmoid(h[:, -1, :] @ out.weights + out.biases)

    def _config(self) -> dict:
        c = self.cfg
        return {"filters": c.filters, "kernel": c.kernel, "dilations": list(c.dilations),
                "dropout": c.dropout, "epochs": c.epochs, "seed": self.seed,
                "steps": [lp.step for lp in self.layers]}

    def _arrays(self):
        return self._layer_arrays()

    @classmethod
    def _from_parts(cls, config, arrays):
        cfg = TcnConfig(window_ms=config["window_ms"], sequence=config["seq_len"],
                        epochs=config["epochs"], filters=config["filters"],
                        kernel=config["kernel"], dilations=tuple(config["dilations"]),
                        dropout=config["dropout"])
        model = cls(config["n_features"], config["n_outputs"], cfg, seed=config["seed"])
        model._load_layer_arrays(arrays, config["steps"])
        return model


def _mask(rng, shape, p):
    if p <= 0.0:
        return None
    return (rng.random(shape) >= p) / (1.0 - p)
