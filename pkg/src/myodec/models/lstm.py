"""Single-layer LSTM regressor: final hidden state -> dense -> sigmoid."""
from __future__ import annotations

import numpy as np

from ..config import LstmConfig
from ..neural import LayerParams, init_uniform, lstm_gate_backward, lstm_gates
from .base import NeuralRegressor


class LstmRegressor(NeuralRegressor):
    kind = "lstm"

    def __init__(self, n_features: int = 80, n_outputs: int = 7, config: LstmConfig | None = None,
                 seed: int = 0):
        cfg = config or LstmConfig()
        super().__init__(n_features, n_outputs, cfg.window_ms, cfg.sequence)
        self.cfg = cfg
        self.default_epochs = cfg.epochs
        self.seed = seed
        H = cfg.hidden
        rng = np.random.default_rng(seed)
        w = init_uniform(rng, (n_features + H, 4 * H), H)
        b = np.zeros(4 * H)
        b[H:2 * H] = 1.0  # forget gate
        self.layers = [LayerParams(w, b),
                       LayerParams(init_uniform(rng, (H, n_outputs), H), np.zeros(n_outputs))]

    def _forward(self, X, training: bool = False, rng=None):
        H = self.cfg.hidden
        B, L, D = X.shape
        W, b = self.layers[0].weights, self.layers[0].biases
        zx = X @ W[:D] + b  # input projection for every step at once
        Wh = W[D:]
        h = np.zeros((B, H))
        c = np.zeros((B, H))
        steps = []
        for t in range(L):
            i, f, g, o = lstm_gates(zx[:, t] + h @ Wh, H)
            c_prev, h_prev = c, h
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            steps.append((h_prev, c_prev, i, f, g, o, tc))
        return self._head(h), (X, steps, h)

    def _backward(self, cache, dz):
        X, steps, h_last = cache
        B, L, D = X.shape
        W = self.layers[0].weights
        Wh = W[D:]
        out = self.layers[-1]
        g_out = (h_last.T @ dz, dz.sum(axis=0))
        dh = dz @ out.weights.T
        dc = np.zeros_like(dh)
        dzs = np.empty((B, L, W.shape[1]))
        hs = np.empty((B, L, Wh.shape[0]))
        for t in range(L - 1, -1, -1):
            h_prev, c_prev, i, f, g, o, tc = steps[t]
            dzt, dc = lstm_gate_backward(dh, dc, c_prev, i, f, g, o, tc)
            dzs[:, t] = dzt
            hs[:, t] = h_prev
            dh = dzt @ Wh.T
        dz2 = dzs.reshape(B * L, -1)
        dW = np.concatenate([X.reshape(B * L, D).T @ dz2, hs.reshape(B * L, -1).T @ dz2])
        return [(dW, dz2.sum(axis=0)), g_out]

    def _config(self) -> dict:
        return {"hidden": self.cfg.hidden, "epochs": self.cfg.epochs, "seed": self.seed,
                "steps": [lp.step for lp in self.layers]}

    def _arrays(self):
        return self._layer_arrays()

    @classmethod
    def _from_parts(cls, config, arrays):
        cfg = LstmConfig(window_ms=config["window_ms"], sequence=config["seq_len"],
                         epochs=config["epochs"], hidden=config["hidden"])
        model = cls(config["n_features"], config["n_outputs"], cfg, seed=config["seed"])
        model._load_layer_arrays(arrays, config["steps"])
        return model
