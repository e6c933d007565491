"""Common regressor interface, training data container and checkpoint glue."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    EmptyDataset,
    NotFitted,
    SpecMismatch,
    TargetOutOfRange,
    UnsupportedModel,
    VersionMismatch,
)
from ..neural import LayerParams, adam_step, mse_loss, sigmoid
from ..signal import FeatureSequence, Standardizer, standardize_fit
from ..storage_codec import decode_checkpoint, encode_checkpoint


@dataclass
class TrainReport:
    losses: list[float] = field(default_factory=list)
    seconds: float = 0.0
    n_pairs: int = 0


class SequenceSet:
    """(sequence, target) pairs stored as one feature matrix plus end indices.

    Pair ``j`` is ``features[ends[j] - L + 1 : ends[j] + 1]`` with target
    ``targets[ends[j]]``, so overlapping sequences share storage.
    """

    def __init__(self, features: np.ndarray, targets: np.ndarray, ends, seq_len: int):
        self.features = np.asarray(features, dtype=np.float64)
        self.targets = np.asarray(targets, dtype=np.float64)
        self.ends = np.asarray(ends, dtype=np.int64).reshape(-1)
        self.seq_len = int(seq_len)
        if self.ends.size and (self.ends.min() < self.seq_len - 1
                               or self.ends.max() >= self.features.shape[0]):
            raise SpecMismatch("sequence end index outside the feature matrix")
        self._offsets = np.arange(-self.seq_len + 1, 1)

    @classmethod
    def from_arrays(cls, X: np.ndarray, Y: np.ndarray) -> "SequenceSet":
        X = np.asarray(X, dtype=np.float64)
        Y = np.asarray(Y, dtype=np.float64)
        if X.ndim != 3 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
            raise SpecMismatch(f"expected X (n, L, D) and Y (n, k), got {X.shape}, {Y.shape}")
        n, L, D = X.shape
        targets = np.zeros((n * L, Y.shape[1]))
        ends = np.arange(n) * L + L - 1
        targets[ends] = Y
        return cls(X.reshape(n * L, D), targets, ends, L)

    def __len__(self) -> int:
        return self.ends.size

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def batch(self, idx, features: np.ndarray | None = None):
        f = self.features if features is None else features
        e = self.ends[np.asarray(idx)]
        return f[e[:, None] + self._offsets], self.targets[e]

    def last_features(self) -> np.ndarray:
        return self.features[self.ends]

    def strided(self, stride: int) -> "SequenceSet":
        return SequenceSet(self.features, self.targets, self.ends[::stride], self.seq_len)


def as_sequence_set(data, seq_len: int | None = None) -> SequenceSet:
    if isinstance(data, SequenceSet):
        return data
    if isinstance(data, tuple) and len(data) == 2 and isinstance(data[0], np.ndarray):
        return SequenceSet.from_arrays(*data)
    pairs = list(data)
    if not pairs:
        L = seq_len or 1
        return SequenceSet(np.zeros((0, 0)), np.zeros((0, 0)), [], L)
    X = np.stack([s.as_array() if isinstance(s, FeatureSequence) else np.asarray(s)
                  for s, _ in pairs])
    Y = np.stack([np.asarray(t, dtype=np.float64) for _, t in pairs])
    return SequenceSet.from_arrays(X, Y)


class Regressor:
    """Shared predict/train/checkpoint contract of the three model kinds."""

    kind = ""
    sequential = True

    def __init__(self, n_features: int, n_outputs: int, window_ms: int, seq_len: int):
        self.n_features = int(n_features)
        self.n_outputs = int(n_outputs)
        self.window_ms = int(window_ms)
        self.seq_len = int(seq_len)
        self.standardizer = Standardizer()

    # -- prediction -------------------------------------------------------
    def _check_batch(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 3 or X.shape[1:] != (self.seq_len, self.n_features):
            raise SpecMismatch(
                f"{self.kind} expects sequences of shape ({self.seq_len}, {self.n_features}), "
                f"got {X.shape[1:] if X.ndim == 3 else X.shape}"
            )
        return X

    def predict(self, seq) -> np.ndarray:
        x = seq.as_array() if isinstance(seq, FeatureSequence) else np.asarray(seq, dtype=np.float64)
        if x.ndim == 1 and self.seq_len == 1:
            x = x[None]
        return self.predict_batch(x[None])[0]

    def predict_batch(self, X, chunk: int = 512) -> np.ndarray:
        X = self._check_batch(X)
        if not self.standardizer.fitted:
            raise NotFitted(f"{self.kind} standardizer is not fitted")
        out = np.empty((X.shape[0], self.n_outputs))
        for s in range(0, X.shape[0], chunk):
            out[s:s + chunk] = self._predict(self.standardizer.apply(X[s:s + chunk]))
        return out

    def predict_set(self, data, chunk: int = 256) -> np.ndarray:
        """Predictions for every pair of a :class:`SequenceSet`, built chunk by chunk."""
        data = as_sequence_set(data, self.seq_len)
        out = np.empty((len(data), self.n_outputs))
        for s in range(0, len(data), chunk):
            xb, _ = data.batch(np.arange(s, min(s + chunk, len(data))))
            out[s:s + chunk] = self.predict_batch(xb, chunk)
        return out

    def _predict(self, Xs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    # -- training -----------------------------------------------------------
    def _prepare(self, data) -> SequenceSet:
        data = as_sequence_set(data, self.seq_len)
        if len(data) == 0:
            raise EmptyDataset(f"{self.kind}: no training pairs")
        if data.seq_len != self.seq_len or data.n_features != self.n_features:
            raise SpecMismatch(
                f"{self.kind} expects ({self.seq_len}, {self.n_features}) sequences, "
                f"got ({data.seq_len}, {data.n_features})"
            )
        y = data.targets[data.ends]
        if y.shape[1] != self.n_outputs:
            raise SpecMismatch(f"expected {self.n_outputs} targets, got {y.shape[1]}")
        if not np.all(np.isfinite(y)) or y.min() < 0 or y.max() > 1:
            raise TargetOutOfRange("targets must lie in [0, 1]")
        if not self.standardizer.fitted:
            self.standardizer = standardize_fit(data.last_features())
        return data

    def train(self, data, epochs: int | None = None, batch_size: int = 24, seed: int = 0,
              lr: float = 1e-3) -> TrainReport:
        raise NotImplementedError

    def reinforce_update(self, data, epochs: int = 5, batch_size: int = 24, seed: int = 0,
                         lr: float = 1e-3) -> "Regressor":
        raise UnsupportedModel(f"{self.kind} has no incremental update")

    # -- checkpoint ---------------------------------------------------------
    def _config(self) -> dict:
        raise NotImplementedError

    def _arrays(self) -> list[np.ndarray]:
        raise NotImplementedError

    @classmethod
    def _from_parts(cls, config: dict, arrays: list[np.ndarray]) -> "Regressor":
        raise NotImplementedError

    def to_bytes(self) -> bytes:
        cfg = self._config()
        cfg.update(n_features=self.n_features, n_outputs=self.n_outputs,
                   window_ms=self.window_ms, seq_len=self.seq_len,
                   standardized=self.standardizer.fitted)
        arrays = list(self._arrays())
        if self.standardizer.fitted:
            arrays = [self.standardizer.mean, self.standardizer.std] + arrays
        return encode_checkpoint(self.kind, cfg, arrays)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Regressor":
        kind, config, arrays = decode_checkpoint(data, expected_kind=cls.kind)
        return cls._restore(config, arrays)

    @classmethod
    def _restore(cls, config: dict, arrays: list[np.ndarray]) -> "Regressor":
        std = None
        if config.get("standardized"):
            std = Standardizer(arrays[0], arrays[1])
            arrays = arrays[2:]
        model = cls._from_parts(config, arrays)
        if std is not None:
            model.standardizer = std
        return model


class NeuralRegressor(Regressor):
    """Sigmoid-output sequence model trained with MSE and Adam."""

    layers: list[LayerParams]

    def _forward(self, Xs, training: bool = False, rng=None):
        raise NotImplementedError

    def _backward(self, cache, dz):
        raise NotImplementedError

    def _predict(self, Xs):
        return self._forward(Xs)[0]

    def loss(self, x, y) -> float:
        return mse_loss(self._forward(x)[0], y)[0]

    def loss_and_grads(self, x, y, training: bool = False, rng=None):
        p, cache = self._forward(x, training, rng)
        loss, dp = mse_loss(p, y)
        return loss, self._backward(cache, dp * p * (1.0 - p))

    def _head(self, h):
        out = self.layers[-1]
        return sigmoid(h @ out.weights + out.biases)

    def train(self, data, epochs: int | None = None, batch_size: int = 24, seed: int = 0,
              lr: float = 1e-3) -> TrainReport:
        """Mini-batch Adam over shuffled pairs; deterministic given ``seed``."""
        data = self._prepare(data)
        epochs = self.default_epochs if epochs is None else int(epochs)
        t0 = time.perf_counter()
        fs = self.standardizer.apply(data.features)
        rng = np.random.default_rng(seed)
        n = len(data)
        report = TrainReport(n_pairs=n)
        for _ in range(epochs):
            order = rng.permutation(n)
            total = 0.0
            for s in range(0, n, batch_size):
                idx = order[s:s + batch_size]
                xb, yb = data.batch(idx, fs)
                loss, grads = self.loss_and_grads(xb, yb, training=True, rng=rng)
                if not np.isfinite(loss):
                    raise FloatingPointError("training loss became non-finite")
                for lp, g in zip(self.layers, grads):
                    adam_step(lp, g, lr)
                total += loss * len(idx)
            report.losses.append(total / n)
        report.seconds = time.perf_counter() - t0
        return report

    def reinforce_update(self, data, epochs: int = 5, batch_size: int = 24, seed: int = 0,
                         lr: float = 1e-3) -> "NeuralRegressor":
        """Fine-tune on one trial's pairs only; the standardizer stays frozen."""
        data = as_sequence_set(data, self.seq_len)
        if len(data) == 0:
            raise EmptyDataset("reinforcement update needs a non-empty trial")
        if not self.standardizer.fitted:
            raise NotFitted("reinforcement update before initial training")
        self.train(data, epochs=epochs, batch_size=batch_size, seed=seed, lr=lr)
        return self

    def _layer_arrays(self) -> list[np.ndarray]:
        out = []
        for lp in self.layers:
            out += [lp.weights, lp.biases, lp.m_w, lp.v_w, lp.m_b, lp.v_b]
        return out

    def _load_layer_arrays(self, arrays, steps) -> None:
        if len(arrays) != 6 * len(self.layers) or len(steps) != len(self.layers):
            raise VersionMismatch("checkpoint layer layout does not match the model")
        for i, lp in enumerate(self.layers):
            w, b, mw, vw, mb, vb = arrays[6 * i:6 * i + 6]
            if w.shape != lp.weights.shape or b.shape != lp.biases.shape:
                raise VersionMismatch("checkpoint layer shapes do not match the model config")
            self.layers[i] = LayerParams(w, b, mw, vw, mb, vb, int(steps[i]))


def predict(model: Regressor, seq) -> np.ndarray:
    return model.predict(seq)


def train(model: Regressor, data, epochs: int | None = None, batch: int = 24, seed: int = 0,
          lr: float = 1e-3) -> TrainReport:
    return model.train(data, epochs=epochs, batch_size=batch, seed=seed, lr=lr)


def reinforce_update(model: Regressor, trial, update_epochs: int = 5, batch: int = 24,
                     seed: int = 0, lr: float = 1e-3) -> Regressor:
    if not model.sequential:
        raise UnsupportedModel(f"{model.kind} has no incremental update")
    return model.reinforce_update(trial, epochs=update_epochs, batch_size=batch, seed=seed, lr=lr)
