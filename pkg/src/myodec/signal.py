"""Causal windowing and TD5 feature extraction for multichannel EMG.

Features per channel are ordered (MAV, WL, VAR, SSC, ZC), channel-major, so a
16-channel window yields an 80-element vector.  A feature vector computed at
stream position ``n`` only ever sees the ``N`` samples ending at ``n``.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ChannelMismatch,
    EmptyTrainingSet,
    GapExceedsTolerance,
    InsufficientHistory,
    NonMonotoneTimestamps,
    NotFitted,
    ValidationError,
    WindowTooShort,
)

RATE_HZ = 2000
SAMPLE_PERIOD_US = 500
DELTA_T_MS = 25
N_CHANNELS = 16
FEATURE_NAMES = ("MAV", "WL", "VAR", "SSC", "ZC")
N_TD5 = len(FEATURE_NAMES)

_DEGENERATE_STD = 1e-12


def ms_to_samples(ms: float, rate_hz: int = RATE_HZ) -> int:
    n = ms * rate_hz / 1000.0
    if abs(n - round(n)) > 1e-9:
        raise ValidationError(f"{ms} ms is not a whole number of samples at {rate_hz} Hz")
    return int(round(n))


@dataclass(frozen=True)
class EmgFrame:
    t_us: int
    samples: np.ndarray


@dataclass(frozen=True)
class EmgWindow:
    """``data`` is channels x samples; every sample is at or before ``end_t_us``."""

    end_t_us: int
    data: np.ndarray


@dataclass(frozen=True)
class FeatureVector:
    t_us: int
    values: np.ndarray


@dataclass
class FeatureSequence:
    steps: list[FeatureVector] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def as_array(self) -> np.ndarray:
        return np.stack([s.values for s in self.steps])


def td5(data: np.ndarray, eps_zc: float = 0.0, eps_ssc: float = 0.0) -> np.ndarray:
    """TD5 features of a (channels, samples) block as a flat channel-major vector."""
    x = np.asarray(data, dtype=np.float64)
    if x.ndim != 2:
        raise ChannelMismatch(f"window must be 2-D (channels, samples), got shape {x.shape}")
    return td5_rows(np.ascontiguousarray(x.T), eps_zc, eps_ssc)


def td5_rows(x: np.ndarray, eps_zc: float = 0.0, eps_ssc: float = 0.0) -> np.ndarray:
    """:func:`td5` of a C-contiguous (samples, channels) block.

    Sums run along axis 0, which numpy accumulates strictly in sample order,
    so each feature equals the plain left-to-right definition bit for bit.
    """
    if x.shape[0] < 2:
        raise WindowTooShort(f"window needs at least 2 samples, got {x.shape[0]}")
    if eps_zc < 0 or eps_ssc < 0:
        raise ValidationError("TD5 thresholds must be non-negative")
    n = x.shape[0]
    d = x[1:] - x[:-1]
    mav = np.abs(x).sum(axis=0) / n
    wl = np.abs(d).sum(axis=0)
    c = x - x.sum(axis=0) / n
    var = (c * c).sum(axis=0) / (n - 1)
    # (x_k - x_{k-1}) * (x_k - x_{k+1}) = d[k-1] * -d[k]
    ssc = np.count_nonzero(d[:-1] * -d[1:] > eps_ssc, axis=0)
    zc = np.count_nonzero((x[:-1] * x[1:] < 0) & (np.abs(d) > eps_zc), axis=0)
    return np.stack([mav, wl, var, ssc.astype(np.float64), zc.astype(np.float64)], axis=1).reshape(-1)


def extract_td5(
    window: EmgWindow,
    eps_zc: float = 0.0,
    eps_ssc: float = 0.0,
    n_channels: int | None = None,
) -> FeatureVector:
    data = np.asarray(window.data)
    if n_channels is not None and (data.ndim != 2 or data.shape[0] != n_channels):
        raise ChannelMismatch(f"expected {n_channels} channels, got shape {data.shape}")
    return FeatureVector(int(window.end_t_us), td5(data, eps_zc, eps_ssc))


class StreamingExtractor:
    """Incremental TD5 extractor over a fixed-rate sample stream.

    One vector is emitted when the first full window is available and then
    every ``stride`` samples.  A single missing sample is filled by holding
    the previous sample; longer gaps raise :class:`GapExceedsTolerance`.
    Drive an instance from one thread at a time.
    """

    def __init__(
        self,
        n_channels: int = N_CHANNELS,
        window_ms: float = 50,
        stride_ms: float = DELTA_T_MS,
        rate_hz: int = RATE_HZ,
        eps_zc: float = 0.0,
        eps_ssc: float = 0.0,
    ):
        self.n_channels = n_channels
        self.window = ms_to_samples(window_ms, rate_hz)
        self.stride = ms_to_samples(stride_ms, rate_hz)
        if self.window < 2:
            raise WindowTooShort(f"window of {self.window} samples")
        if self.stride < 1:
            raise ValidationError("stride must be at least one sample")
        self.period_us = 1_000_000 // rate_hz
        self.eps_zc = eps_zc
        self.eps_ssc = eps_ssc
        self.reset()

    def reset(self) -> None:
        self._buf = np.zeros((self.n_channels, 0))
        self._buf_t = np.zeros(0, dtype=np.int64)
        self._count = 0
        self._last_t: int | None = None

    @property
    def samples_seen(self) -> int:
        return self._count

    def _fill_gaps(self, t_us: np.ndarray, samples: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self._last_t is None:
            dt = np.diff(t_us)
            base = 1
        else:
            dt = np.diff(np.concatenate([[self._last_t], t_us]))
            base = 0
        if dt.size == 0:
            return t_us, samples
        if np.any(dt <= 0):
            raise NonMonotoneTimestamps("timestamps must be strictly increasing")
        p = self.period_us
        missing = dt >= p + p // 2
        if not missing.any():
            return t_us, samples
        if np.any(dt >= 2 * p + p // 2):
            raise GapExceedsTolerance(
                f"gap of {int(dt.max())} us exceeds one missing sample ({p} us period)"
            )
        # exactly one sample missing before each flagged index: hold the previous sample
        t_out, s_out = [], []
        start = 0
        for g in np.flatnonzero(missing) + base:
            hold = samples[:, g - 1] if g > 0 else self._buf[:, -1]
            t_out += [t_us[start:g], np.array([t_us[g] - p], dtype=np.int64)]
            s_out += [samples[:, start:g], hold[:, None]]
            start = g
        t_out.append(t_us[start:])
        s_out.append(samples[:, start:])
        return np.concatenate(t_out), np.concatenate(s_out, axis=1)

    def push_block(self, t_us: Sequence[int] | np.ndarray, samples: np.ndarray) -> list[FeatureVector]:
        """Consume ``samples`` (n_samples, channels) stamped ``t_us``; return emitted vectors."""
        t = np.asarray(t_us, dtype=np.int64).reshape(-1)
        s = np.asarray(samples, dtype=np.float64)
        if s.ndim != 2 or s.shape[1] != self.n_channels or s.shape[0] != t.size:
            raise ChannelMismatch(
                f"expected ({t.size}, {self.n_channels}) samples, got {s.shape}"
            )
        if t.size == 0:
            return []
        t, cs = self._fill_gaps(t, s.T)
        buf = np.concatenate([self._buf, cs], axis=1)
        buf_t = np.concatenate([self._buf_t, t])
        n_old = self._count
        n_new = n_old + t.size
        offset = n_new - buf.shape[1]  # global count index of buf[:, 0]
        out = []
        first = max(n_old + 1, self.window)
        # emit at global counts n with n >= window and (n - window) % stride == 0
        r = (first - self.window) % self.stride
        n = first if r == 0 else first + self.stride - r
        while n <= n_new:
            hi = n - offset
            win = buf[:, hi - self.window:hi]
            out.append(FeatureVector(int(buf_t[hi - 1]), td5(win, self.eps_zc, self.eps_ssc)))
            n += self.stride
        keep = min(self.window, buf.shape[1])
        self._buf = np.ascontiguousarray(buf[:, buf.shape[1] - keep:])
        self._buf_t = buf_t[buf_t.size - keep:]
        self._count = n_new
        self._last_t = int(t[-1])
        return out

    def push(self, frame: EmgFrame) -> list[FeatureVector]:
        return self.push_block([frame.t_us], np.asarray(frame.samples, dtype=np.float64)[None, :])

    def state_dict(self) -> dict:
        return {
            "buf": self._buf.copy(),
            "buf_t": self._buf_t.copy(),
            "count": self._count,
            "last_t": self._last_t,
        }

    def load_state_dict(self, state: dict) -> None:
        self._buf = state["buf"].copy()
        self._buf_t = state["buf_t"].copy()
        self._count = state["count"]
        self._last_t = state["last_t"]


def stream_features(
    frames: Iterable[EmgFrame],
    window_ms: float = 50,
    stride_ms: float = DELTA_T_MS,
    n_channels: int = N_CHANNELS,
    rate_hz: int = RATE_HZ,
    eps_zc: float = 0.0,
    eps_ssc: float = 0.0,
):
    """Yield feature vectors from a frame iterator, one per stride after warm-up."""
    ex = StreamingExtractor(n_channels, window_ms, stride_ms, rate_hz, eps_zc, eps_ssc)
    for frame in frames:
        yield from ex.push(frame)


def batch_features(
    samples: np.ndarray,
    window: int,
    stride: int,
    eps_zc: float = 0.0,
    eps_ssc: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Offline equivalent of :class:`StreamingExtractor` over a whole recording.

    Returns ``(end_index, features)`` where ``end_index[j]`` is the sample index of
    the last sample in window ``j``.
    """
    x = np.asarray(samples, dtype=np.float64)
    n = x.shape[0]
    if n < window:
        return np.zeros(0, dtype=np.int64), np.zeros((0, x.shape[1] * N_TD5))
    ends = np.arange(window - 1, n, stride, dtype=np.int64)
    x = np.ascontiguousarray(x)
    feats = np.empty((ends.size, x.shape[1] * N_TD5))
    for j, e in enumerate(ends):
        feats[j] = td5_rows(x[e - window + 1:e + 1], eps_zc, eps_ssc)
    return ends, feats


def step_features(
    samples: np.ndarray,
    n_steps: int,
    window_ms: float,
    delta_t_ms: float = DELTA_T_MS,
    rate_hz: int = RATE_HZ,
    eps_zc: float = 0.0,
    eps_ssc: float = 0.0,
) -> tuple[np.ndarray, int]:
    """Feature matrix aligned to the kinematic step grid.

    Row ``k`` holds the window of samples strictly before step ``k``'s
    timestamp (last sample index ``k * stride - 1``).  Rows before the first
    full window are NaN; the index of the first valid row is returned too.
    """
    window = ms_to_samples(window_ms, rate_hz)
    stride = ms_to_samples(delta_t_ms, rate_hz)
    if window % stride:
        raise ValidationError("window length must be a multiple of the prediction stride")
    first = window // stride
    x = np.asarray(samples, dtype=np.float64)
    feats = np.full((n_steps, x.shape[1] * N_TD5), np.nan)
    usable = x[: max(0, min(x.shape[0], (n_steps - 1) * stride))]
    _, f = batch_features(usable, window, stride, eps_zc, eps_ssc)
    feats[first:first + f.shape[0]] = f
    return feats, first


def make_sequence(
    history: Sequence[FeatureVector] | deque,
    L: int,
    delta_t_ms: float = DELTA_T_MS,
    rate_hz: int = RATE_HZ,
) -> FeatureSequence:
    """Return the ``L`` most recent vectors of ``history``, oldest first."""
    if L < 1:
        raise ValidationError("sequence length must be >= 1")
    if len(history) < L:
        raise InsufficientHistory(f"need {L} feature vectors, have {len(history)}")
    steps = list(history)[-L:]
    if L > 1:
        dt = np.diff([s.t_us for s in steps])
        step_us = delta_t_ms * 1000
        tol = 1_000_000 / rate_hz
        if np.any(np.abs(dt - step_us) > tol):
            raise ValidationError("feature history is not spaced at the prediction stride")
    return FeatureSequence(steps)


@dataclass
class Standardizer:
    mean: np.ndarray | None = None
    std: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.mean is not None

    def apply(self, x: np.ndarray) -> np.ndarray:
        if not self.fitted:
            raise NotFitted("standardizer used before fit")
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.mean.size:
            raise ChannelMismatch(f"expected {self.mean.size} features, got {x.shape[-1]}")
        ok = self.std >= _DEGENERATE_STD
        safe = np.where(ok, self.std, 1.0)
        return np.where(ok, (x - self.mean) / safe, 0.0)


def standardize_fit(train: Iterable[FeatureVector] | np.ndarray) -> Standardizer:
    if isinstance(train, np.ndarray):
        x = np.asarray(train, dtype=np.float64)
    else:
        vs = [v.values if isinstance(v, FeatureVector) else np.asarray(v) for v in train]
        x = np.stack(vs) if vs else np.zeros((0, 0))
    if x.ndim != 2 or x.shape[0] < 2:
        raise EmptyTrainingSet("standardizer needs at least 2 training vectors")
    return Standardizer(mean=x.mean(axis=0), std=x.std(axis=0))


def standardize_apply(s: Standardizer, v: FeatureVector | np.ndarray):
    if isinstance(v, FeatureVector):
        return FeatureVector(v.t_us, s.apply(v.values))
    return s.apply(v)
