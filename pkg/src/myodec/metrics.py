"""Fidelity, latency and significance metrics.

Series are arrays of shape (steps, DoFs) in normalized units unless stated
otherwise.  Angular errors go through a :class:`CalibrationMap` so that the
error in degrees is exactly the normalized error times the DoF's angle span.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConstantTruth, EmptySeries, InsufficientData, LengthMismatch, SeriesTooShort
from .kinematics import CalibrationMap
from .signal import DELTA_T_MS


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.ndim == 1:
        p = p[:, None]
    if t.ndim == 1:
        t = t[:, None]
    if p.shape != t.shape:
        raise LengthMismatch(f"prediction {p.shape} vs truth {t.shape}")
    if p.shape[0] == 0:
        raise EmptySeries("metric of an empty series")
    return p, t


def rmse_phi(pred, truth) -> np.ndarray:
    p, t = _pair(pred, truth)
    return np.sqrt(np.mean((p - t) ** 2, axis=0))


def rmse_angular(pred, truth, cmap: CalibrationMap) -> tuple[np.ndarray, float]:
    """Per-DoF RMSE in degrees and the RMSE pooled over every DoF and step."""
    p, t = _pair(pred, truth)
    span = cmap.theta_span[: p.shape[1]]
    per = rmse_phi(p, t) * span
    total = float(np.sqrt(np.mean(per ** 2)))
    return per, total


def _r2(p: np.ndarray, t: np.ndarray) -> np.ndarray:
    ss_res = np.sum((t - p) ** 2, axis=0)
    ss_tot = np.sum((t - t.mean(axis=0)) ** 2, axis=0)
    # exact constancy test; the mean of equal values can round off
    live = (np.ptp(t, axis=0) > 0) & (ss_tot > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(live, 1.0 - ss_res / np.where(live, ss_tot, 1.0), np.nan)


def r2_nan(pred, truth) -> np.ndarray:
    """Per-DoF r^2 with NaN where the truth is constant."""
    return _r2(*_pair(pred, truth))


def r_squared(pred, truth) -> tuple[np.ndarray, float]:
    """1 - SS_res/SS_tot per DoF (unclipped) and its mean over DoFs."""
    p, t = _pair(pred, truth)
    if p.shape[0] < 2:
        raise SeriesTooShort("r^2 needs at least 2 steps")
    r = _r2(p, t)
    if np.isnan(r).any():
        raise ConstantTruth(f"truth is constant for DoF(s) {np.flatnonzero(np.isnan(r)).tolist()}")
    return r, float(r.mean())


@dataclass
class DelayResult:
    lag_steps: int
    lag_ms: float
    shifts: np.ndarray
    curve: np.ndarray


def _corr(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    den = np.sqrt((a * a).sum(axis=0) * (b * b).sum(axis=0))
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(den > 0, (a * b).sum(axis=0) / np.where(den > 0, den, 1.0), 0.0)


def lag_curve(pred, truth, max_lag_steps: int = 40) -> tuple[np.ndarray, np.ndarray]:
    """DoF-averaged correlation of pred[t + s] with truth[t] for s in [-max, max]."""
    p, t = _pair(pred, truth)
    n = p.shape[0]
    if n <= 2 * max_lag_steps:
        raise SeriesTooShort(f"{n} steps is too short for a +/-{max_lag_steps} step lag search")
    live = np.ptp(t, axis=0) > 0
    if not live.any():
        raise ConstantTruth("every DoF of the truth series is constant")
    p, t = p[:, live], t[:, live]
    shifts = np.arange(-max_lag_steps, max_lag_steps + 1)
    curve = np.empty(shifts.size)
    for j, s in enumerate(shifts):
        if s >= 0:
            c = _corr(p[s:], t[: n - s])
        else:
            c = _corr(p[: n + s], t[-s:])
        curve[j] = c.mean()
    return shifts, curve


def response_delay(pred, truth, max_lag_steps: int = 40,
                   delta_t_ms: float = DELTA_T_MS) -> DelayResult:
    """Shift maximizing correlation; positive means the prediction trails the truth.

    Ties (within 1e-12) go to the smaller |shift|, then to the non-negative one.
    """
    shifts, curve = lag_curve(pred, truth, max_lag_steps)
    best = curve.max()
    cand = shifts[curve >= best - 1e-12]
    order = np.lexsort((cand < 0, np.abs(cand)))
    lag = int(cand[order[0]])
    return DelayResult(lag, lag * float(delta_t_ms), shifts, curve)


# -- Kruskal-Wallis ------------------------------------------------------------

def _gamma_series(a: float, x: float) -> float:
    # lower regularized P(a, x)
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(10_000):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * 1e-16:
            break
    return total * math.exp(-x + a * math.log(x) - math.lgamma(a))


def _gamma_cf(a: float, x: float) -> float:
    # upper regularized Q(a, x) by Lentz's continued fraction
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10_000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return math.exp(-x + a * math.log(x) - math.lgamma(a)) * h


def gamma_q(a: float, x: float) -> float:
    """Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a)."""
    if a <= 0:
        raise ValueError("gamma_q needs a > 0")
    if x <= 0:
        return 1.0
    if x < a + 1.0:
        return 1.0 - _gamma_series(a, x)
    return _gamma_cf(a, x)


def chi2_sf(x: float, df: int) -> float:
    return gamma_q(df / 2.0, x / 2.0)


def rankdata(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    v = np.asarray(values, dtype=np.float64)
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    ranks = np.empty(v.size)
    starts = np.flatnonzero(np.r_[True, sv[1:] != sv[:-1]])
    ends = np.r_[starts[1:], v.size]
    for s, e in zip(starts, ends):
        ranks[order[s:e]] = (s + e + 1) / 2.0
    return ranks


def kruskal_wallis(groups) -> tuple[float, float]:
    """Tie-corrected H statistic and its chi-square (k - 1 df) p-value."""
    gs = [np.asarray(g, dtype=np.float64).reshape(-1) for g in groups]
    if len(gs) < 2 or any(g.size == 0 for g in gs):
        raise InsufficientData("Kruskal-Wallis needs at least 2 non-empty groups")
    allv = np.concatenate(gs)
    N = allv.size
    if N < 3:
        raise InsufficientData("Kruskal-Wallis needs at least 3 observations")
    ranks = rankdata(allv)
    h = 0.0
    pos = 0
    for g in gs:
        r = ranks[pos:pos + g.size]
        h += r.sum() ** 2 / g.size
        pos += g.size
    h = 12.0 / (N * (N + 1)) * h - 3.0 * (N + 1)
    _, counts = np.unique(allv, return_counts=True)
    corr = 1.0 - float(np.sum(counts ** 3 - counts)) / (N ** 3 - N)
    if corr <= 0:
        return 0.0, 1.0  # every value tied
    h = max(h / corr, 0.0)
    return float(h), min(1.0, chi2_sf(h, len(gs) - 1))


def sem(values) -> float:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    if v.size < 2:
        raise InsufficientData("standard error needs at least 2 values")
    return float(v.std(ddof=1) / np.sqrt(v.size))


# -- reports --------------------------------------------------------------------

@dataclass
class MetricsReport:
    model: str
    rmse_per_dof: list[float]
    rmse_total: float
    r2_per_dof: list[float]
    r2_mean: float
    delay_steps: int
    delay_ms: float
    n_steps: int
    baseline_rmse_deg: float | None = None
    kruskal: dict = field(default_factory=dict)
    lag_shifts: list[int] = field(default_factory=list)
    lag_curve: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)


def evaluate(model: str, pred, truth, cmap: CalibrationMap, max_lag_steps: int = 40,
             baseline=None, delta_t_ms: float = DELTA_T_MS) -> MetricsReport:
    """Full report; ``baseline`` is a constant per-DoF predictor (e.g. the training mean)."""
    p, t = _pair(pred, truth)
    per, total = rmse_angular(p, t, cmap)
    r2 = _r2(p, t)
    lag = min(max_lag_steps, (p.shape[0] - 1) // 2)
    d = response_delay(p, t, lag, delta_t_ms)
    base = None
    if baseline is not None:
        base = rmse_angular(np.broadcast_to(np.asarray(baseline, dtype=np.float64), t.shape), t,
                            cmap)[1]
    return MetricsReport(
        model=model,
        rmse_per_dof=[float(x) for x in per],
        rmse_total=total,
        r2_per_dof=[float(x) for x in r2],
        r2_mean=float(np.nanmean(r2)),
        delay_steps=d.lag_steps,
        delay_ms=d.lag_ms,
        n_steps=int(p.shape[0]),
        baseline_rmse_deg=base,
        lag_shifts=[int(s) for s in d.shifts],
        lag_curve=[float(c) for c in d.curve],
    )
