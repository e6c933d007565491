"""Experiment protocols: standard cued session, freeform offline split and the
online reinforcement loop.

Every prediction at step ``k`` uses only EMG samples before ``k * 25 ms``
(see :func:`myodec.signal.step_features`) and a model trained on data that
ends before the evaluated segment starts.
"""
from __future__ import annotations

import copy
import queue
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import (
    BudgetExceeded,
    SessionTooShort,
    UnsupportedModel,
    WrongTrialCount,
)
from .kinematics import KIN_RATE_HZ, CalibrationMap
from .metrics import MetricsReport, evaluate, r2_nan, response_delay, rmse_angular
from .models import SEQUENTIAL_KINDS, MODEL_KINDS, SequenceSet, TrainReport, create_model
from .session import SAMPLES_PER_STEP, SessionLog
from .signal import StreamingExtractor, step_features
from .simulator import SyntheticSubject, gen_freeform_session

ORACLE = "oracle"
BUDGET_MS = 25.0


@dataclass
class ModelRun:
    kind: str
    report: MetricsReport
    steps: np.ndarray
    pred: np.ndarray
    truth: np.ndarray
    train: TrainReport | None = None
    model: object = None


@dataclass
class ProtocolResult:
    protocol: str
    runs: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def reports(self) -> dict:
        return {k: r.report for k, r in self.runs.items()}


class FeatureCache:
    """Step-aligned TD5 matrices of one session, one per window length."""

    def __init__(self, session: SessionLog, cfg: RunConfig):
        self.session = session
        self.cfg = cfg
        self._cache: dict = {}

    def get(self, window_ms: int):
        if window_ms not in self._cache:
            s = self.cfg.signal
            self._cache[window_ms] = step_features(
                self.session.emg, self.session.n_steps, window_ms, s.delta_t_ms, s.rate_hz,
                s.eps_zc, s.eps_ssc)
        return self._cache[window_ms]


def pair_set(features: np.ndarray, first: int, targets: np.ndarray, seq_len: int,
             ends) -> SequenceSet:
    """(sequence, target) pairs ending at the given steps; steps without full history are dropped."""
    ends = np.asarray(ends, dtype=np.int64)
    ends = ends[ends >= first + seq_len - 1]
    return SequenceSet(features, targets, ends, seq_len)


def _kinds(kinds) -> list[str]:
    out = [k.strip() for k in (kinds.split(",") if isinstance(kinds, str) else kinds) if k.strip()]
    for k in out:
        if k not in MODEL_KINDS and k != ORACLE:
            raise UnsupportedModel(f"unknown model kind {k!r}")
    return out


def fit_and_test(kind: str, session: SessionLog, cache: FeatureCache, train_ends, test_ends,
                 cfg: RunConfig, seed: int = 0) -> ModelRun:
    """Train ``kind`` on pairs ending at ``train_ends``; predict every step in ``test_ends``."""
    tr = cfg.training
    train_ends = np.asarray(train_ends, dtype=np.int64)
    test_ends = np.asarray(test_ends, dtype=np.int64)
    baseline = session.phi[train_ends].mean(axis=0)
    if kind == ORACLE:
        pred = session.phi[test_ends].copy()
        rep = evaluate(kind, pred, session.phi[test_ends], session.calibration,
                       cfg.protocol.max_lag_steps, baseline, cfg.signal.delta_t_ms)
        return ModelRun(kind, rep, test_ends, pred, session.phi[test_ends].copy())
    mcfg = cfg.model(kind)
    feats, first = cache.get(mcfg.window_ms)
    model = create_model(kind, feats.shape[1], session.phi.shape[1], cfg, seed)
    train = pair_set(feats, first, session.phi, mcfg.sequence, train_ends)
    train = train.strided(tr.train_stride)
    report = model.train(train, batch_size=tr.batch_size, seed=seed, lr=tr.lr)
    test = pair_set(feats, first, session.phi, mcfg.sequence, test_ends)
    if len(test) != test_ends.size:
        raise SessionTooShort(f"{kind}: test segment starts before the model has full history")
    pred = model.predict_set(test)
    truth = session.phi[test_ends]
    rep = evaluate(kind, pred, truth, session.calibration, cfg.protocol.max_lag_steps, baseline,
                   cfg.signal.delta_t_ms)
    return ModelRun(kind, rep, test_ends, pred, truth.copy(), report, model)


def run_standard(session: SessionLog, kinds=("tcn", "lstm", "svr"), cfg: RunConfig | None = None,
                 seed: int = 0) -> ProtocolResult:
    """Train on trials 1-2, test on trial 3."""
    cfg = cfg or RunConfig()
    n_trials = cfg.protocol.standard_trials
    if len(session.trials) != n_trials:
        raise WrongTrialCount(f"standard protocol needs {n_trials} trials, got {len(session.trials)}")
    cache = FeatureCache(session, cfg)
    train_ends = np.concatenate([np.arange(a, b) for a, b in session.trials[:-1]])
    test_ends = np.arange(*session.trials[-1])
    res = ProtocolResult("standard", meta={"seed": seed, "config": cfg.digest(),
                                           "session": dict(session.meta)})
    for kind in _kinds(kinds):
        res.runs[kind] = fit_and_test(kind, session, cache, train_ends, test_ends, cfg, seed)
    return res


def freeform_split(session: SessionLog, cfg: RunConfig, shuffled: bool = False, seed: int = 0):
    """Time-ordered split at the first step of the last ``1 - train_fraction``.

    ``shuffled=True`` assigns steps to train/test at random instead; it exists
    only as a deliberately leaky fixture for :func:`leakage_audit`.
    """
    K = session.n_steps
    split = int(round(cfg.protocol.train_fraction * K))
    if not shuffled:
        return np.arange(0, split), np.arange(split, K)
    perm = np.random.default_rng([seed, 99]).permutation(K)
    return np.sort(perm[:split]), np.sort(perm[split:])


def run_freeform_offline(session: SessionLog, kinds=("tcn", "lstm", "svr"),
                         cfg: RunConfig | None = None, seed: int = 0,
                         shuffled: bool = False) -> ProtocolResult:
    cfg = cfg or RunConfig()
    if session.duration_s < cfg.protocol.min_freeform_s:
        raise SessionTooShort(
            f"freeform analysis needs {cfg.protocol.min_freeform_s} s, session has "
            f"{session.duration_s:.1f} s")
    cache = FeatureCache(session, cfg)
    train_ends, test_ends = freeform_split(session, cfg, shuffled, seed)
    kinds = _kinds(kinds)
    # the test set must be predictable by every model: drop warm-up steps
    need = max([cache.get(cfg.model(k).window_ms)[1] + cfg.model(k).sequence - 1
                for k in kinds if k != ORACLE] + [0])
    test_ends = test_ends[test_ends >= need]
    res = ProtocolResult("freeform-shuffled" if shuffled else "freeform",
                         meta={"seed": seed, "config": cfg.digest(), "session": dict(session.meta),
                               "split_step": int(train_ends.max() + 1) if not shuffled else None})
    for kind in kinds:
        res.runs[kind] = fit_and_test(kind, session, cache, train_ends, test_ends, cfg, seed)
    return res


def run_sono(session: SessionLog, kind: str = "tcn", cfg: RunConfig | None = None,
             seed: int = 0) -> ProtocolResult:
    """Finger regression from ultrasound images, time-ordered split like freeform.

    The variance mask is fitted on the training images only.
    """
    from .sono import FINGER_DOFS, fit_pipeline

    cfg = cfg or RunConfig()
    if session.sono is None:
        raise SessionTooShort("session carries no ultrasound images")
    if kind not in SEQUENTIAL_KINDS:
        raise UnsupportedModel(f"sono regression uses a sequential model, not {kind!r}")
    train_ends, test_ends = freeform_split(session, cfg)
    pipe = fit_pipeline(session.sono[train_ends], cfg.sono)
    feats = pipe.features(session.sono)
    dofs = list(FINGER_DOFS)
    phi = session.phi[:, dofs]
    cm = session.calibration
    cmap = CalibrationMap(cm.rho_min[dofs], cm.rho_max[dofs], cm.theta_min[dofs],
                          cm.theta_max[dofs])
    mcfg = cfg.model(kind)
    test_ends = test_ends[test_ends >= mcfg.sequence - 1]
    baseline = phi[train_ends].mean(axis=0)
    model = create_model(kind, feats.shape[1], len(dofs), cfg, seed)
    train = pair_set(feats, 0, phi, mcfg.sequence, train_ends).strided(cfg.training.train_stride)
    report = model.train(train, batch_size=cfg.training.batch_size, seed=seed, lr=cfg.training.lr)
    pred = model.predict_set(pair_set(feats, 0, phi, mcfg.sequence, test_ends))
    truth = phi[test_ends]
    rep = evaluate(kind, pred, truth, cmap, cfg.protocol.max_lag_steps, baseline,
                   cfg.signal.delta_t_ms)
    res = ProtocolResult("sono", meta={"seed": seed, "config": cfg.digest(),
                                       "session": dict(session.meta),
                                       "n_features": int(feats.shape[1]),
                                       "reduction": pipe.reduction})
    res.runs[kind] = ModelRun(kind, rep, test_ends, pred, truth.copy(), report, model)
    return res


@dataclass
class LeakageAudit:
    kind: str
    ordered_r2: float
    shuffled_r2: float
    threshold: float

    @property
    def gap(self) -> float:
        return self.shuffled_r2 - self.ordered_r2

    @property
    def flagged(self) -> bool:
        return self.gap > self.threshold


def leakage_probe_config(cfg: RunConfig | None = None) -> RunConfig:
    """A narrow-kernel SVR on every training step.

    The probe interpolates between temporal neighbours, so a split that puts
    neighbours of test steps in the training set lifts its r^2 sharply.  The
    default smooth SVR barely notices on a stationary subject.
    """
    cfg = copy.deepcopy(cfg or RunConfig())
    cfg.svr.gamma = 0.03
    cfg.svr.max_train = 4000
    cfg.training.train_stride = 1
    return cfg


def leakage_audit(session: SessionLog, kind: str = "svr", cfg: RunConfig | None = None,
                  seed: int = 0, threshold: float = 0.15) -> LeakageAudit:
    """Compare time-ordered and shuffled splits; a large r^2 jump betrays leakage.

    Without ``cfg`` the probe of :func:`leakage_probe_config` is used.
    """
    cfg = cfg or leakage_probe_config()
    a = run_freeform_offline(session, [kind], cfg, seed).runs[kind].report.r2_mean
    b = run_freeform_offline(session, [kind], cfg, seed, shuffled=True).runs[kind].report.r2_mean
    return LeakageAudit(kind, a, b, threshold)


# -- online reinforcement ---------------------------------------------------------

@dataclass
class TrialMetrics:
    trial: int
    rmse_deg: float
    r2: float
    delay_ms: float
    n_steps: int
    update_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReinforcementResult:
    kind: str
    trials: list[TrialMetrics]
    init_report: TrainReport | None
    latencies_ms: np.ndarray
    predictions: list[np.ndarray] = field(default_factory=list)
    truths: list[np.ndarray] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def latency_percentiles(self, qs=(50, 90, 99)) -> dict:
        lat = self.latencies_ms
        if lat.size == 0:
            return {f"p{q}": 0.0 for q in qs}
        return {f"p{q}": float(np.percentile(lat, q)) for q in qs}


@dataclass
class TrialBlock:
    """Raw data of consecutive steps ``start .. start + len(phi) - 1``.

    ``emg`` holds the samples that arrive before each step: 50 per step,
    except that step 0 has none.
    """

    start: int
    emg: np.ndarray
    phi: np.ndarray


def session_blocks(session: SessionLog, bounds) -> list[TrialBlock]:
    out = []
    for a, b in bounds:
        lo = max(0, SAMPLES_PER_STEP * (a - 1))
        out.append(TrialBlock(a, session.emg[lo:SAMPLES_PER_STEP * (b - 1)], session.phi[a:b]))
    return out


class ReinforcementLoop:
    """Streaming decoder with between-trial fine-tuning and discard-after-update.

    Retained state is the model, the extractor's one-window ring and the last
    ``L`` feature vectors; trial data lives only inside :meth:`run_trial`.
    """

    def __init__(self, kind: str, cfg: RunConfig, seed: int = 0, n_channels: int = 16,
                 n_outputs: int = 7):
        if kind not in SEQUENTIAL_KINDS:
            raise UnsupportedModel(f"reinforcement needs a sequential model, not {kind!r}")
        self.kind = kind
        self.cfg = cfg
        self.seed = seed
        mcfg = cfg.model(kind)
        s = cfg.signal
        self.model = create_model(kind, n_channels * 5, n_outputs, cfg, seed)
        self.extractor = StreamingExtractor(n_channels, mcfg.window_ms, s.delta_t_ms, s.rate_hz,
                                            s.eps_zc, s.eps_ssc)
        self.ring: deque = deque(maxlen=mcfg.sequence)
        self.trials_done = 0

    # state ----------------------------------------------------------------------
    def snapshot(self) -> dict:
        return {"model": self.model.to_bytes(), "extractor": self.extractor.state_dict(),
                "ring": [v.copy() for v in self.ring], "trials_done": self.trials_done}

    def restore(self, snap: dict) -> None:
        from .models import checkpoint_load

        self.model = checkpoint_load(snap["model"])
        self.extractor.load_state_dict(snap["extractor"])
        self.ring.clear()
        self.ring.extend(v.copy() for v in snap["ring"])
        self.trials_done = snap["trials_done"]

    def state_nbytes(self) -> int:
        snap = self.snapshot()
        return (len(snap["model"]) + snap["extractor"]["buf"].nbytes
                + snap["extractor"]["buf_t"].nbytes + sum(v.nbytes for v in snap["ring"]))

    # streaming ------------------------------------------------------------------
    def _step(self, k: int, chunk: np.ndarray, predict: bool):
        """Consume the samples preceding step ``k``; return a prediction or None."""
        if chunk.shape[0]:
            t0 = SAMPLES_PER_STEP * (k - 1)
            t_us = (np.arange(t0, t0 + chunk.shape[0]) * self.extractor.period_us)
            for fv in self.extractor.push_block(t_us, chunk):
                self.ring.append(fv.values)
        if len(self.ring) < self.ring.maxlen:
            return None, None
        seq = np.stack(self.ring)
        if not predict:
            return None, seq
        return self.model.predict_batch(seq[None])[0], seq

    def _chunks(self, block: TrialBlock):
        pos = 0
        for i in range(block.phi.shape[0]):
            k = block.start + i
            n = SAMPLES_PER_STEP if k > 0 else 0
            yield k, block.emg[pos:pos + n]
            pos += n

    def _collect(self, block: TrialBlock, predict: bool, realtime: bool = False,
                 strict: bool = False):
        X, Y, preds, steps, lat = [], [], [], [], []
        if realtime:
            source = _paced(self._chunks(block), self.cfg.signal.delta_t_ms / 1000.0)
        else:
            source = ((k, c, None) for k, c in self._chunks(block))
        for k, chunk, _ in source:
            t0 = time.perf_counter()
            p, seq = self._step(k, chunk, predict)
            dt_ms = (time.perf_counter() - t0) * 1000.0
            if seq is None:
                continue
            lat.append(dt_ms)
            if strict and dt_ms > BUDGET_MS:
                raise BudgetExceeded(f"step {k} took {dt_ms:.2f} ms (> {BUDGET_MS} ms budget)")
            X.append(seq)
            Y.append(block.phi[k - block.start])
            steps.append(k)
            if p is not None:
                preds.append(p)
        return X, Y, preds, steps, lat

    def _train_set(self, X, Y) -> SequenceSet:
        return SequenceSet.from_arrays(np.stack(X), np.stack(Y)).strided(
            self.cfg.training.train_stride)

    def initialize(self, block: TrialBlock) -> TrainReport:
        X, Y, _, _, _ = self._collect(block, predict=False)
        tr = self.cfg.training
        report = self.model.train(self._train_set(X, Y), batch_size=tr.batch_size,
                                  seed=self.seed, lr=tr.lr)
        return report

    def run_trial(self, block: TrialBlock, calibration, realtime: bool = False,
                  strict: bool = False):
        """Predict online through one trial, then update on it and drop its data."""
        X, Y, preds, steps, lat = self._collect(block, True, realtime, strict)
        pred = np.stack(preds)
        truth = np.stack(Y)
        _, rmse = rmse_angular(pred, truth, calibration)
        r2 = float(np.nanmean(r2_nan(pred, truth)))
        lag = min(self.cfg.protocol.max_lag_steps, (len(steps) - 1) // 2)
        delay = response_delay(pred, truth, lag, self.cfg.signal.delta_t_ms).lag_ms
        self.trials_done += 1
        t0 = time.perf_counter()
        tr = self.cfg.training
        self.model.reinforce_update(self._train_set(X, Y), epochs=tr.update_epochs,
                                    batch_size=tr.batch_size, seed=self.seed + self.trials_done,
                                    lr=tr.lr)
        upd = time.perf_counter() - t0
        del X, Y  # discard-after-update: nothing from this trial is retained
        tm = TrialMetrics(self.trials_done, rmse, r2, delay, len(steps), upd)
        return tm, pred, truth, np.asarray(lat)


def _paced(chunks, period_s: float, maxsize: int = 8):
    """Replay chunks at wall-clock pace through a producer thread and a bounded queue."""
    q: queue.Queue = queue.Queue(maxsize=maxsize)
    done = object()

    def produce():
        t_next = time.perf_counter()
        for k, c in chunks:
            t_next += period_s
            delay = t_next - time.perf_counter()
            if delay > 0:
                time.sleep(delay)
            q.put((k, c, time.perf_counter()))  # blocks when the decoder falls behind
        q.put(done)

    th = threading.Thread(target=produce, daemon=True)
    th.start()
    while True:
        item = q.get()
        if item is done:
            break
        yield item
    th.join()


def reinforcement_bounds(cfg: RunConfig, init_s=None, trials=None, trial_s=None):
    p = cfg.protocol
    init_s = p.init_s if init_s is None else init_s
    trials = p.trials if trials is None else trials
    trial_s = p.trial_s if trial_s is None else trial_s
    n_init = int(round(init_s * KIN_RATE_HZ))
    n_trial = int(round(trial_s * KIN_RATE_HZ))
    bounds = [(0, n_init)] + [(n_init + i * n_trial, n_init + (i + 1) * n_trial)
                              for i in range(trials)]
    return bounds


def run_reinforcement(source, kind: str = "tcn", cfg: RunConfig | None = None, seed: int = 0,
                      init_s: float | None = None, trials: int | None = None,
                      trial_s: float | None = None, realtime: bool = False, strict: bool = False,
                      record_dir=None, delete_recorded: bool = False) -> ReinforcementResult:
    """1 init block, then ``trials`` predict-then-update blocks.

    ``source`` is a :class:`SyntheticSubject` (a stationary freeform session is
    generated from ``seed``) or a recorded :class:`SessionLog`.  With
    ``record_dir`` every block is written there before use; ``delete_recorded``
    removes each file right after its update, which must not change anything.
    """
    cfg = cfg or RunConfig()
    if kind not in SEQUENTIAL_KINDS:
        raise UnsupportedModel(f"reinforcement needs a sequential model, not {kind!r}")
    bounds = reinforcement_bounds(cfg, init_s, trials, trial_s)
    total_s = bounds[-1][1] / KIN_RATE_HZ
    if isinstance(source, SyntheticSubject):
        session = gen_freeform_session(source, total_s, seed, cfg.simulator.freeform_cutoff_hz)
    else:
        session = source
        if session.n_steps < bounds[-1][1]:
            raise SessionTooShort(f"reinforcement needs {total_s} s of recording")
    cal = session.calibration
    blocks = session_blocks(session, bounds)
    del session
    loop = ReinforcementLoop(kind, cfg, seed, blocks[0].emg.shape[1], blocks[0].phi.shape[1])
    result = ReinforcementResult(kind, [], None, np.zeros(0),
                                 meta={"seed": seed, "config": cfg.digest(), "realtime": realtime})
    lats = []
    for i, block in enumerate(blocks):
        path = None
        if record_dir is not None:
            path = _record_block(block, Path(record_dir), i)
            block = _load_block(path)
        if i == 0:
            result.init_report = loop.initialize(block)
        else:
            tm, pred, truth, lat = loop.run_trial(block, cal, realtime, strict)
            result.trials.append(tm)
            result.predictions.append(pred)
            result.truths.append(truth)
            lats.append(lat)
        blocks[i] = None  # the loop keeps no reference to past trial data
        if path is not None and delete_recorded:
            path.unlink()
        del block
    result.latencies_ms = np.concatenate(lats) if lats else np.zeros(0)
    result.meta["state_nbytes"] = loop.state_nbytes()
    return result


def _record_block(block: TrialBlock, d: Path, i: int) -> Path:
    d.mkdir(parents=True, exist_ok=True)
    path = d / f"trial_{i:02d}.npz"
    np.savez(path, start=block.start, emg=block.emg, phi=block.phi)
    return path


def _load_block(path: Path) -> TrialBlock:
    with np.load(path) as z:
        return TrialBlock(int(z["start"]), z["emg"].copy(), z["phi"].copy())
