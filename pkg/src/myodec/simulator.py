"""Seeded synthetic subject: 7-DoF trajectories and matching 16-channel EMG.

Each DoF drives a flexor/extensor muscle pair.  Muscle activation has a
tonic position term and a velocity burst term; the channel signal is
amplitude-modulated Gaussian noise whose envelope is a sparse non-negative
mix of the 14 activations plus a baseline.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as sps

from .config import SimulatorConfig
from .errors import RateMismatch, ValidationError
from .kinematics import CALIBRATION_S, DEFAULT_THETA_RANGES, KIN_RATE_HZ, N_DOF, calibrate
from .session import SessionLog
from .signal import N_CHANNELS, RATE_HZ

REST_POSE = np.array([0.5, 0.5, 0.2, 0.2, 0.2, 0.2, 0.2])

MOVEMENT_NAMES = (
    "wrist_flex", "wrist_extend", "wrist_adduct", "wrist_abduct",
    "thumb_flex", "index_flex", "middle_flex", "ring_flex", "little_flex",
    "fist", "pinch", "point",
)
REST_ID = -1

# stream tags for independent RNG substreams
_W, _GLOVE, _TRAJ, _NOISE, _ORDER = range(5)


def define_standard_movements() -> np.ndarray:
    """The 12 target poses (rows) in movement-id order; DoFs not named stay at rest."""
    poses = np.tile(REST_POSE, (12, 1))
    poses[0, 0] = 1.0
    poses[1, 0] = 0.0
    poses[2, 1] = 1.0
    poses[3, 1] = 0.0
    for j in range(5):
        poses[4 + j, 2 + j] = 1.0
    poses[9, 2:] = 1.0
    poses[10, 2:4] = 0.8
    poses[11, 2:] = 1.0
    poses[11, 3] = 0.0
    return poses


@dataclass(frozen=True)
class SyntheticSubject:
    seed: int
    W: np.ndarray            # (channels, muscles), non-negative
    kappa: float
    g_v: float
    a0: float
    rho_offset: np.ndarray   # glove raw = offset + gain * phi
    rho_gain: np.ndarray
    theta_ranges: tuple = DEFAULT_THETA_RANGES

    @property
    def n_channels(self) -> int:
        return self.W.shape[0]

    @property
    def n_muscles(self) -> int:
        return self.W.shape[1]

    def observable(self) -> bool:
        return bool(np.all(self.W.max(axis=0) > 0.1 * self.W.max()))


def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), tag])


def mixing_matrix(rng: np.random.Generator, n_channels: int, n_muscles: int, keep: int) -> np.ndarray:
    """Uniform [0, 1] weights with all but the ``keep`` largest per channel zeroed.

    Redrawn until every muscle reaches 0.1 of the overall maximum on some channel.
    """
    for _ in range(1000):
        W = rng.uniform(0.0, 1.0, size=(n_channels, n_muscles))
        cut = np.sort(W, axis=1)[:, -keep][:, None]
        W = np.where(W >= cut, W, 0.0)
        if np.all(W.max(axis=0) > 0.1 * W.max()):
            return W
    raise ValidationError("could not draw an observable mixing matrix; raise muscles_per_channel")


def make_subject(seed: int = 0, cfg: SimulatorConfig | None = None,
                 n_channels: int = N_CHANNELS) -> SyntheticSubject:
    cfg = cfg or SimulatorConfig()
    if cfg.n_muscles != 2 * N_DOF:
        raise ValidationError("the subject model needs one flexor/extensor pair per DoF")
    W = mixing_matrix(_rng(seed, _W), n_channels, cfg.n_muscles, cfg.muscles_per_channel)
    g = _rng(seed, _GLOVE)
    return SyntheticSubject(
        seed=seed, W=W, kappa=cfg.kappa, g_v=cfg.g_v, a0=cfg.a0,
        rho_offset=g.uniform(100.0, 200.0, N_DOF), rho_gain=g.uniform(50.0, 150.0, N_DOF),
    )


def muscle_activations(phi: np.ndarray, subject: SyntheticSubject) -> np.ndarray:
    """(steps, 14) activations; columns alternate flexor, extensor per DoF.

    Velocity is measured per kinematic step (25 ms at 40 Hz), so ``g_v = 1``
    weighs the burst like a 25 ms look-ahead of the position term.
    """
    phi = np.asarray(phi, dtype=np.float64)
    vel = np.gradient(phi, axis=0) if phi.shape[0] > 1 else np.zeros_like(phi)
    act = np.empty((phi.shape[0], 2 * phi.shape[1]))
    act[:, 0::2] = subject.kappa * phi + subject.g_v * np.maximum(0.0, vel)
    act[:, 1::2] = subject.kappa * (1.0 - phi) + subject.g_v * np.maximum(0.0, -vel)
    return act


def emg_synthesize(phi: np.ndarray, subject: SyntheticSubject, seed: int = 0,
                   rate_hz: int = RATE_HZ, kin_rate_hz: int = KIN_RATE_HZ) -> np.ndarray:
    """(50 * steps, channels) EMG for a (steps, 7) trajectory sampled every 25 ms."""
    ratio = rate_hz / kin_rate_hz
    if rate_hz <= 0 or kin_rate_hz <= 0 or ratio != int(ratio):
        raise RateMismatch(f"EMG rate {rate_hz} Hz is not a multiple of {kin_rate_hz} Hz")
    ratio = int(ratio)
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[1] * 2 != subject.n_muscles:
        raise ValidationError(f"expected (steps, {subject.n_muscles // 2}) trajectory")
    if np.any(phi < 0) or np.any(phi > 1):
        raise ValidationError("trajectories must lie in [0, 1]")
    act = muscle_activations(phi, subject)
    K = phi.shape[0]
    n = K * ratio
    # sample i sits at i / ratio steps; hold the last step past the end
    pos = np.arange(n) / ratio
    lo = np.minimum(pos.astype(np.int64), K - 1)
    hi = np.minimum(lo + 1, K - 1)
    frac = (pos - lo)[:, None]
    up = act[lo] * (1.0 - frac) + act[hi] * frac
    envelope = up @ subject.W.T + subject.a0
    noise = _rng(seed, _NOISE).standard_normal((n, subject.n_channels))
    return envelope * noise


def glove_raw(phi: np.ndarray, subject: SyntheticSubject) -> np.ndarray:
    return subject.rho_offset + subject.rho_gain * np.asarray(phi, dtype=np.float64)


def calibration_sweep(duration_s: float = CALIBRATION_S, kin_rate_hz: int = KIN_RATE_HZ) -> np.ndarray:
    """Every DoF ramps 0 -> 1 -> 0 once, so the sweep hits both extremes exactly."""
    n = int(round(duration_s * kin_rate_hz))
    up = np.linspace(0.0, 1.0, n // 2)
    tri = np.concatenate([up, up[::-1], np.zeros(n - 2 * up.size)])
    return np.tile(tri[:, None], (1, N_DOF))


def min_jerk(p0: np.ndarray, p1: np.ndarray, n: int) -> np.ndarray:
    """n samples of the minimum-jerk path from p0 (exclusive) to p1 (inclusive)."""
    tau = np.arange(1, n + 1) / n
    s = 10 * tau ** 3 - 15 * tau ** 4 + 6 * tau ** 5
    return p0 + np.outer(s, p1 - p0)


def _active_segment(pose, n_steps, rng, rate):
    out = []
    used = 0
    while True:
        t_in = max(1, int(round(rng.uniform(0.5, 1.5) * rate)))
        hold = int(round(rng.uniform(1.0, 3.0) * rate))
        t_out = max(1, int(round(rng.uniform(0.5, 1.5) * rate)))
        rest = int(round(rng.uniform(0.5, 1.5) * rate))
        rep = t_in + hold + t_out + rest
        if used + rep > n_steps and out:
            break
        if used + rep > n_steps:
            # a single repetition that does not fit: compress the holds
            hold = rest = 0
            t_in = t_out = max(1, n_steps // 2)
            rep = t_in + t_out
        out += [min_jerk(REST_POSE, pose, t_in), np.tile(pose, (hold, 1)),
                min_jerk(pose, REST_POSE, t_out), np.tile(REST_POSE, (rest, 1))]
        used += rep
        if used >= n_steps:
            break
    seg = np.concatenate(out)[:n_steps]
    if seg.shape[0] < n_steps:
        seg = np.concatenate([seg, np.tile(REST_POSE, (n_steps - seg.shape[0], 1))])
    return seg


def standard_trajectory(seed: int, trials: int = 3, active_s: float = 20.0, rest_s: float = 5.0,
                        kin_rate_hz: int = KIN_RATE_HZ):
    """Cued trajectory, its cue schedule and per-trial step bounds."""
    poses = define_standard_movements()
    order_rng = _rng(seed, _ORDER)
    rng = _rng(seed, _TRAJ)
    n_act = int(round(active_s * kin_rate_hz))
    n_rest = int(round(rest_s * kin_rate_hz))
    parts, schedule, bounds = [], [], []
    t = 0
    for _ in range(trials):
        start = t
        for mid in order_rng.permutation(len(poses)):
            parts.append(_active_segment(poses[mid], n_act, rng, kin_rate_hz))
            schedule.append((int(mid), t / kin_rate_hz, active_s))
            t += n_act
            parts.append(np.tile(REST_POSE, (n_rest, 1)))
            schedule.append((REST_ID, t / kin_rate_hz, rest_s))
            t += n_rest
        bounds.append((start, t))
    return np.concatenate(parts), schedule, bounds


def freeform_trajectory(duration_s: float, seed: int, cutoff_hz: float = 0.8,
                        kin_rate_hz: int = KIN_RATE_HZ) -> np.ndarray:
    """Low-pass filtered Gaussian noise per DoF, min-max scaled to [0, 1]."""
    if duration_s <= 0:
        raise ValidationError("duration must be positive")
    n = int(round(duration_s * kin_rate_hz))
    pad = 4 * kin_rate_hz
    raw = _rng(seed, _TRAJ).standard_normal((n + 2 * pad, N_DOF))
    b, a = sps.butter(4, cutoff_hz / (kin_rate_hz / 2.0))
    smooth = sps.filtfilt(b, a, raw, axis=0)[pad:pad + n]
    lo, hi = smooth.min(axis=0), smooth.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return np.clip((smooth - lo) / span, 0.0, 1.0)


def session_from_trajectory(phi: np.ndarray, subject: SyntheticSubject, seed: int,
                            trials=None, meta: dict | None = None, sono=None) -> SessionLog:
    cmap = calibrate(glove_raw(calibration_sweep(), subject), theta_ranges=subject.theta_ranges)
    rho = glove_raw(phi, subject)
    emg = emg_synthesize(phi, subject, seed)
    return SessionLog(emg=emg, rho=rho, phi=cmap.normalize_all(rho), calibration=cmap,
                      trials=list(trials or [(0, phi.shape[0])]), meta=dict(meta or {}), sono=sono)


def gen_standard_session(subject: SyntheticSubject, trials: int = 3, seed: int = 0,
                         active_s: float = 20.0, rest_s: float = 5.0) -> SessionLog:
    phi, _, bounds = standard_trajectory(seed, trials, active_s, rest_s)
    meta = {"protocol": "standard", "seed": seed, "subject_seed": subject.seed,
            "active_s": active_s, "rest_s": rest_s}
    return session_from_trajectory(phi, subject, seed, bounds, meta)


def gen_freeform_session(subject: SyntheticSubject, duration_s: float, seed: int = 0,
                         cutoff_hz: float = 0.8) -> SessionLog:
    phi = freeform_trajectory(duration_s, seed, cutoff_hz)
    meta = {"protocol": "freeform", "seed": seed, "subject_seed": subject.seed,
            "cutoff_hz": cutoff_hz}
    return session_from_trajectory(phi, subject, seed, None, meta)


def gen_sono_session(subject: SyntheticSubject, duration_s: float, seed: int = 0,
                     cutoff_hz: float = 0.8, height: int = 32, width: int = 32) -> SessionLog:
    """Freeform session that also carries one synthetic ultrasound image per step."""
    from .sono import blob_images

    phi = freeform_trajectory(duration_s, seed, cutoff_hz)
    meta = {"protocol": "sono", "seed": seed, "subject_seed": subject.seed,
            "cutoff_hz": cutoff_hz}
    return session_from_trajectory(phi, subject, seed, None, meta,
                                   sono=blob_images(phi, height, width, seed))
