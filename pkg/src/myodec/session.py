"""Synchronized EMG + kinematics recording."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaMismatch
from .kinematics import CalibrationMap
from .signal import RATE_HZ, SAMPLE_PERIOD_US

STEP_US = 25_000
SAMPLES_PER_STEP = STEP_US // SAMPLE_PERIOD_US


@dataclass
class SessionLog:
    """EMG at 2 kHz and kinematics at 40 Hz on one clock starting at t = 0.

    ``trials`` holds half-open kinematic step ranges ``(start, end)``.  Step
    ``k`` sits at ``k * 25 ms`` and EMG sample ``i`` at ``i * 0.5 ms``, so
    step ``k`` is preceded by exactly ``50 k`` EMG samples.
    """

    emg: np.ndarray              # (n_samples, channels)
    rho: np.ndarray              # (n_steps, 7) raw glove units
    phi: np.ndarray              # (n_steps, 7) normalized
    calibration: CalibrationMap
    trials: list[tuple[int, int]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    sono: np.ndarray | None = None  # (n_steps, H, W) images, optional

    def __post_init__(self):
        self.emg = np.asarray(self.emg, dtype=np.float64)
        self.rho = np.asarray(self.rho, dtype=np.float64)
        self.phi = np.asarray(self.phi, dtype=np.float64)
        self.trials = [(int(a), int(b)) for a, b in self.trials]
        if self.rho.shape != self.phi.shape or self.rho.ndim != 2:
            raise SchemaMismatch(f"rho {self.rho.shape} and phi {self.phi.shape} disagree")
        if self.emg.ndim != 2 or self.emg.shape[0] < SAMPLES_PER_STEP * (self.n_steps - 1):
            raise SchemaMismatch("EMG does not cover every kinematic step")
        prev = 0
        for a, b in self.trials:
            if not (prev <= a < b <= self.n_steps):
                raise SchemaMismatch(f"trial bounds {(a, b)} overlap or fall outside the session")
            prev = b
        if self.sono is not None and self.sono.shape[0] != self.n_steps:
            raise SchemaMismatch("one ultrasound image per kinematic step is required")

    @property
    def n_steps(self) -> int:
        return self.rho.shape[0]

    @property
    def n_channels(self) -> int:
        return self.emg.shape[1]

    @property
    def emg_t_us(self) -> np.ndarray:
        return np.arange(self.emg.shape[0], dtype=np.int64) * SAMPLE_PERIOD_US

    @property
    def kin_t_us(self) -> np.ndarray:
        return np.arange(self.n_steps, dtype=np.int64) * STEP_US

    @property
    def duration_s(self) -> float:
        return self.emg.shape[0] / RATE_HZ

    def trial_slice(self, k: int) -> slice:
        a, b = self.trials[k]
        return slice(a, b)

    def equals(self, other: "SessionLog") -> bool:
        """Bit-exact comparison of every array, bound and metadata value."""
        def same(a, b):
            return a.shape == b.shape and a.tobytes() == b.tobytes()
        c, d = self.calibration, other.calibration
        ok = (same(self.emg, other.emg) and same(self.rho, other.rho) and same(self.phi, other.phi)
              and all(same(getattr(c, f), getattr(d, f))
                      for f in ("rho_min", "rho_max", "theta_min", "theta_max"))
              and self.trials == other.trials and self.meta == other.meta)
        if (self.sono is None) != (other.sono is None):
            return False
        return ok and (self.sono is None or same(self.sono, other.sono))
