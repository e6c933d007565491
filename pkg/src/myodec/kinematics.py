"""Per-DoF calibration and the raw -> angle / raw -> [0, 1] mappings."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRange, InsufficientData, UncalibratedDof, ValidationError

N_DOF = 7
KIN_RATE_HZ = 40
DOF_NAMES = (
    "wrist_flex_ext",
    "wrist_add_abd",
    "thumb",
    "index",
    "middle",
    "ring",
    "little",
)
# degrees; anatomically plausible spans, configurable per DoF
DEFAULT_THETA_RANGES = (
    (-60.0, 60.0),
    (-25.0, 35.0),
    (0.0, 90.0),
    (0.0, 90.0),
    (0.0, 90.0),
    (0.0, 90.0),
    (0.0, 90.0),
)
DEGENERATE_EPS = 1e-6
CALIBRATION_S = 15.0


@dataclass(frozen=True)
class CalibrationMap:
    rho_min: np.ndarray
    rho_max: np.ndarray
    theta_min: np.ndarray
    theta_max: np.ndarray

    def __post_init__(self):
        for name in ("rho_min", "rho_max", "theta_min", "theta_max"):
            arr = np.array(getattr(self, name), dtype=np.float64)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.rho_min.size
        if any(getattr(self, f).size != n for f in ("rho_max", "theta_min", "theta_max")):
            raise ValidationError("calibration arrays must share one length")
        ok = np.isfinite(self.rho_min) & np.isfinite(self.rho_max)
        if np.any(self.rho_min[ok] >= self.rho_max[ok]):
            raise DegenerateRange("rho_min must be below rho_max")
        if np.any(self.theta_min >= self.theta_max):
            raise ValidationError("theta_min must be below theta_max")

    @property
    def n_dof(self) -> int:
        return self.rho_min.size

    @property
    def theta_span(self) -> np.ndarray:
        return self.theta_max - self.theta_min

    def _check(self, dof: int) -> None:
        if not 0 <= dof < self.n_dof or not np.isfinite(self.rho_min[dof]):
            raise UncalibratedDof(f"DoF {dof} has no calibration")

    def normalize_all(self, rho: np.ndarray) -> np.ndarray:
        """Vectorized :func:`normalize` over a (..., n_dof) array."""
        if not np.all(np.isfinite(self.rho_min)):
            raise UncalibratedDof("calibration map has uncalibrated DoFs")
        phi = (np.asarray(rho, dtype=np.float64) - self.rho_min) / (self.rho_max - self.rho_min)
        return np.clip(phi, 0.0, 1.0)

    def degrees_all(self, phi: np.ndarray) -> np.ndarray:
        return self.theta_min + np.asarray(phi, dtype=np.float64) * self.theta_span


def calibrate(
    raw: np.ndarray,
    duration_s: float = CALIBRATION_S,
    rate_hz: float = KIN_RATE_HZ,
    theta_ranges=DEFAULT_THETA_RANGES,
    eps: float = DEGENERATE_EPS,
) -> CalibrationMap:
    """Observed per-DoF extremes over the first ``duration_s`` of a raw glove stream."""
    rho = np.asarray(raw, dtype=np.float64)
    if rho.ndim != 2 or rho.shape[1] != len(theta_ranges):
        raise ValidationError(f"expected (steps, {len(theta_ranges)}) raw stream, got {rho.shape}")
    need = int(round(duration_s * rate_hz))
    if rho.shape[0] < need:
        raise InsufficientData(
            f"calibration needs {duration_s} s ({need} steps), stream has {rho.shape[0]}"
        )
    seg = rho[:need]
    lo, hi = seg.min(axis=0), seg.max(axis=0)
    bad = np.flatnonzero(hi - lo < eps)
    if bad.size:
        raise DegenerateRange(f"DoF(s) {bad.tolist()} span less than {eps} raw units")
    th = np.asarray(theta_ranges, dtype=np.float64)
    return CalibrationMap(lo, hi, th[:, 0], th[:, 1])


def normalize(rho: float, cmap: CalibrationMap, dof: int) -> float:
    cmap._check(dof)
    lo, hi = cmap.rho_min[dof], cmap.rho_max[dof]
    return float(np.clip((rho - lo) / (hi - lo), 0.0, 1.0))


def to_degrees(phi: float, cmap: CalibrationMap, dof: int) -> float:
    cmap._check(dof)
    return float(cmap.theta_min[dof] + phi * (cmap.theta_max[dof] - cmap.theta_min[dof]))
