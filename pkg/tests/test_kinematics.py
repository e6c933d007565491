from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from myodec.errors import DegenerateRange, UncalibratedDof
from myodec.kinematics import (
    CALIBRATION_S,
    DEFAULT_THETA_RANGES,
    CalibrationMap,
    calibrate,
    normalize,
    to_degrees,
)


def _sweep(lo=10.0, hi=50.0, n=600):
    tri = np.concatenate([np.linspace(lo, hi, n // 2), np.linspace(hi, lo, n - n // 2)])
    return np.tile(tri[:, None], (1, 7))


def test_calibrate_extremes():
    cm = calibrate(_sweep())
    np.testing.assert_array_equal(cm.rho_min, 10.0)
    np.testing.assert_array_equal(cm.rho_max, 50.0)
    assert CALIBRATION_S == 15.0
    np.testing.assert_array_equal(np.c_[cm.theta_min, cm.theta_max], DEFAULT_THETA_RANGES)


def test_calibrate_degenerate():
    raw = _sweep()
    raw[:, 3] = 4.0
    with pytest.raises(DegenerateRange):
        calibrate(raw)


def test_normalize_and_degrees():
    cm = calibrate(_sweep())
    assert normalize(10.0, cm, 0) == 0.0
    assert normalize(50.0, cm, 0) == 1.0
    assert normalize(30.0, cm, 2) == 0.5
    assert normalize(60.0, cm, 2) == 1.0
    assert to_degrees(0.0, cm, 0) == -60.0 and to_degrees(1.0, cm, 0) == 60.0
    assert to_degrees(0.5, cm, 0) == 0.0
    with pytest.raises(UncalibratedDof):
        normalize(1.0, cm, 7)
    nan = CalibrationMap([np.nan] * 7, [np.nan] * 7, cm.theta_min, cm.theta_max)
    with pytest.raises(UncalibratedDof):
        to_degrees(0.5, nan, 1)


@given(st.floats(0, 60), st.floats(0, 60), st.integers(0, 6))
def test_monotone_and_affine(r1, r2, dof):
    cm = calibrate(_sweep())
    a, b = sorted([r1, r2])
    assert normalize(a, cm, dof) <= normalize(b, cm, dof)
    phi = normalize(a, cm, dof)
    assert 0.0 <= phi <= 1.0
    if 10 <= a <= 50:
        deg = to_degrees(phi, cm, dof)
        expect = cm.theta_min[dof] + (a - 10) / 40 * cm.theta_span[dof]
        assert deg == pytest.approx(expect, abs=1e-9)


def test_vectorized_matches_scalar(rng):
    cm = calibrate(_sweep())
    rho = rng.uniform(0, 60, (20, 7))
    phi = cm.normalize_all(rho)
    for i in range(20):
        for j in range(7):
            assert phi[i, j] == normalize(rho[i, j], cm, j)
