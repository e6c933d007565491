from __future__ import annotations

import numpy as np
import pytest

from myodec.config import SimulatorConfig
from myodec.errors import RateMismatch, ValidationError
from myodec.signal import batch_features
from myodec.simulator import (
    MOVEMENT_NAMES,
    REST_ID,
    define_standard_movements,
    emg_synthesize,
    freeform_trajectory,
    gen_freeform_session,
    gen_standard_session,
    make_subject,
    muscle_activations,
    standard_trajectory,
)


def test_subject_invariants():
    for seed in range(8):
        s = make_subject(seed)
        assert s.W.shape == (16, 14) and np.all(s.W >= 0)
        assert np.all(s.W.max(axis=0) > 0.1 * s.W.max())
        assert np.all((s.W > 0).sum(axis=1) == 4)
    assert np.array_equal(make_subject(3).W, make_subject(3).W)
    with pytest.raises(ValidationError):
        make_subject(0, SimulatorConfig(n_muscles=12))


def test_standard_schedule():
    phi, schedule, bounds = standard_trajectory(seed=1)
    assert bounds == [(0, 12000), (12000, 24000), (24000, 36000)]
    assert bounds[0][1] / 40 == 12 * (20 + 5) == 300
    active = [m for m, _, _ in schedule if m != REST_ID]
    assert sorted(active) == sorted(list(range(12)) * 3)
    for k in range(3):
        trial = active[12 * k:12 * (k + 1)]
        assert sorted(trial) == list(range(12))
    starts = [s for _, s, _ in schedule]
    assert starts == sorted(starts)
    for (_, s0, d0), (_, s1, _) in zip(schedule, schedule[1:]):
        assert s0 + d0 == pytest.approx(s1)
    assert [d for m, _, d in schedule] == [20.0 if m != REST_ID else 5.0 for m, _, _ in schedule]
    assert np.all((phi >= 0) & (phi <= 1))


def test_standard_session_deterministic():
    s = make_subject(0)
    a = gen_standard_session(s, trials=1, seed=4, active_s=2.0, rest_s=1.0)
    b = gen_standard_session(s, trials=1, seed=4, active_s=2.0, rest_s=1.0)
    assert a.equals(b)
    assert a.n_steps == 12 * 3 * 40 and a.emg.shape == (a.n_steps * 50, 16)
    c = gen_standard_session(s, trials=1, seed=5, active_s=2.0, rest_s=1.0)
    assert not a.equals(c)


def test_movement_table():
    poses = define_standard_movements()
    assert poses.shape == (12, 7) and len(MOVEMENT_NAMES) == 12
    assert np.all((poses >= 0) & (poses <= 1))
    for i in range(12):
        for j in range(i + 1, 12):
            assert np.abs(poses[i] - poses[j]).max() >= 0.2


def test_freeform_band_limited_and_independent():
    phi = freeform_trajectory(300.0, seed=0)
    assert phi.shape == (12000, 7) and phi.min() >= 0 and phi.max() <= 1
    x = phi - phi.mean(axis=0)
    power = np.abs(np.fft.rfft(x, axis=0)) ** 2
    f = np.fft.rfftfreq(x.shape[0], d=1 / 40)
    assert power[f > 2.0].sum() / power.sum() < 0.05
    other = freeform_trajectory(300.0, seed=1)
    for j in range(7):
        assert abs(np.corrcoef(phi[:, j], other[:, j])[0, 1]) < 0.5
    assert np.array_equal(phi, freeform_trajectory(300.0, seed=0))


def test_emg_baseline_mav():
    s = make_subject(0, SimulatorConfig(kappa=0.0))
    phi = np.full((400, 7), 0.5)  # 10 s without movement
    emg = emg_synthesize(phi, s, seed=2)
    mav = np.abs(emg).mean(axis=0)
    expect = s.a0 * np.sqrt(2 / np.pi)
    assert np.all(np.abs(mav / expect - 1) < 0.05)


def test_emg_linearity_and_determinism():
    s = make_subject(0)
    rng = np.random.default_rng(0)
    phi = rng.uniform(size=(20, 7))
    act = muscle_activations(phi, s)
    m = 5
    env = act @ s.W.T
    doubled = act.copy()
    doubled[:, m] *= 2
    np.testing.assert_allclose(doubled @ s.W.T - env, np.outer(act[:, m], s.W[:, m]), atol=1e-12)
    a = emg_synthesize(phi, s, seed=3)
    assert np.array_equal(a, emg_synthesize(phi, s, seed=3))
    with pytest.raises(RateMismatch):
        emg_synthesize(phi, s, rate_hz=1999)
    with pytest.raises(ValidationError):
        emg_synthesize(phi + 1, s)


def test_activation_formula():
    s = make_subject(0)
    phi = np.linspace(0, 1, 11)[:, None].repeat(7, axis=1)
    act = muscle_activations(phi, s)
    np.testing.assert_allclose(act[:, 0], s.kappa * phi[:, 0] + s.g_v * 0.1)
    np.testing.assert_allclose(act[:, 1], s.kappa * (1 - phi[:, 0]))


def test_session_alignment():
    s = gen_freeform_session(make_subject(1), 10.0, seed=1)
    assert s.n_steps == 400 and s.emg.shape[0] == 50 * 400
    assert s.kin_t_us[1] == 25_000 and s.emg_t_us[1] == 500
    assert np.allclose(s.phi, s.calibration.normalize_all(s.rho))


def test_decodability():
    subject = make_subject(0)
    s = gen_freeform_session(subject, 60.0, seed=0)
    act = muscle_activations(s.phi, subject)
    ends, f = batch_features(s.emg, 100, 50)
    mav = f.reshape(f.shape[0], 16, 5)[:, :, 0]
    steps = (ends + 1) // 50
    a = act[np.minimum(steps, s.n_steps - 1)]
    for c in range(16):
        best = max(np.corrcoef(mav[:, c], a[:, m])[0, 1] for m in range(14))
        assert best > 0.4
