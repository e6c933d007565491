from __future__ import annotations

import numpy as np
import pytest
from _oracles import rbf, svr_dual_qp

from myodec.config import LstmConfig, RunConfig, SvrConfig, TcnConfig
from myodec.errors import (
    CorruptCheckpoint,
    EmptyDataset,
    NotFitted,
    NotTrained,
    SpecMismatch,
    TargetOutOfRange,
    UnsupportedModel,
    VersionMismatch,
)
from myodec.models import (
    LstmRegressor,
    SequenceSet,
    SvrRegressor,
    TcnRegressor,
    checkpoint_load,
    checkpoint_save,
    create_model,
    dual_objective,
    kkt_violations,
    rbf_kernel,
    reinforce_update,
    smo_solve,
    svr_fit,
)
from myodec.models.tcn import tcn_plan
from myodec.neural import LayerParams, finite_diff_check, lstm_step
from myodec.signal import standardize_fit

SMALL_TCN = TcnConfig(filters=8, dilations=(1, 2, 4, 8), epochs=2)
SMALL_LSTM = LstmConfig(hidden=6, epochs=2)


def _data(rng, n, L, D=80, k=7):
    X = rng.standard_normal((n, L, D))
    Y = rng.uniform(0.05, 0.95, (n, k))
    return X, Y


def _fitted(model, rng):
    model.standardizer = standardize_fit(rng.standard_normal((50, model.n_features)))
    return model


def test_tcn_receptive_field_and_plan():
    cfg = TcnConfig()
    assert cfg.receptive_field == 61 >= cfg.sequence
    plan = tcn_plan(40, 3, (1, 2, 4, 8))
    assert plan[-1].out_pos.tolist() == [39]
    sizes = [(p.mid_pos.size, p.out_pos.size, p.in_pos.size) for p in plan]
    assert sizes == [(40, 20, 40), (20, 10, 20), (10, 5, 10), (3, 1, 5)]


def test_tcn_pruned_forward_equals_full(rng):
    m = TcnRegressor(80, 7, TcnConfig(), seed=3)
    X, _ = _data(rng, 4, 40)
    np.testing.assert_allclose(m._forward(X)[0], m.reference_forward(X), atol=1e-14)


def test_zero_output_layer_gives_half(rng):
    m = _fitted(TcnRegressor(80, 7, SMALL_TCN), rng)
    m.layers[-1].weights[:] = 0
    X, _ = _data(rng, 3, 40)
    np.testing.assert_array_equal(m.predict_batch(X), 0.5)


def test_lstm_matches_iterated_cell(rng):
    m = LstmRegressor(5, 7, LstmConfig(hidden=4, sequence=6), seed=1)
    X = rng.standard_normal((2, 6, 5))
    h = np.zeros((2, 4))
    c = np.zeros((2, 4))
    for t in range(6):
        h, c = lstm_step(X[:, t], h, c, m.layers[0])
    out = m.layers[1]
    ref = 1 / (1 + np.exp(-(h @ out.weights + out.biases)))
    np.testing.assert_allclose(m._forward(X)[0], ref, atol=1e-14)
    assert np.all(m.layers[0].biases[4:8] == 1.0)


@pytest.mark.parametrize("kind", ["tcn", "lstm"])
def test_small_gradient_audit(kind, rng):
    m = (TcnRegressor(6, 7, TcnConfig(filters=5), seed=2) if kind == "tcn"
         else LstmRegressor(6, 7, LstmConfig(hidden=5), seed=2))
    X, Y = _data(rng, 4, m.seq_len, 6)
    assert finite_diff_check(m, (X, Y), h=1e-5) < 1e-5


def test_spec_guards(rng):
    m = _fitted(LstmRegressor(80, 7, SMALL_LSTM), rng)
    X, Y = _data(rng, 2, 40)
    with pytest.raises(SpecMismatch):
        m.predict_batch(X)
    with pytest.raises(NotFitted):
        LstmRegressor(80, 7, SMALL_LSTM).predict_batch(X[:, :24])
    with pytest.raises(NotTrained):
        _fitted(SvrRegressor(80, 7), rng).predict(X[0, -1:])
    with pytest.raises(EmptyDataset):
        m.train((X[:0, :24], Y[:0]))
    with pytest.raises(TargetOutOfRange):
        m.train((X[:, :24], Y + 1.0))


def test_predict_pure_and_bounded(rng):
    m = _fitted(TcnRegressor(80, 7, SMALL_TCN), rng)
    X, _ = _data(rng, 5, 40)
    X *= 1e3
    p = m.predict_batch(X)
    assert np.array_equal(p, m.predict_batch(X))
    assert np.all((p >= 0) & (p <= 1))


def test_constant_target_tcn_converges(rng):
    X = rng.standard_normal((240, 40, 80))
    Y = np.full((240, 7), 0.5)
    m = TcnRegressor(80, 7, TcnConfig(), seed=0)
    rep = m.train((X, Y), epochs=25, seed=0)
    assert len(rep.losses) == 25 and rep.losses[-1] < 1e-3


def test_training_deterministic(rng):
    X, Y = _data(rng, 48, 24)
    a = LstmRegressor(80, 7, SMALL_LSTM, seed=4)
    b = LstmRegressor(80, 7, SMALL_LSTM, seed=4)
    ra = a.train((X, Y), seed=9)
    rb = b.train((X, Y), seed=9)
    assert ra.losses == rb.losses
    assert all(np.array_equal(p.weights, q.weights) for p, q in zip(a.layers, b.layers))


def test_learnable_dataset_loss_drops(rng):
    W = rng.standard_normal((4, 7))
    X = rng.standard_normal((480, 24, 4))
    Y = 1 / (1 + np.exp(-(X[:, -1] @ W)))
    m = LstmRegressor(4, 7, LstmConfig(hidden=16), seed=0)
    rep = m.train((X, Y), epochs=40, seed=0)
    assert rep.losses[-1] < 0.2 * rep.losses[0]


def test_reinforce_update_descends_and_guards(rng):
    X, Y = _data(rng, 96, 24)
    m = LstmRegressor(80, 7, SMALL_LSTM, seed=0)
    m.train((X[:48], Y[:48]), seed=0)
    trial = (X[48:], Y[48:])
    before = m.loss(m.standardizer.apply(trial[0]), trial[1])
    snapshot = [lp.weights.copy() for lp in m.layers]
    with pytest.raises(EmptyDataset):
        reinforce_update(m, (X[:0], Y[:0]), update_epochs=3)
    assert all(np.array_equal(a, lp.weights) for a, lp in zip(snapshot, m.layers))
    reinforce_update(m, trial, update_epochs=5)
    assert m.loss(m.standardizer.apply(trial[0]), trial[1]) < before
    with pytest.raises(UnsupportedModel):
        reinforce_update(SvrRegressor(80, 7), trial)


def test_rbf_kernel(rng):
    A = rng.standard_normal((6, 4))
    np.testing.assert_allclose(np.diag(rbf_kernel(A, A, 0.3)), 1.0)
    np.testing.assert_allclose(rbf_kernel(A, A[:3], 0.3), rbf(A, A[:3], 0.3), atol=1e-14)


def test_svr_constant_target():
    x = np.random.default_rng(0).standard_normal((30, 5))
    m = svr_fit(x, np.full(30, 0.3), SvrConfig(epsilon=0.1))
    assert m.n_support == 0 and abs(m.b - 0.3) <= 0.1
    with pytest.raises(EmptyDataset):
        svr_fit(x[:1], np.ones(1))


@pytest.mark.parametrize("seed", range(5))
def test_smo_matches_qp_oracle(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 11))
    x = rng.standard_normal((n, 3))
    y = rng.uniform(0, 1, n)
    K = rbf(x, x, 0.5)
    coef, b, _ = smo_solve(K, y, C=1.0, epsilon=0.05, tol=1e-3)
    ref, _ = svr_dual_qp(K, y, 1.0, 0.05)
    assert abs(dual_objective(K, y, coef, 0.05) - ref) < 1e-3


def test_svr_kkt_on_larger_set(rng):
    x = rng.standard_normal((300, 10))
    y = 1 / (1 + np.exp(-x[:, 0] + 0.5 * x[:, 1]))
    m = svr_fit(x, y, SvrConfig(gamma=0.1))
    assert kkt_violations(m, x, y, 1.0, 0.05, 1e-3) == 0


def test_svr_regressor_subsamples_and_predicts(rng):
    X = rng.standard_normal((500, 1, 80))
    Y = 1 / (1 + np.exp(-X[:, 0, :7]))
    m = SvrRegressor(80, 7, SvrConfig(max_train=200))
    m.train((X, Y))
    assert m.train_x.shape == (200, 80)
    p = m.predict_batch(X[:50])
    assert p.shape == (50, 7) and np.all((p >= 0) & (p <= 1))
    assert len(m.machines) == 7


def test_sequence_set_matches_explicit_pairs(rng):
    feats = rng.standard_normal((30, 4))
    targets = rng.uniform(size=(30, 7))
    s = SequenceSet(feats, targets, [5, 9, 29], 4)
    X, Y = s.batch([0, 2])
    np.testing.assert_array_equal(X[0], feats[2:6])
    np.testing.assert_array_equal(X[1], feats[26:30])
    np.testing.assert_array_equal(Y[1], targets[29])
    with pytest.raises(SpecMismatch):
        SequenceSet(feats, targets, [2], 4)


@pytest.mark.parametrize("kind", ["tcn", "lstm", "svr"])
def test_checkpoint_roundtrip_bit_exact(kind, rng):
    cfg = RunConfig()
    cfg.tcn.filters = 8
    cfg.lstm.hidden = 8
    cfg.tcn.epochs = cfg.lstm.epochs = 1
    m = create_model(kind, 80, 7, cfg, seed=1)
    X, Y = _data(rng, 60, m.seq_len)
    m.train((X, Y))
    blob = checkpoint_save(m)
    back = checkpoint_load(blob)
    T, _ = _data(rng, 100, m.seq_len)
    assert np.array_equal(m.predict_batch(T), back.predict_batch(T))
    assert checkpoint_save(back) == blob
    with pytest.raises(CorruptCheckpoint):
        checkpoint_load(blob[:-20])
    other = "lstm" if kind != "lstm" else "tcn"
    with pytest.raises(VersionMismatch):
        checkpoint_load(blob, expected_kind=other)


def test_untrained_checkpoint_layers():
    m = LstmRegressor(80, 7, SMALL_LSTM)
    back = checkpoint_load(checkpoint_save(m))
    assert all(np.array_equal(a.weights, b.weights) for a, b in zip(m.layers, back.layers))
    assert isinstance(back.layers[0], LayerParams)
