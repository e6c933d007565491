from __future__ import annotations

import json
import warnings

import numpy as np
import pytest

from myodec.cli import main, parse_seeds
from myodec.errors import EmptyReport
from myodec.kinematics import CalibrationMap
from myodec.metrics import evaluate, kruskal_wallis
from myodec.report import (
    RunReport,
    SingleSeedSem,
    compare_models,
    emit_plot_data,
    report_read,
    report_write,
)
from myodec.storage import session_read

FAST = """
[tcn]
epochs = 1
filters = 8
[lstm]
epochs = 1
hidden = 8
[svr]
max_train = 200
[training]
update_epochs = 1
[protocol]
min_freeform_s = 20.0
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "fast.toml"
    p.write_text(FAST)
    return str(p)


def test_parse_seeds():
    assert parse_seeds("0..3") == [0, 1, 2, 3]
    assert parse_seeds("2,5") == [2, 5]
    assert parse_seeds("7") == [7]


def test_exit_codes(tmp_path, capsys):
    assert main(["bogus"]) == 1
    assert main(["simulate"]) == 1
    assert main(["eval", "--out", str(tmp_path), "--seeds", "3..1"]) == 1
    assert main(["train", "--session", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("batch_size = 0")
    assert main(["simulate", "--config", str(bad), "--out", str(tmp_path / "s")]) == 2
    assert main(["--help"]) == 0
    capsys.readouterr()


def test_simulate_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["simulate", "--protocol", "freeform", "--duration", "5", "--seed", "4",
                     "--out", str(tmp_path / d)]) == 0
    for name in ("emg.csv", "kin.csv", "calib.csv", "meta.toml"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_train_eval_report_pipeline(tmp_path, cfg_file, capsys):
    s = str(tmp_path / "sess")
    assert main(["simulate", "--protocol", "freeform", "--duration", "25", "--out", s]) == 0
    assert main(["train", "--config", cfg_file, "--session", s, "--model", "lstm",
                 "--out", str(tmp_path / "m")]) == 0
    info = json.loads((tmp_path / "m" / "train.json").read_text())
    assert info["model"] == "lstm" and len(info["losses"]) == 1
    ev = str(tmp_path / "ev")
    assert main(["eval", "--config", cfg_file, "--session", s,
                 "--checkpoint", str(tmp_path / "m" / "model.ckpt"), "--out", ev]) == 0
    rep = report_read(ev)
    assert rep.kinds == ["lstm"] and rep.metrics["lstm"][0]["n_steps"] > 0
    out = str(tmp_path / "plots")
    with pytest.warns(SingleSeedSem):
        assert main(["report", "--report", ev, "--out", out]) == 0
    trace = np.loadtxt(tmp_path / "plots" / "trace_lstm.csv", delimiter=",", skiprows=1)
    assert trace.shape[1] == 15 and np.all(np.diff(trace[:, 0]) == 25_000)
    assert (tmp_path / "plots" / "bars.csv").is_file()
    assert "lstm" in capsys.readouterr().out


def test_eval_seed_sweep(tmp_path, cfg_file):
    out = tmp_path / "sweep"
    assert main(["eval", "--config", cfg_file, "--protocol", "freeform", "--duration", "25",
                 "--models", "lstm,svr", "--seeds", "0..1", "--out", str(out)]) == 0
    rep = report_read(out)
    assert rep.seeds == [0, 1] and len(rep.metrics["svr"]) == 2
    assert (out / "seed_000" / "report.json").is_file()
    c = rep.comparison["sequential_vs_framewise"]
    h, p = kruskal_wallis([[m["rmse_total"] for m in rep.metrics["lstm"]],
                           [m["rmse_total"] for m in rep.metrics["svr"]]])
    assert (c["H"], c["p"]) == (h, p)


def test_calibrate_and_sono_prep(tmp_path):
    s = str(tmp_path / "s")
    assert main(["simulate", "--protocol", "sono", "--duration", "20", "--out", s]) == 0
    assert main(["calibrate", "--session", s, "--duration", "20", "--out",
                 str(tmp_path / "c")]) == 0
    orig, cal = session_read(s), session_read(tmp_path / "c")
    assert np.array_equal(cal.rho, orig.rho)
    np.testing.assert_array_equal(cal.calibration.rho_min, orig.rho.min(axis=0))
    assert main(["sono-prep", "--session", s, "--out", str(tmp_path / "p")]) == 0
    meta = json.loads((tmp_path / "p" / "sono.json").read_text())
    assert meta["kept"] == 84 and abs(meta["reduction"] / 12 - 1) <= 0.2
    mask = np.loadtxt(tmp_path / "p" / "mask.csv", delimiter=",")
    assert mask.shape == (16, 16) and mask.sum() == 84
    assert main(["sono-prep", "--session", str(tmp_path / "c"), "--keep-fraction", "2",
                 "--out", str(tmp_path / "q")]) == 2


def test_reinforce_command(tmp_path, cfg_file):
    out = tmp_path / "rl"
    assert main(["reinforce", "--config", cfg_file, "--model", "lstm", "--seeds", "0..1",
                 "--init-s", "10", "--trials", "3", "--trial-s", "3", "--record",
                 "--out", str(out)]) == 0
    rep = report_read(out)
    assert len(rep.trials["lstm"]) == 2 and len(rep.trials["lstm"][0]) == 3
    assert set(rep.timing["lstm"]) == {"p50", "p90", "p99"}
    assert list((out / "seed_000" / "recorded").iterdir()) == []
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        paths = emit_plot_data(rep, tmp_path / "plots")
    rows = np.loadtxt(tmp_path / "plots" / "reinforcement_lstm.csv", delimiter=",", skiprows=1)
    assert rows.shape == (3, 7) and any(p.name == "reinforcement_lstm.csv" for p in paths)


def test_report_roundtrip_and_errors(tmp_path):
    t = np.sin(np.linspace(0, 20, 200))[:, None].repeat(7, axis=1) * 0.4 + 0.5
    cmap = CalibrationMap(np.zeros(7), np.ones(7), np.zeros(7), np.full(7, 90.0))
    rep = RunReport("eval", "freeform", [0], "abc", {"x": 1}, metrics={
        "svr": [evaluate("svr", t * 0.9, t, cmap).to_dict()],
        "tcn": [evaluate("tcn", t, t, cmap).to_dict()]})
    report_write(rep, tmp_path)
    back = report_read(tmp_path)
    assert back.to_dict() == rep.to_dict()
    with pytest.raises(EmptyReport):
        emit_plot_data(RunReport("eval", "freeform", [0], "abc", {}), tmp_path / "e")
    cmp = compare_models({"tcn": [{"rmse_total": v} for v in (1, 2, 3)],
                          "svr": [{"rmse_total": v} for v in (4, 5, 6)]})
    assert cmp["sequential_vs_framewise"]["lower_rmse"] == "sequential"
    assert cmp["models"]["H"] == kruskal_wallis([[1, 2, 3], [4, 5, 6]])[0]
