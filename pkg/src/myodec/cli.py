"""Command-line entry point: ``myodec <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data or validation error.  Commands
write only under ``--out`` and never modify an input session directory.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import protocols as P
from .config import RunConfig, config_load
from .errors import MyodecError, ValidationError
from .kinematics import KIN_RATE_HZ, calibrate
from .models import MODEL_KINDS, SEQUENTIAL_KINDS, checkpoint_load, checkpoint_save, create_model
from .report import RunReport, add_trace, compare_models, emit_plot_data, format_table, \
    report_read, report_write
from .session import STEP_US, SessionLog
from .simulator import gen_freeform_session, gen_sono_session, gen_standard_session, make_subject
from .sono import fit_pipeline
from .storage import checkpoint_read, checkpoint_write, session_read, session_write


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def parse_seeds(text: str) -> list[int]:
    """``"3"`` -> [3]; ``"0..7"`` -> [0, ..., 7]; ``"1,4,5"`` -> [1, 4, 5]."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            lo, hi = int(a), int(b)
            if hi < lo:
                raise ValueError
            return list(range(lo, hi + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}; use a..b") from None


def _kinds(text: str) -> list[str]:
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    bad = [k for k in kinds if k not in MODEL_KINDS]
    if bad or not kinds:
        raise argparse.ArgumentTypeError(f"unknown model(s) {bad}; choose from {sorted(MODEL_KINDS)}")
    return kinds


def _workers(n_jobs: int) -> int:
    try:
        cap = int(os.environ.get("MYODEC_THREADS", "1"))
    except ValueError:
        cap = 1
    return max(1, min(cap, n_jobs))


def _map(fn, jobs):
    """Run jobs in order, in worker processes when MYODEC_THREADS allows it."""
    n = _workers(len(jobs))
    if n == 1:
        return [fn(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, *zip(*jobs)))


def _load_config(path) -> RunConfig:
    return config_load(path) if path else RunConfig()


def simulate_session(protocol: str, seed: int, cfg: RunConfig, duration_s=None,
                     trials=None) -> SessionLog:
    subject = make_subject(seed, cfg.simulator)
    sim = cfg.simulator
    if protocol == "standard":
        return gen_standard_session(subject, trials or cfg.protocol.standard_trials, seed,
                                    sim.active_s, sim.rest_s)
    if protocol == "freeform":
        return gen_freeform_session(subject, duration_s or cfg.protocol.min_freeform_s, seed,
                                    sim.freeform_cutoff_hz)
    if protocol == "sono":
        return gen_sono_session(subject, duration_s or 120.0, seed, sim.freeform_cutoff_hz,
                                cfg.sono.height, cfg.sono.width)
    raise ValidationError(f"unknown protocol {protocol!r}")


def _protocol_of(session: SessionLog) -> str:
    proto = session.meta.get("protocol")
    if proto in ("standard", "freeform", "sono"):
        return proto
    return "standard" if len(session.trials) == 3 else "freeform"


def run_protocol(session: SessionLog, kinds, cfg: RunConfig, seed: int) -> P.ProtocolResult:
    proto = _protocol_of(session)
    if proto == "standard":
        return P.run_standard(session, kinds, cfg, seed)
    if proto == "sono":
        seq = [k for k in kinds if k in SEQUENTIAL_KINDS]
        if not seq:
            raise ValidationError("sono sessions need a sequential model (tcn or lstm)")
        res = P.run_sono(session, seq[0], cfg, seed)
        for k in seq[1:]:
            res.runs[k] = P.run_sono(session, k, cfg, seed).runs[k]
        return res
    return P.run_freeform_offline(session, kinds, cfg, seed)


def train_split(session: SessionLog, cfg: RunConfig):
    """(train_ends, test_ends) following the session's protocol."""
    if _protocol_of(session) == "standard":
        if len(session.trials) < 2:
            raise ValidationError("standard sessions need a held-out trial")
        train = np.concatenate([np.arange(*t) for t in session.trials[:-1]])
        return train, np.arange(*session.trials[-1])
    return P.freeform_split(session, cfg)


# -- per-seed workers (module level so worker processes can import them) ------

def _eval_seed(protocol, seed, kinds, cfg, duration_s, trials, session_dir, out):
    session = (session_read(session_dir) if session_dir
               else simulate_session(protocol, seed, cfg, duration_s, trials))
    res = run_protocol(session, kinds, cfg, seed)
    rep = RunReport("eval", res.protocol, [seed], cfg.digest(), cfg.to_dict(),
                    meta={"session": dict(session.meta)})
    for kind, run in res.runs.items():
        rep.metrics[kind] = [run.report.to_dict()]
        add_trace(rep, kind, run.steps, run.pred, run.truth)
    if out is not None:
        report_write(rep, out)
    return rep


def _reinforce_seed(kind, seed, cfg, session_dir, realtime, strict, init_s, trials, trial_s,
                    record, out):
    source = session_read(session_dir) if session_dir else make_subject(seed, cfg.simulator)
    record_dir = Path(out) / "recorded" if (record and out is not None) else None
    res = P.run_reinforcement(source, kind, cfg, seed, init_s, trials, trial_s, realtime, strict,
                              record_dir, delete_recorded=record_dir is not None)
    rep = RunReport("reinforce", "reinforcement", [seed], cfg.digest(), cfg.to_dict(),
                    meta={"realtime": realtime, "state_nbytes": res.meta.get("state_nbytes")})
    rep.trials[kind] = [[tm.to_dict() for tm in res.trials]]
    rep.timing[kind] = res.latency_percentiles()
    bounds = P.reinforcement_bounds(cfg, init_s, trials, trial_s)[1:]
    steps = np.concatenate([np.arange(b - p.shape[0], b)
                            for (_, b), p in zip(bounds, res.predictions)])
    add_trace(rep, kind, steps, np.concatenate(res.predictions), np.concatenate(res.truths))
    if out is not None:
        report_write(rep, out)
    return rep, res.latencies_ms


def _merge(reports: list[RunReport], command: str) -> RunReport:
    first = reports[0]
    merged = RunReport(command, first.protocol, [s for r in reports for s in r.seeds],
                       first.config_digest, first.config, meta=dict(first.meta))
    for r in reports:
        for kind, runs in r.metrics.items():
            merged.metrics.setdefault(kind, []).extend(runs)
        for kind, runs in r.trials.items():
            merged.trials.setdefault(kind, []).extend(runs)
    merged.traces = dict(first.traces)
    merged.comparison = compare_models(merged.metrics) if merged.metrics else {}
    return merged


# -- commands -----------------------------------------------------------------------

def cmd_simulate(a) -> int:
    cfg = _load_config(a.config)
    session = simulate_session(a.protocol, a.seed, cfg, a.duration, a.trials)
    session_write(session, a.out)
    print(f"wrote {a.protocol} session ({session.duration_s:.1f} s) to {a.out}")
    return 0


def cmd_calibrate(a) -> int:
    session = session_read(a.session)
    if a.sweep:
        raw = np.loadtxt(a.sweep, delimiter=",", skiprows=1, ndmin=2)
        raw = raw[:, -session.rho.shape[1]:]
        cmap = calibrate(raw, duration_s=raw.shape[0] / KIN_RATE_HZ,
                         theta_ranges=tuple(zip(session.calibration.theta_min,
                                                session.calibration.theta_max)))
    else:
        cmap = calibrate(session.rho, duration_s=a.duration,
                         theta_ranges=tuple(zip(session.calibration.theta_min,
                                                session.calibration.theta_max)))
    out = SessionLog(session.emg, session.rho, cmap.normalize_all(session.rho), cmap,
                     session.trials, dict(session.meta, calibrated_from=a.sweep or "session"),
                     session.sono)
    session_write(out, a.out)
    print(f"wrote recalibrated session to {a.out}")
    return 0


def cmd_train(a) -> int:
    cfg = _load_config(a.config)
    session = session_read(a.session)
    train_ends, _ = train_split(session, cfg)
    cache = P.FeatureCache(session, cfg)
    mcfg = cfg.model(a.model)
    feats, first = cache.get(mcfg.window_ms)
    data = P.pair_set(feats, first, session.phi, mcfg.sequence, train_ends)
    data = data.strided(cfg.training.train_stride)
    model = create_model(a.model, feats.shape[1], session.phi.shape[1], cfg, a.seed)
    rep = model.train(data, batch_size=cfg.training.batch_size, seed=a.seed, lr=cfg.training.lr)
    out = Path(a.out)
    checkpoint_write(checkpoint_save(model), out / "model.ckpt")
    (out / "train.json").write_text(json.dumps(
        {"model": a.model, "seed": a.seed, "config": cfg.digest(), "n_pairs": rep.n_pairs,
         "seconds": rep.seconds, "losses": rep.losses, "session": dict(session.meta)},
        indent=1, sort_keys=True) + "\n")
    print(f"trained {a.model} on {rep.n_pairs} pairs in {rep.seconds:.1f} s -> {out / 'model.ckpt'}")
    return 0


def _eval_checkpoint(a, cfg: RunConfig) -> RunReport:
    from .metrics import evaluate

    session = session_read(a.session)
    model = checkpoint_load(checkpoint_read(a.checkpoint))
    train_ends, test_ends = train_split(session, cfg)
    feats, first = P.FeatureCache(session, cfg).get(model.window_ms)
    test_ends = test_ends[test_ends >= first + model.seq_len - 1]
    pred = model.predict_set(P.pair_set(feats, first, session.phi, model.seq_len, test_ends))
    truth = session.phi[test_ends]
    m = evaluate(model.kind, pred, truth, session.calibration, cfg.protocol.max_lag_steps,
                 session.phi[train_ends].mean(axis=0), cfg.signal.delta_t_ms)
    rep = RunReport("eval", _protocol_of(session), [a.seed], cfg.digest(), cfg.to_dict(),
                    meta={"session": dict(session.meta), "checkpoint": str(a.checkpoint)})
    rep.metrics[model.kind] = [m.to_dict()]
    add_trace(rep, model.kind, test_ends, pred, truth)
    return rep


def cmd_eval(a) -> int:
    cfg = _load_config(a.config)
    if a.checkpoint:
        if not a.session:
            raise UsageError("eval --checkpoint needs --session")
        rep = _eval_checkpoint(a, cfg)
    else:
        seeds = a.seeds or [a.seed]
        if a.session and len(seeds) > 1:
            raise UsageError("--seeds simulates one session per seed; drop --session")
        per = (lambda s: str(Path(a.out) / f"seed_{s:03d}")) if len(seeds) > 1 else (lambda s: None)
        jobs = [(a.protocol, s, a.models, cfg, a.duration, a.trials, a.session, per(s))
                for s in seeds]
        rep = _merge(_map(_eval_seed, jobs), "eval")
    report_write(rep, a.out)
    sys.stdout.write(format_table(rep))
    return 0


def cmd_reinforce(a) -> int:
    cfg = _load_config(a.config)
    seeds = a.seeds or [a.seed]
    if a.session and len(seeds) > 1:
        raise UsageError("--seeds simulates one subject per seed; drop --session")
    jobs = [(a.model, s, cfg, a.session, a.realtime, a.strict, a.init_s, a.trials, a.trial_s,
             a.record, str(Path(a.out) / f"seed_{s:03d}")) for s in seeds]
    # real-time pacing measures wall-clock latency, so seeds never share the CPU
    results = [_reinforce_seed(*j) for j in jobs] if a.realtime else _map(_reinforce_seed, jobs)
    rep = _merge([r for r, _ in results], "reinforce")
    lat = np.concatenate([l for _, l in results])
    rep.timing[a.model] = ({f"p{q}": float(np.percentile(lat, q)) for q in (50, 90, 99)}
                           if lat.size else {})
    rep.meta["realtime"] = a.realtime
    report_write(rep, a.out)
    sys.stdout.write(format_table(rep))
    return 0


def cmd_sono_prep(a) -> int:
    cfg = _load_config(a.config)
    for key in ("factor", "sigma", "keep_fraction"):
        if getattr(a, key) is not None:
            setattr(cfg.sono, key, getattr(a, key))
    session = session_read(a.session)
    if session.sono is None:
        raise ValidationError(f"session {a.session} has no sono.raw")
    train_ends, _ = P.freeform_split(session, cfg)
    pipe = fit_pipeline(session.sono[train_ends], cfg.sono)
    feats = pipe.features(session.sono)
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savetxt(out / "mask.csv", pipe.mask.keep.astype(int), fmt="%d", delimiter=",")
    t = np.arange(feats.shape[0]) * STEP_US
    header = "t_us," + ",".join(f"f{i:03d}" for i in range(feats.shape[1]))
    with (out / "features.csv").open("w") as f:
        f.write(header + "\n")
        for ti, row in zip(t.tolist(), feats.tolist()):
            f.write(f"{ti}," + ",".join(map(repr, row)) + "\n")
    summary = {"input_shape": list(pipe.input_shape), "factor": pipe.factor, "sigma": pipe.sigma,
               "keep_fraction": cfg.sono.keep_fraction, "kept": pipe.mask.kept,
               "reduction": pipe.reduction, "train_images": int(train_ends.size)}
    (out / "sono.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    print(f"{pipe.mask.kept} pixels kept of {np.prod(pipe.input_shape)} "
          f"(reduction {pipe.reduction:.2f}x) -> {out}")
    return 0


def cmd_report(a) -> int:
    rep = report_read(a.report)
    paths = emit_plot_data(rep, a.out)
    sys.stdout.write(format_table(rep))
    for p in paths:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="myodec", description="Streaming EMG movement regression.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, seeds=False):
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", required=True, help="output directory")
        if seeds:
            sp.add_argument("--seeds", type=parse_seeds, help="seed sweep a..b (inclusive)")

    s = sub.add_parser("simulate", help="generate a synthetic session directory")
    common(s)
    s.add_argument("--protocol", choices=("standard", "freeform", "sono"), default="standard")
    s.add_argument("--duration", type=float, help="freeform/sono length in seconds")
    s.add_argument("--trials", type=int, help="standard protocol trial count")
    s.set_defaults(fn=cmd_simulate)

    s = sub.add_parser("calibrate", help="recompute the calibration map of a session")
    s.add_argument("--session", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--sweep", help="CSV of raw glove values (last 7 columns used)")
    s.add_argument("--duration", type=float, default=15.0,
                   help="seconds of the session's own glove stream to use without --sweep")
    s.set_defaults(fn=cmd_calibrate)

    s = sub.add_parser("train", help="train one model and write a checkpoint")
    common(s)
    s.add_argument("--session", required=True)
    s.add_argument("--model", choices=sorted(MODEL_KINDS), default="tcn")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="run the offline protocol and write a report")
    common(s, seeds=True)
    s.add_argument("--session", help="session directory (else simulate per seed)")
    s.add_argument("--protocol", choices=("standard", "freeform", "sono"), default="standard")
    s.add_argument("--models", type=_kinds, default=["tcn", "lstm", "svr"])
    s.add_argument("--checkpoint", help="evaluate this trained model instead of training")
    s.add_argument("--duration", type=float)
    s.add_argument("--trials", type=int)
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("reinforce", help="online predict-then-update loop")
    common(s, seeds=True)
    s.add_argument("--session", help="replay this recording instead of a synthetic subject")
    s.add_argument("--model", choices=sorted(SEQUENTIAL_KINDS), default="tcn")
    s.add_argument("--realtime", action="store_true", help="pace at wall-clock speed")
    s.add_argument("--strict", action="store_true", help="fail on any step over 25 ms")
    s.add_argument("--init-s", dest="init_s", type=float)
    s.add_argument("--trials", type=int)
    s.add_argument("--trial-s", dest="trial_s", type=float)
    s.add_argument("--record", action="store_true",
                   help="write each block under OUT/recorded and delete it after its update")
    s.set_defaults(fn=cmd_reinforce)

    s = sub.add_parser("sono-prep", help="fit the ultrasound mask and write reduced features")
    s.add_argument("--config")
    s.add_argument("--session", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--factor", type=int)
    s.add_argument("--sigma", type=float)
    s.add_argument("--keep-fraction", dest="keep_fraction", type=float)
    s.set_defaults(fn=cmd_sono_prep)

    s = sub.add_parser("report", help="emit plot-ready CSV series from a report directory")
    s.add_argument("--report", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return 0 if e.code in (0, None) else 1
    except (MyodecError, ValueError, OSError) as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
