"""Run reports: machine-readable JSON, a text table and plot-ready CSV series.

A report directory holds ``report.json``, ``report.txt`` and, when
prediction traces were kept, ``traces.npz``.  :func:`emit_plot_data`
turns a report into the CSV files described in its docstring.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import EmptyReport, MissingFile, SchemaMismatch
from .metrics import kruskal_wallis, sem
from .models import SEQUENTIAL_KINDS
from .session import STEP_US

REPORT_FORMAT = 1


class SingleSeedSem(UserWarning):
    """Only one seed contributed, so SEM columns are written as 0."""


@dataclass
class RunReport:
    command: str
    protocol: str
    seeds: list[int]
    config_digest: str
    config: dict
    metrics: dict = field(default_factory=dict)     # kind -> [MetricsReport dict per seed]
    trials: dict = field(default_factory=dict)      # kind -> [[TrialMetrics dict] per seed]
    timing: dict = field(default_factory=dict)      # kind -> latency percentiles (ms)
    comparison: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)      # kind -> {"steps", "pred", "truth"}

    @property
    def kinds(self) -> list[str]:
        return sorted(set(self.metrics) | set(self.trials))

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("traces")
        d["format"] = REPORT_FORMAT
        return d

    @classmethod
    def from_dict(cls, d: dict, traces=None) -> "RunReport":
        d = dict(d)
        if d.pop("format", None) != REPORT_FORMAT:
            raise SchemaMismatch("unsupported report format")
        return cls(**d, traces=traces or {})


def add_trace(report: RunReport, kind: str, steps, pred, truth) -> None:
    report.traces[kind] = {"steps": np.asarray(steps, dtype=np.int64),
                           "pred": np.asarray(pred, dtype=np.float64),
                           "truth": np.asarray(truth, dtype=np.float64)}


def compare_models(metrics: dict) -> dict:
    """Kruskal-Wallis over per-seed total RMSE.

    ``models`` compares every model kind; ``sequential_vs_framewise`` pools the
    sequential kinds against the frame-wise ones.
    """
    totals = {k: [m["rmse_total"] for m in runs] for k, runs in metrics.items() if runs}
    out: dict = {}
    if len(totals) >= 2 and all(len(v) >= 1 for v in totals.values()):
        if sum(len(v) for v in totals.values()) > len(totals):
            h, p = kruskal_wallis(list(totals.values()))
            out["models"] = {"kinds": sorted(totals), "H": h, "p": p}
    seq = [x for k, v in totals.items() if k in SEQUENTIAL_KINDS for x in v]
    frame = [x for k, v in totals.items() if k not in SEQUENTIAL_KINDS for x in v]
    if seq and frame and len(seq) + len(frame) > 2:
        h, p = kruskal_wallis([seq, frame])
        lower = "sequential" if np.median(seq) < np.median(frame) else "frame-wise"
        out["sequential_vs_framewise"] = {"H": h, "p": p, "lower_rmse": lower,
                                          "n_sequential": len(seq), "n_framewise": len(frame)}
    return out


def report_write(report: RunReport, out) -> Path:
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    (d / "report.json").write_text(json.dumps(report.to_dict(), indent=1, sort_keys=True) + "\n")
    (d / "report.txt").write_text(format_table(report))
    if report.traces:
        flat = {f"{k}.{name}": arr for k, tr in report.traces.items() for name, arr in tr.items()}
        np.savez(d / "traces.npz", **flat)
    return d


def report_read(directory) -> RunReport:
    d = Path(directory)
    if not (d / "report.json").is_file():
        raise MissingFile(f"no report.json in {d}")
    try:
        data = json.loads((d / "report.json").read_text())
    except json.JSONDecodeError as e:
        raise SchemaMismatch(f"report.json: {e}") from None
    traces: dict = {}
    if (d / "traces.npz").is_file():
        with np.load(d / "traces.npz") as z:
            for key in z.files:
                kind, name = key.split(".", 1)
                traces.setdefault(kind, {})[name] = z[key]
    return RunReport.from_dict(data, traces)


def _mean_sem(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), (sem(v) if v.size >= 2 else 0.0)


def format_table(report: RunReport) -> str:
    lines = [f"{report.command} / {report.protocol}  seeds={report.seeds}  "
             f"config={report.config_digest}"]
    if report.metrics:
        lines.append(f"{'model':<8}{'RMSE deg':>12}{'r2':>10}{'delay ms':>11}{'mean-pred':>11}")
        for kind in sorted(report.metrics):
            runs = report.metrics[kind]
            rm, _ = _mean_sem([m["rmse_total"] for m in runs])
            r2, _ = _mean_sem([m["r2_mean"] for m in runs])
            dl, _ = _mean_sem([m["delay_ms"] for m in runs])
            base, _ = _mean_sem([m["baseline_rmse_deg"] if m["baseline_rmse_deg"] is not None
                                 else np.nan for m in runs])
            lines.append(f"{kind:<8}{rm:>12.3f}{r2:>10.3f}{dl:>11.1f}{base:>11.3f}")
    for kind in sorted(report.trials):
        per_seed = report.trials[kind]
        lines.append(f"{kind} reinforcement: trial, RMSE deg, r2")
        n = min(len(s) for s in per_seed)
        for i in range(n):
            rm, _ = _mean_sem([s[i]["rmse_deg"] for s in per_seed])
            r2, _ = _mean_sem([s[i]["r2"] for s in per_seed])
            lines.append(f"  {i + 1:>3}{rm:>10.3f}{r2:>8.3f}")
    for kind, t in sorted(report.timing.items()):
        lines.append(f"{kind} step latency ms: " +
                     ", ".join(f"{q}={v:.3f}" for q, v in sorted(t.items())))
    for name, c in sorted(report.comparison.items()):
        extra = f" lower={c['lower_rmse']}" if "lower_rmse" in c else ""
        lines.append(f"Kruskal-Wallis {name}: H={c['H']:.4f} p={c['p']:.3g}{extra}")
    return "\n".join(lines) + "\n"


def _write_csv(path: Path, header: list[str], rows) -> Path:
    with path.open("w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(x if isinstance(x, str) else repr(float(x)) if
                             isinstance(x, (float, np.floating)) else str(x) for x in row) + "\n")
    return path


def emit_plot_data(report: RunReport, out) -> list[Path]:
    """Write plot-ready CSV series and return their paths.

    * ``trace_<kind>.csv``: t_us, truth_j and pred_j per DoF (first seed).
    * ``bars.csv``: per model and DoF, RMSE and r^2 mean and SEM over seeds.
    * ``lag_<kind>.csv``: shift (steps, ms) against mean lag correlation.
    * ``reinforcement_<kind>.csv``: one row per trial, means and SEM over seeds.
    """
    if not report.metrics and not report.trials:
        raise EmptyReport("report has neither metrics nor reinforcement trials")
    d = Path(out)
    d.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    n_seeds = max([len(v) for v in report.metrics.values()]
                  + [len(v) for v in report.trials.values()] + [0])
    if n_seeds == 1:
        warnings.warn("single seed: SEM columns are written as 0", SingleSeedSem, stacklevel=2)
    for kind, tr in sorted(report.traces.items()):
        n_dof = tr["truth"].shape[1]
        header = ["t_us"] + [f"truth_{j}" for j in range(n_dof)] + [f"pred_{j}" for j in range(n_dof)]
        rows = ([int(s) * STEP_US] + list(t) + list(p)
                for s, t, p in zip(tr["steps"], tr["truth"], tr["pred"]))
        written.append(_write_csv(d / f"trace_{kind}.csv", header, rows))
    if report.metrics:
        rows = []
        for kind in sorted(report.metrics):
            runs = report.metrics[kind]
            for j in range(len(runs[0]["rmse_per_dof"])):
                rm, rs = _mean_sem([m["rmse_per_dof"][j] for m in runs])
                qm, qs = _mean_sem([m["r2_per_dof"][j] for m in runs])
                rows.append([kind, j, rm, rs, qm, qs])
        written.append(_write_csv(d / "bars.csv", ["model", "dof", "rmse_deg", "rmse_sem",
                                                   "r2", "r2_sem"], rows))
        for kind in sorted(report.metrics):
            runs = [m for m in report.metrics[kind] if m["lag_curve"]]
            if not runs:
                continue
            shifts = runs[0]["lag_shifts"]
            curves = np.array([m["lag_curve"] for m in runs if m["lag_shifts"] == shifts])
            rows = []
            for i, s in enumerate(shifts):
                cm, cs = _mean_sem(curves[:, i])
                rows.append([s, s * STEP_US / 1000.0, cm, cs])
            written.append(_write_csv(d / f"lag_{kind}.csv",
                                      ["shift_steps", "shift_ms", "corr", "corr_sem"], rows))
    for kind in sorted(report.trials):
        per_seed = report.trials[kind]
        n = min(len(s) for s in per_seed)
        rows = []
        for i in range(n):
            rm, rs = _mean_sem([s[i]["rmse_deg"] for s in per_seed])
            qm, qs = _mean_sem([s[i]["r2"] for s in per_seed])
            dm, ds = _mean_sem([s[i]["delay_ms"] for s in per_seed])
            rows.append([i + 1, rm, rs, qm, qs, dm, ds])
        written.append(_write_csv(d / f"reinforcement_{kind}.csv",
                                  ["trial", "rmse_deg", "rmse_sem", "r2", "r2_sem",
                                   "delay_ms", "delay_sem"], rows))
    return written
