"""Run configuration: Table-1 model parameters plus the desk-scale knobs.

A config file is TOML with one table per section.  Every key is optional;
missing keys keep their defaults, unknown keys are rejected so a typo never
silently falls back to a default.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import tomli

from .errors import OutOfRangeValue, ParseError, UnknownKey


@dataclass
class SignalConfig:
    n_channels: int = 16
    rate_hz: int = 2000
    delta_t_ms: int = 25
    eps_zc: float = 0.0
    eps_ssc: float = 0.0


@dataclass
class TcnConfig:
    window_ms: int = 50
    sequence: int = 40
    epochs: int = 15
    filters: int = 128
    kernel: int = 3
    dilations: tuple = (1, 2, 4, 8)
    dropout: float = 0.25

    @property
    def receptive_field(self) -> int:
        # two convolutions per residual block
        return 1 + 2 * sum((self.kernel - 1) * d for d in self.dilations)


@dataclass
class LstmConfig:
    window_ms: int = 50
    sequence: int = 24
    epochs: int = 40
    hidden: int = 64


@dataclass
class SvrConfig:
    window_ms: int = 200
    sequence: int = 1
    gamma: float = 0.01
    C: float = 1.0
    epsilon: float = 0.05
    tol: float = 1e-3
    max_passes: int = 200
    max_train: int = 2000


@dataclass
class TrainingConfig:
    batch_size: int = 24
    lr: float = 1e-3
    update_epochs: int = 5
    train_stride: int = 8
    seed: int = 0


@dataclass
class ProtocolConfig:
    train_fraction: float = 0.6
    max_lag_steps: int = 40
    init_s: float = 60.0
    trials: int = 15
    trial_s: float = 30.0
    min_freeform_s: float = 300.0
    standard_trials: int = 3


@dataclass
class SimulatorConfig:
    n_muscles: int = 14
    kappa: float = 0.6
    g_v: float = 1.0
    a0: float = 0.05
    muscles_per_channel: int = 4
    freeform_cutoff_hz: float = 0.8
    active_s: float = 20.0
    rest_s: float = 5.0


@dataclass
class SonoConfig:
    factor: int = 2
    sigma: float = 1.0
    keep_fraction: float = 0.33
    height: int = 32
    width: int = 32


@dataclass
class RunConfig:
    signal: SignalConfig = field(default_factory=SignalConfig)
    tcn: TcnConfig = field(default_factory=TcnConfig)
    lstm: LstmConfig = field(default_factory=LstmConfig)
    svr: SvrConfig = field(default_factory=SvrConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    simulator: SimulatorConfig = field(default_factory=SimulatorConfig)
    sono: SonoConfig = field(default_factory=SonoConfig)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def model(self, kind: str):
        return getattr(self, kind)


_pos = lambda v: v > 0  # noqa: E731
_nonneg = lambda v: v >= 0  # noqa: E731

_CHECKS = {
    ("signal", "n_channels"): _pos,
    ("signal", "rate_hz"): _pos,
    ("signal", "delta_t_ms"): _pos,
    ("signal", "eps_zc"): _nonneg,
    ("signal", "eps_ssc"): _nonneg,
    ("tcn", "window_ms"): _pos,
    ("tcn", "sequence"): _pos,
    ("tcn", "epochs"): _nonneg,
    ("tcn", "filters"): _pos,
    ("tcn", "kernel"): _pos,
    ("tcn", "dilations"): lambda v: len(v) > 0 and all(d >= 1 for d in v),
    ("tcn", "dropout"): lambda v: 0 <= v < 1,
    ("lstm", "window_ms"): _pos,
    ("lstm", "sequence"): _pos,
    ("lstm", "epochs"): _nonneg,
    ("lstm", "hidden"): _pos,
    ("svr", "window_ms"): _pos,
    ("svr", "sequence"): lambda v: v == 1,
    ("svr", "gamma"): _pos,
    ("svr", "C"): _pos,
    ("svr", "epsilon"): _nonneg,
    ("svr", "tol"): _pos,
    ("svr", "max_passes"): _pos,
    ("svr", "max_train"): lambda v: v >= 2,
    ("training", "batch_size"): _pos,
    ("training", "lr"): _pos,
    ("training", "update_epochs"): _nonneg,
    ("training", "train_stride"): _pos,
    ("training", "seed"): _nonneg,
    ("protocol", "train_fraction"): lambda v: 0 < v < 1,
    ("protocol", "max_lag_steps"): _nonneg,
    ("protocol", "init_s"): _pos,
    ("protocol", "trials"): _pos,
    ("protocol", "trial_s"): _pos,
    ("protocol", "min_freeform_s"): _nonneg,
    ("protocol", "standard_trials"): _pos,
    ("simulator", "n_muscles"): _pos,
    ("simulator", "kappa"): _nonneg,
    ("simulator", "g_v"): _nonneg,
    ("simulator", "a0"): _nonneg,
    ("simulator", "muscles_per_channel"): _pos,
    ("simulator", "freeform_cutoff_hz"): _pos,
    ("simulator", "active_s"): _pos,
    ("simulator", "rest_s"): _nonneg,
    ("sono", "factor"): lambda v: v >= 1,
    ("sono", "sigma"): _pos,
    ("sono", "keep_fraction"): lambda v: 0 < v <= 1,
    ("sono", "height"): _pos,
    ("sono", "width"): _pos,
}


def _sectioned(data: dict) -> dict:
    """Move bare top-level keys into the one section that defines them."""
    base = RunConfig()
    sections = {f.name: {g.name for g in dataclasses.fields(getattr(base, f.name))}
                for f in dataclasses.fields(RunConfig)}
    out: dict = {}
    for key, value in data.items():
        if isinstance(value, dict) or key in sections:
            if not isinstance(value, dict):
                raise ParseError(f"[{key}] must be a table")
            out.setdefault(key, {}).update(value)
            continue
        owners = [s for s, keys in sections.items() if key in keys]
        if len(owners) != 1:
            hint = "ambiguous; put it under a section" if owners else "unknown"
            raise UnknownKey(f"config key {key!r} is {hint}")
        out.setdefault(owners[0], {})[key] = value
    return out


def config_from_dict(data: dict) -> RunConfig:
    cfg = RunConfig()
    for section, values in _sectioned(data).items():
        if section not in {f.name for f in dataclasses.fields(RunConfig)}:
            raise UnknownKey(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ParseError(f"[{section}] must be a table")
        sub = getattr(cfg, section)
        names = {f.name: f for f in dataclasses.fields(sub)}
        for key, value in values.items():
            if key not in names:
                raise UnknownKey(f"unknown config key {section}.{key}")
            default = getattr(sub, key)
            try:
                if isinstance(default, tuple):
                    value = tuple(int(v) for v in value)
                elif isinstance(default, bool):
                    value = bool(value)
                elif isinstance(default, int):
                    if isinstance(value, float) and not value.is_integer():
                        raise ValueError
                    value = int(value)
                else:
                    value = float(value)
            except (TypeError, ValueError):
                raise ParseError(f"{section}.{key}: cannot use {value!r}") from None
            if not _CHECKS[(section, key)](value):
                raise OutOfRangeValue(f"{section}.{key} = {value!r} is out of range")
            setattr(sub, key, value)
    if cfg.tcn.receptive_field < cfg.tcn.sequence:
        raise OutOfRangeValue("tcn receptive field is shorter than its sequence length")
    return cfg


def config_loads(text: str) -> RunConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as e:
        raise ParseError(str(e)) from None
    return config_from_dict(data)


def config_load(path: str | Path) -> RunConfig:
    return config_loads(Path(path).read_text())
