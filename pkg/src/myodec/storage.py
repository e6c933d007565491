"""Session directories, checkpoint files and run configuration on disk.

Session directory layout::

    emg.csv     t_us,ch00..chNN        one row per 2 kHz sample
    kin.csv     t_us,rho0..rho6,phi0..phi6   one row per 25 ms step
    calib.csv   dof,rho_min,rho_max,theta_min,theta_max
    meta.toml   format, shape, trial bounds, [meta] values, [digests]
    sono.raw    optional: b"SONO", u32 n, u32 H, u32 W, n*H*W LE f64

Reals are written with ``repr`` (shortest string that parses back to the
same double), so a read/write cycle is bit-exact.  ``[digests]`` holds the
64-bit FNV-1a of every data file; a mismatch on read raises
:class:`ChecksumMismatch`.
"""
from __future__ import annotations

import io
import os
import struct
from pathlib import Path

import numpy as np
import tomli

from .config import RunConfig, config_load
from .errors import ChecksumMismatch, MissingFile, SchemaMismatch
from .kinematics import CalibrationMap
from .session import STEP_US, SessionLog
from .signal import SAMPLE_PERIOD_US
from .storage_codec import decode_checkpoint, fnv1a64, peek_version

SESSION_FORMAT = 1
REQUIRED = ("emg.csv", "kin.csv", "calib.csv", "meta.toml")
SONO_MAGIC = b"SONO"

__all__ = [
    "session_write", "session_read", "checkpoint_write", "checkpoint_read", "config_load",
    "sono_encode", "sono_decode", "RunConfig",
]


def _csv_bytes(header: list[str], t: np.ndarray, values: np.ndarray) -> bytes:
    buf = io.StringIO()
    buf.write(",".join(header) + "\n")
    for ti, row in zip(t.tolist(), values.tolist()):
        buf.write(f"{ti}," + ",".join(map(repr, row)) + "\n")
    return buf.getvalue().encode("ascii")


def _read_csv(path: Path, header: list[str]) -> np.ndarray:
    text = path.read_text()
    first, _, body = text.partition("\n")
    if first.strip().split(",") != header:
        raise SchemaMismatch(f"{path.name}: expected columns {header[:3]}..., got {first[:60]!r}")
    if not body.strip():
        return np.zeros((0, len(header)))
    try:
        data = np.loadtxt(io.StringIO(body), delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as e:
        raise SchemaMismatch(f"{path.name}: {e}") from None
    if data.shape[1] != len(header):
        raise SchemaMismatch(f"{path.name}: rows have {data.shape[1]} columns")
    return data


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise SchemaMismatch(f"cannot store meta value {v!r}")


def sono_encode(images: np.ndarray) -> bytes:
    img = np.asarray(images, dtype=np.float64)
    n, h, w = img.shape
    return SONO_MAGIC + struct.pack("<III", n, h, w) + img.astype("<f8").tobytes()


def sono_decode(data: bytes) -> np.ndarray:
    if data[:4] != SONO_MAGIC or len(data) < 16:
        raise SchemaMismatch("sono.raw: bad header")
    n, h, w = struct.unpack_from("<III", data, 4)
    if len(data) != 16 + 8 * n * h * w:
        raise SchemaMismatch("sono.raw: size does not match header")
    return np.frombuffer(data, dtype="<f8", offset=16).astype(np.float64).reshape(n, h, w)


def session_write(log: SessionLog, directory: str | os.PathLike) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    C = log.n_channels
    files = {
        "emg.csv": _csv_bytes(["t_us"] + [f"ch{c:02d}" for c in range(C)], log.emg_t_us, log.emg),
        "kin.csv": _csv_bytes(["t_us"] + [f"rho{j}" for j in range(log.rho.shape[1])]
                              + [f"phi{j}" for j in range(log.phi.shape[1])],
                              log.kin_t_us, np.hstack([log.rho, log.phi])),
    }
    cm = log.calibration
    files["calib.csv"] = _csv_bytes(
        ["dof", "rho_min", "rho_max", "theta_min", "theta_max"], np.arange(cm.n_dof),
        np.stack([cm.rho_min, cm.rho_max, cm.theta_min, cm.theta_max], axis=1))
    if log.sono is not None:
        files["sono.raw"] = sono_encode(log.sono)
    lines = [
        f"format = {SESSION_FORMAT}",
        f"n_channels = {C}",
        f"n_samples = {log.emg.shape[0]}",
        f"n_steps = {log.n_steps}",
        f"trials = {_toml_value([list(t) for t in log.trials])}",
        "",
        "[meta]",
    ]
    lines += [f"{k} = {_toml_value(v)}" for k, v in sorted(log.meta.items())]
    lines += ["", "[digests]"]
    lines += [f'"{name}" = "{fnv1a64(data):016x}"' for name, data in sorted(files.items())]
    files["meta.toml"] = ("\n".join(lines) + "\n").encode("utf-8")
    for name, data in files.items():
        (d / name).write_bytes(data)
    stale = d / "sono.raw"
    if log.sono is None and stale.exists():
        stale.unlink()
    return d


def session_read(directory: str | os.PathLike) -> SessionLog:
    d = Path(directory)
    for name in REQUIRED:
        if not (d / name).is_file():
            raise MissingFile(f"session {d} is missing {name}")
    try:
        meta = tomli.loads((d / "meta.toml").read_text())
    except tomli.TOMLDecodeError as e:
        raise SchemaMismatch(f"meta.toml: {e}") from None
    for key in ("format", "n_channels", "n_samples", "n_steps", "trials", "digests"):
        if key not in meta:
            raise SchemaMismatch(f"meta.toml lacks {key!r}")
    if meta["format"] != SESSION_FORMAT:
        raise SchemaMismatch(f"session format {meta['format']} is not supported")
    digests = meta["digests"]
    for name in REQUIRED[:3] + (("sono.raw",) if "sono.raw" in digests else ()):
        if not (d / name).is_file():
            raise MissingFile(f"session {d} is missing {name}")
        want = digests.get(name)
        got = f"{fnv1a64((d / name).read_bytes()):016x}"
        if want != got:
            raise ChecksumMismatch(f"{name}: content hash {got} does not match recorded {want}")
    C, n, K = meta["n_channels"], meta["n_samples"], meta["n_steps"]
    emg = _read_csv(d / "emg.csv", ["t_us"] + [f"ch{c:02d}" for c in range(C)])
    kin = _read_csv(d / "kin.csv", ["t_us"] + [f"rho{j}" for j in range(7)]
                    + [f"phi{j}" for j in range(7)])
    cal = _read_csv(d / "calib.csv", ["dof", "rho_min", "rho_max", "theta_min", "theta_max"])
    if emg.shape[0] != n or kin.shape[0] != K:
        raise SchemaMismatch("row counts disagree with meta.toml")
    if not np.array_equal(emg[:, 0], np.arange(n) * SAMPLE_PERIOD_US) or \
            not np.array_equal(kin[:, 0], np.arange(K) * STEP_US):
        raise SchemaMismatch("timestamps are off the 2 kHz / 25 ms grid")
    sono = sono_decode((d / "sono.raw").read_bytes()) if "sono.raw" in digests else None
    cmap = CalibrationMap(cal[:, 1], cal[:, 2], cal[:, 3], cal[:, 4])
    return SessionLog(
        emg=np.ascontiguousarray(emg[:, 1:]), rho=np.ascontiguousarray(kin[:, 1:8]),
        phi=np.ascontiguousarray(kin[:, 8:15]), calibration=cmap,
        trials=[tuple(t) for t in meta["trials"]], meta=dict(meta.get("meta", {})), sono=sono,
    )


def checkpoint_write(data: bytes, path: str | os.PathLike) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_bytes(bytes(data))
    return p


def checkpoint_read(path: str | os.PathLike) -> bytes:
    """Read and validate (magic, version, checksum) a checkpoint file."""
    p = Path(path)
    if not p.is_file():
        raise MissingFile(f"no checkpoint at {p}")
    data = p.read_bytes()
    peek_version(data)
    decode_checkpoint(data)
    return data
