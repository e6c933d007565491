"""Byte-level codecs shared by storage and models: FNV-1a and the checkpoint frame.

Checkpoint layout (all integers little-endian)::

    b"MYOD"                 magic
    u16                     format version
    u8 + ascii              model kind tag
    u32 + utf-8 JSON        config block (includes "shapes" of the arrays)
    u64 + n * f64 (LE)      parameter block
    u64                     FNV-1a 64 of every preceding byte
"""
from __future__ import annotations

import json
import struct

import numpy as np
from numba import njit

from .errors import CorruptCheckpoint, VersionMismatch

MAGIC = b"MYOD"
FORMAT_VERSION = 1

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


@njit(cache=True)
def _fnv1a64(buf, h):
    p = np.uint64(FNV_PRIME)
    for x in buf:
        h = (h ^ np.uint64(x)) * p
    return h


def fnv1a64(data: bytes | bytearray | memoryview, seed: int = FNV_OFFSET) -> int:
    """64-bit FNV-1a; ``seed`` chains hashes across several buffers."""
    arr = np.frombuffer(memoryview(data), dtype=np.uint8)
    return int(_fnv1a64(arr, np.uint64(seed)))


def encode_checkpoint(kind: str, config: dict, arrays: list[np.ndarray]) -> bytes:
    cfg = dict(config)
    cfg["shapes"] = [list(a.shape) for a in arrays]
    cfg_bytes = json.dumps(cfg, sort_keys=True).encode("utf-8")
    tag = kind.encode("ascii")
    flat = (np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays])
            if arrays else np.zeros(0))
    body = b"".join([
        MAGIC,
        struct.pack("<H", FORMAT_VERSION),
        struct.pack("<B", len(tag)), tag,
        struct.pack("<I", len(cfg_bytes)), cfg_bytes,
        struct.pack("<Q", flat.size), flat.astype("<f8").tobytes(),
    ])
    return body + struct.pack("<Q", fnv1a64(body))


def peek_version(data: bytes) -> int:
    if len(data) < 6 or data[:4] != MAGIC:
        raise CorruptCheckpoint("bad magic: not a MYOD checkpoint")
    return struct.unpack_from("<H", data, 4)[0]


def decode_checkpoint(data: bytes, expected_kind: str | None = None):
    """Inverse of :func:`encode_checkpoint`; returns ``(kind, config, arrays)``."""
    data = bytes(data)
    version = peek_version(data)
    if version > FORMAT_VERSION or version < 1:
        raise VersionMismatch(
            f"checkpoint format version {version}, this build supports {FORMAT_VERSION}"
        )
    if len(data) < 8 + 6:
        raise CorruptCheckpoint("truncated checkpoint")
    body, (digest,) = data[:-8], struct.unpack("<Q", data[-8:])
    if fnv1a64(body) != digest:
        raise CorruptCheckpoint("checksum mismatch (truncated or corrupted checkpoint)")
    try:
        off = 6
        (n_tag,) = struct.unpack_from("<B", body, off)
        off += 1
        kind = body[off:off + n_tag].decode("ascii")
        off += n_tag
        (n_cfg,) = struct.unpack_from("<I", body, off)
        off += 4
        config = json.loads(body[off:off + n_cfg].decode("utf-8"))
        off += n_cfg
        (n_vals,) = struct.unpack_from("<Q", body, off)
        off += 8
        if off + 8 * n_vals != len(body):
            raise CorruptCheckpoint("parameter block length mismatch")
        flat = np.frombuffer(body, dtype="<f8", count=n_vals, offset=off).astype(np.float64)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CorruptCheckpoint(f"malformed checkpoint: {e}") from None
    if expected_kind is not None and kind != expected_kind:
        raise VersionMismatch(f"checkpoint holds a {kind!r} model, expected {expected_kind!r}")
    arrays, pos = [], 0
    for shape in config.pop("shapes"):
        n = int(np.prod(shape)) if shape else 1
        arrays.append(flat[pos:pos + n].reshape(shape).copy())
        pos += n
    if pos != flat.size:
        raise CorruptCheckpoint("parameter block does not match declared shapes")
    return kind, config, arrays
