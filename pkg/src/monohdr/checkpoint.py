"""Checkpoint binary format (all little-endian).

::

    magic      4 bytes  b"MH3D"
    version    u32
    nx ny nz   3 x u32
    bbox       6 x f64  (min xyz, max xyz)
    density    f64[nx*ny*nz]          raw (pre-activation), C order
    color      f64[nx*ny*nz*3]        raw (pre-activation), C order
    n_blocks   u32
    block*     u16 name_len | name (utf-8) | u8 kind | payload
                 kind 0 (array): u8 ndim | u32 dims[ndim] | f64 data
                 kind 1 (json):  u64 nbytes | utf-8 json

The trainer appends converter weights, optimiser moments, the RNG state and
run metadata as blocks.
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"MH3D"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _dump_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def write_checkpoint(path, density: np.ndarray, color: np.ndarray, bbox_min, bbox_max,
                     blocks: dict[str, object]) -> None:
    density = np.ascontiguousarray(density, dtype="<f8")
    color = np.ascontiguousarray(color, dtype="<f8")
    if density.ndim != 3 or color.shape != density.shape + (3,):
        raise CheckpointError("bad field shapes")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<3I", *density.shape))
    buf.write(struct.pack("<6d", *np.asarray(bbox_min, float), *np.asarray(bbox_max, float)))
    buf.write(density.tobytes())
    buf.write(color.tobytes())
    buf.write(struct.pack("<I", len(blocks)))
    for name in sorted(blocks):
        value = blocks[name]
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        if isinstance(value, np.ndarray):
            arr = np.asarray(value, dtype="<f8")  # ascontiguousarray would promote 0-d to 1-d
            buf.write(struct.pack("<BB", 0, arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(arr.tobytes())
        else:
            payload = _dump_json(value)
            buf.write(struct.pack("<BQ", 1, len(payload)))
            buf.write(payload)
    Path(path).write_bytes(buf.getvalue())


def _take(f, n: int) -> bytes:
    b = f.read(n)
    if len(b) != n:
        raise CheckpointError("truncated checkpoint")
    return b


def read_checkpoint(path) -> dict:
    """Returns ``{"density", "color", "bbox_min", "bbox_max", "blocks"}``."""
    f = io.BytesIO(Path(path).read_bytes())
    if _take(f, 4) != MAGIC:
        raise CheckpointError(f"{path}: bad magic")
    (version,) = struct.unpack("<I", _take(f, 4))
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    res = struct.unpack("<3I", _take(f, 12))
    bbox = struct.unpack("<6d", _take(f, 48))
    n = int(np.prod(res))
    density = np.frombuffer(_take(f, 8 * n), dtype="<f8").reshape(res).astype(np.float64)
    color = np.frombuffer(_take(f, 24 * n), dtype="<f8").reshape(res + (3,)).astype(np.float64)
    (n_blocks,) = struct.unpack("<I", _take(f, 4))
    blocks: dict[str, object] = {}
    for _ in range(n_blocks):
        (ln,) = struct.unpack("<H", _take(f, 2))
        name = _take(f, ln).decode("utf-8")
        (kind,) = struct.unpack("<B", _take(f, 1))
        if kind == 0:
            (ndim,) = struct.unpack("<B", _take(f, 1))
            shape = struct.unpack(f"<{ndim}I", _take(f, 4 * ndim)) if ndim else ()
            count = int(np.prod(shape)) if ndim else 1
            blocks[name] = np.frombuffer(_take(f, 8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        elif kind == 1:
            (nbytes,) = struct.unpack("<Q", _take(f, 8))
            blocks[name] = json.loads(_take(f, nbytes).decode("utf-8"))
        else:
            raise CheckpointError(f"unknown block kind {kind}")
    return {"density": density, "color": color, "bbox_min": np.array(bbox[:3]),
            "bbox_max": np.array(bbox[3:]), "blocks": blocks}
