"""Binary field files with a JSON sidecar.

Layout: 16-byte header (8-byte magic, u32 version, u32 reserved), u32 rank,
``rank`` u32 dims, then little-endian float64 values in row-major order.
The sidecar ``<name>.json`` carries spacing, dt, units and anything else.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"PATMGFLD"
VERSION = 1


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def write_field(path, values: np.ndarray, meta: dict | None = None) -> Path:
    path = Path(path)
    values = np.ascontiguousarray(values, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MAGIC + struct.pack("<II", VERSION, 0))
        fh.write(struct.pack("<I", values.ndim))
        fh.write(struct.pack(f"<{values.ndim}I", *values.shape))
        fh.write(values.tobytes(order="C"))
    if meta is not None:
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path


def read_field(path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path}: not a field file")
    version, _ = struct.unpack_from("<II", raw, 8)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    (rank,) = struct.unpack_from("<I", raw, 16)
    dims = struct.unpack_from(f"<{rank}I", raw, 20)
    offset = 20 + 4 * rank
    count = int(np.prod(dims)) if rank else 1
    if len(raw) - offset != 8 * count:
        raise ValueError(f"{path}: payload size does not match header")
    values = np.frombuffer(raw, dtype="<f8", offset=offset, count=count).reshape(dims).copy()
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    return values, meta
