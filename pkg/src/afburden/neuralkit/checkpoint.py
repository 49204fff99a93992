"""Parameter checkpoints: JSON header followed by little-endian float64 data.

Layout: 8-byte magic, 8-byte little-endian header length, UTF-8 JSON header
(tensor names, shapes, offsets, free-form metadata), then the raw values.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError

MAGIC = b"AFBNK\x00\x01\n"


def save_checkpoint(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    tensors, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype="<f8")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset,
                        "count": int(arr.size)})
        chunks.append(arr.tobytes())
        offset += arr.size
    header = json.dumps({"meta": meta or {}, "tensors": tensors}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for c in chunks:
            fh.write(c)


def load_checkpoint(path):
    """Return ``(arrays, meta)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ParseError(f"{path}: not a checkpoint file", location=0)
    if len(raw) < 16:
        raise ParseError(f"{path}: truncated header", location=8)
    (n,) = struct.unpack_from("<Q", raw, 8)
    try:
        header = json.loads(raw[16:16 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ParseError(f"{path}: corrupt header", location=16) from None
    data = np.frombuffer(raw, dtype="<f8", offset=16 + n)
    arrays = {}
    for t in header["tensors"]:
        end = t["offset"] + t["count"]
        if end > data.size:
            raise ParseError(f"{path}: tensor {t['name']} runs past end of file",
                             location=16 + n + 8 * t["offset"])
        arrays[t["name"]] = data[t["offset"]:end].astype(np.float64).reshape(t["shape"])
    return arrays, header["meta"]
