"""Single-file binary serialization for trained models.

Layout: 4-byte magic, uint32 format version, uint64 header length, a
UTF-8 JSON header (model kind, dims, seed, vocabulary, array manifest),
then the raw float64 buffers in manifest order. Writing the same model
twice produces byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"DXMD"
VERSION = 1


def save_model(path: str | Path, kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    names = sorted(arrays)
    header = {
        "kind": kind,
        "meta": meta,
        "arrays": [{"name": n, "shape": list(arrays[n].shape)} for n in names],
    }
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True).encode("utf-8")
    with open(path, "wb") as handle:
        handle.write(MAGIC)
        handle.write(struct.pack("<I", VERSION))
        handle.write(struct.pack("<Q", len(blob)))
        handle.write(blob)
        for name in names:
            handle.write(np.ascontiguousarray(arrays[name], dtype=np.float64).tobytes())


def load_model(path: str | Path) -> tuple[str, dict, dict[str, np.ndarray]]:
    with open(path, "rb") as handle:
        if handle.read(4) != MAGIC:
            raise ValueError(f"{path}: not a dxaudit model file")
        (version,) = struct.unpack("<I", handle.read(4))
        if version != VERSION:
            raise ValueError(f"{path}: unsupported model version {version}")
        (header_len,) = struct.unpack("<Q", handle.read(8))
        header = json.loads(handle.read(header_len).decode("utf-8"))
        arrays: dict[str, np.ndarray] = {}
        for spec in header["arrays"]:
            shape = tuple(spec["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = handle.read(count * 8)
            arrays[spec["name"]] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
    return header["kind"], header["meta"], arrays
