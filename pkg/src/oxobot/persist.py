"""Versioned flat binary model files plus a JSON metadata sidecar.

Layout: magic, format version, a JSON architecture descriptor, then every
parameter tensor in declared order as little-endian float64. The sidecar is
written next to the model as `<path>.json`.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"OXOM"
FORMAT_VERSION = 1


class ModelFormatError(Exception):
    pass


def save_model(path, kind: str, arch: dict, params, sidecar: dict) -> None:
    path = Path(path)
    header = {
        "kind": kind,
        "arch": arch,
        "param_shapes": [list(p.shape) for p in params],
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        for p in params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    meta = dict(sidecar)
    meta.setdefault("kind", kind)
    meta["format_version"] = FORMAT_VERSION
    with open(path.with_name(path.name + ".json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    """Returns (kind, arch, params, sidecar-or-None)."""
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise ModelFormatError(f"{path}: not a model file (bad magic {magic!r})")
        version, header_len = struct.unpack("<II", fh.read(8))
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"{path}: unsupported format version {version}")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        params = []
        for shape in header["param_shapes"]:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ModelFormatError(f"{path}: truncated parameter data")
            params.append(np.frombuffer(raw, dtype="<f8").reshape(shape).copy())
        if fh.read(1):
            raise ModelFormatError(f"{path}: trailing bytes after parameters")
    sidecar = None
    sidecar_path = path.with_name(path.name + ".json")
    if sidecar_path.exists():
        with open(sidecar_path, "r", encoding="utf-8") as fh:
            sidecar = json.load(fh)
    return header["kind"], header["arch"], params, sidecar
