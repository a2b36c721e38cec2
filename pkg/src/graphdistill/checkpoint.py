"""Versioned binary container for named float64 parameter arrays.

Byte layout (all integers little-endian):

    offset  size  content
    0       8     magic b"GDCHKPT1"
    8       4     uint32 header length H
    12      H     UTF-8 JSON: {"version": 1,
                               "params": [{"name": str, "shape": [int, ...]}, ...]}
    12+H    ...   for each param, in header order: prod(shape) float64
                  values, little-endian, row-major, no padding

Readers must reject unknown magic or version.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"GDCHKPT1"
VERSION = 1


def save_checkpoint(path, params: dict[str, np.ndarray]) -> None:
    entries = [{"name": k, "shape": list(np.asarray(v).shape)} for k, v in params.items()]
    header = json.dumps({"version": VERSION, "params": entries}).encode("utf-8")
    with Path(path).open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for v in params.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    with path.open("rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        if header.get("version") != VERSION:
            raise FormatError(f"{path}: unsupported version {header.get('version')}")
        params = {}
        for entry in header["params"]:
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise FormatError(f"{path}: truncated data for {entry['name']}")
            params[entry["name"]] = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
    return params
