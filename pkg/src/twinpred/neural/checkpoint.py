"""Checkpoint files: a JSON header followed by raw little-endian tensors.

Layout: the 8 bytes ``b"TWCKPT1\\n"``, a u64 header length, the UTF-8 JSON
header (sorted keys), then each tensor listed in ``header["tensors"]`` in
order. Baseline variants get a marker checkpoint with no tensors.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from ..errors import IntegrityError
from .model import ModelConfig, ModelParams

MAGIC = b"TWCKPT1\n"


def save_checkpoint(path, params: ModelParams | None, header: dict) -> None:
    header = dict(header)
    tensors = []
    if params is not None:
        header["model"] = asdict(params.config)
        for name, arr in params.items():
            tensors.append({"name": name, "shape": list(arr.shape), "dtype": np.dtype(arr.dtype).str.replace(">", "<").replace("=", "<")})
    header["tensors"] = tensors
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        if params is not None:
            for spec in tensors:
                fh.write(np.ascontiguousarray(params[spec["name"]], dtype=spec["dtype"]).tobytes())


def load_checkpoint(path):
    """Return ``(params or None, header)``."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise IntegrityError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack_from("<Q", raw, len(MAGIC))
    start = len(MAGIC) + 8
    header = json.loads(raw[start : start + n].decode())
    pos = start + n
    if not header["tensors"]:
        return None, header
    tensors = {}
    for spec in header["tensors"]:
        dt = np.dtype(spec["dtype"])
        size = int(np.prod(spec["shape"])) * dt.itemsize
        if pos + size > len(raw):
            raise IntegrityError(f"{path}: truncated tensor {spec['name']}")
        tensors[spec["name"]] = np.frombuffer(raw, dtype=dt, count=size // dt.itemsize, offset=pos).reshape(spec["shape"]).copy()
        pos += size
    if pos != len(raw):
        raise IntegrityError(f"{path}: trailing bytes after tensors")
    return ModelParams(ModelConfig(**header["model"]), tensors), header
