"""On-disk dataset layout.

Per split ``<name>`` a directory holds:

``<name>.bin``
    32-byte little-endian header ``b"TWDS"``, version (u32), N (u64), H, P,
    feature width (u32 each), 4 pad bytes; then N*H*F float64 features and
    N*P*2 float64 anchor-relative targets, row-major.
``<name>_anchors.csv``
    Header ``a_x,a_y,object_id,t0,class_label`` and one row per sample, in
    the same order as the ``.bin`` rows. Floats are written with ``repr`` so
    they round-trip exactly.
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from ..errors import IntegrityError
from .split import SPLITS, DatasetSplit
from .windows import SampleSet

MAGIC = b"TWDS"
VERSION = 1
_HEADER = struct.Struct("<4sIQIII4x")
ANCHOR_FIELDS = ["a_x", "a_y", "object_id", "t0", "class_label"]


def write_samples(samples: SampleSet, directory: str | Path, name: str) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    N, H, F = samples.history.shape
    P = samples.future.shape[1]
    with open(directory / f"{name}.bin", "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, N, H, P, F))
        fh.write(np.ascontiguousarray(samples.history, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(samples.future, dtype="<f8").tobytes())
    with open(directory / f"{name}_anchors.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ANCHOR_FIELDS)
        for (ax, ay), oid, t0, cls in zip(samples.anchor, samples.object_id, samples.t0, samples.class_label):
            writer.writerow([repr(float(ax)), repr(float(ay)), oid, repr(float(t0)), cls])


def read_samples(directory: str | Path, name: str) -> SampleSet:
    directory = Path(directory)
    bin_path = directory / f"{name}.bin"
    anchor_path = directory / f"{name}_anchors.csv"
    if not bin_path.exists():
        raise IntegrityError(f"missing feature file {bin_path}")
    if not anchor_path.exists():
        raise IntegrityError(f"missing anchor file {anchor_path}")

    raw = bin_path.read_bytes()
    if len(raw) < _HEADER.size:
        raise IntegrityError(f"{bin_path}: truncated header")
    magic, version, N, H, P, F = _HEADER.unpack_from(raw)
    if magic != MAGIC or version != VERSION:
        raise IntegrityError(f"{bin_path}: unrecognised header")
    n_hist, n_fut = N * H * F, N * P * 2
    if len(raw) != _HEADER.size + 8 * (n_hist + n_fut):
        raise IntegrityError(f"{bin_path}: payload size does not match header")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    history = body[:n_hist].reshape(N, H, F).astype(float)
    future = body[n_hist:].reshape(N, P, 2).astype(float)

    with open(anchor_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ANCHOR_FIELDS:
            raise IntegrityError(f"{anchor_path}: unexpected header {header}")
        rows = list(reader)
    if len(rows) != N:
        raise IntegrityError(f"{anchor_path}: {len(rows)} anchor rows for {N} samples")
    try:
        anchor = np.array([[float(r[0]), float(r[1])] for r in rows]).reshape(N, 2)
        t0 = np.array([float(r[3]) for r in rows])
    except (ValueError, IndexError) as exc:
        raise IntegrityError(f"{anchor_path}: malformed row ({exc})") from None
    return SampleSet(history, future, anchor, [r[2] for r in rows], [r[4] for r in rows], t0)


def write_dataset(split: DatasetSplit, directory: str | Path) -> None:
    for name, samples in split.items():
        write_samples(samples, directory, name)


def read_dataset(directory: str | Path, ratios=None) -> DatasetSplit:
    parts = {name: read_samples(directory, name) for name in SPLITS}
    if ratios is None:
        return DatasetSplit(parts["train"], parts["val"], parts["test"])
    return DatasetSplit(parts["train"], parts["val"], parts["test"], tuple(ratios))
