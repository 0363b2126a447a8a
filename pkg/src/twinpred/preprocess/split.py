"""Object-level train/val/test split driven by a seeded hash of the object id."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .windows import SampleSet

SPLITS = ("train", "val", "test")
DEFAULT_RATIOS = (0.70, 0.15, 0.15)


@dataclass
class DatasetSplit:
    train: SampleSet
    val: SampleSet
    test: SampleSet
    ratios: tuple = DEFAULT_RATIOS

    def __getitem__(self, name: str) -> SampleSet:
        return getattr(self, name)

    def items(self):
        return [(name, self[name]) for name in SPLITS]


def base_object_id(object_id: str) -> str:
    """Fragments ``A#0``, ``A#1`` of one recorded object share the base id ``A``."""
    return object_id.split("#", 1)[0]


def _rank_key(object_id: str, seed: int):
    digest = hashlib.sha256(f"{seed}:{object_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big"), object_id


def assign_objects(object_ids: Iterable[str], ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 42) -> dict:
    """Map each base object id to ``"train"``, ``"val"`` or ``"test"``.

    Ids are ordered by their seeded hash and cut into consecutive blocks of
    ``round(ratio * n)`` objects, so split sizes are exact up to rounding.
    """
    if abs(sum(ratios) - 1.0) > 1e-9 or len(ratios) != 3 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative values summing to 1, got {ratios}")
    ids = sorted({base_object_id(i) for i in object_ids}, key=lambda i: _rank_key(i, seed))
    n = len(ids)
    n_train = int(round(ratios[0] * n))
    n_val = min(n - n_train, int(round(ratios[1] * n)))
    out = {}
    for k, oid in enumerate(ids):
        out[oid] = "train" if k < n_train else "val" if k < n_train + n_val else "test"
    return out


def split_by_object(samples: SampleSet, ratios: Sequence[float] = DEFAULT_RATIOS, seed: int = 42, assignment=None) -> DatasetSplit:
    assignment = assignment or assign_objects(samples.object_id, ratios, seed)
    labels = np.array([assignment[base_object_id(i)] for i in samples.object_id], dtype=object)
    parts = {name: samples.subset(np.flatnonzero(labels == name)) for name in SPLITS}
    return DatasetSplit(parts["train"], parts["val"], parts["test"], tuple(ratios))
