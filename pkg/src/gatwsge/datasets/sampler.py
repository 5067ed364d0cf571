"""Balanced, single-dataset mini-batch planning.

Every dataset contributes the same number of samples per epoch: the quota is
the rounded mean dataset size. Smaller datasets are oversampled (repeated
shuffled passes), larger ones undersampled without replacement. Batches never
mix datasets and are interleaved round-robin in the given dataset order.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Batch:
    tag: str
    indices: tuple[int, ...]


@dataclass(frozen=True)
class EpochPlan:
    batches: tuple[Batch, ...]

    def __iter__(self):
        return iter(self.batches)

    def __len__(self):
        return len(self.batches)

    def counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for b in self.batches:
            out[b.tag] = out.get(b.tag, 0) + len(b.indices)
        return out


def quota(sizes) -> int:
    return int(math.floor(sum(sizes) / len(sizes) + 0.5))


def _draw(rng: np.random.Generator, size: int, q: int, batch_size: int) -> list[list[int]]:
    """``q`` indices from ``range(size)`` cut into batches with no repeats inside a batch."""
    if size >= q:
        idx = rng.permutation(size)[:q].tolist()
        return [idx[i:i + batch_size] for i in range(0, q, batch_size)]
    batch_size = min(batch_size, size)
    batches, current = [], []
    pool: list[int] = []
    remaining = q
    while remaining:
        if not pool:
            perm = rng.permutation(size).tolist()
            # defer indices already in the open batch to the end of the new pass
            taken = set(current)
            pool = [i for i in perm if i not in taken] + [i for i in perm if i in taken]
        current.append(pool.pop(0))
        remaining -= 1
        if len(current) == batch_size or not remaining:
            batches.append(current)
            current = []
    return batches


def balanced_epoch_plan(datasets, batch_size: int, seed: int, epoch: int = 0) -> EpochPlan:
    """Plan one epoch.

    ``datasets`` is a sequence of ``(tag, size)`` or ``(tag, size, view)``
    tuples; the view is carried by the tag and otherwise ignored here.
    """
    if not datasets:
        raise ValueError("need at least one dataset")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    tags = [d[0] for d in datasets]
    sizes = [int(d[1]) for d in datasets]
    if min(sizes) < 1:
        raise ValueError("dataset sizes must be >= 1")
    q = quota(sizes)
    per_dataset = []
    for k, size in enumerate(sizes):
        rng = np.random.default_rng([seed, epoch, k])
        per_dataset.append(_draw(rng, size, q, batch_size))
    order = []
    for r in range(max(len(b) for b in per_dataset)):
        for tag, batches in zip(tags, per_dataset):
            if r < len(batches):
                order.append(Batch(tag, tuple(batches[r])))
    return EpochPlan(tuple(order))
