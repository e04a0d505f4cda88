"""Dirichlet non-IID data partitioning across simulated devices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PartitionError
from .rng import SeededRng

_MAX_RETRIES = 100


@dataclass(frozen=True)
class ClientPartition:
    device_id: int
    indices: np.ndarray
    label_histogram: np.ndarray

    @property
    def size(self) -> int:
        return self.indices.size


def dirichlet_partition(labels: np.ndarray, m: int, beta: float,
                        rng: SeededRng) -> list[ClientPartition]:
    """Split sample indices over m devices with per-class Dirichlet(beta) shares.

    Smaller beta gives more skewed per-device label distributions. Partitions
    are disjoint and cover the dataset; draws are retried (bounded) until every
    device holds at least one sample.
    """
    labels = np.asarray(labels)
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if m < 1:
        raise ValueError(f"device count must be >= 1, got {m}")
    classes = int(labels.max()) + 1
    gen = rng.generator()

    for _ in range(_MAX_RETRIES):
        assigned = [[] for _ in range(m)]
        for c in range(classes):
            idx = np.flatnonzero(labels == c)
            gen.shuffle(idx)
            props = gen.dirichlet([beta] * m)
            cuts = (np.cumsum(props) * idx.size).astype(int)[:-1]
            for dev, part in enumerate(np.split(idx, cuts)):
                assigned[dev].append(part)
        sizes = [sum(p.size for p in parts) for parts in assigned]
        if min(sizes) >= 1:
            out = []
            for dev, parts in enumerate(assigned):
                indices = np.sort(np.concatenate(parts))
                hist = np.bincount(labels[indices], minlength=classes)
                out.append(ClientPartition(dev, indices, hist))
            return out
    raise PartitionError(f"could not give all {m} devices a sample after "
                         f"{_MAX_RETRIES} attempts (N={labels.size})")
