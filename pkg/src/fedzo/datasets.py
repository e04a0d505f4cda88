"""Dataset ingestion: CIFAR-10 binary batches and synthetic Gaussian blobs."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import DatasetError
from .rng import SeededRng

_CIFAR_RECORD = 3073          # 1 label byte + 3*32*32 pixels
_CIFAR_BATCH_BYTES = 10_000 * _CIFAR_RECORD
_CIFAR_TRAIN = [f"data_batch_{i}.bin" for i in range(1, 6)]
_CIFAR_TEST = "test_batch.bin"


@dataclass(frozen=True)
class DatasetHandle:
    inputs: np.ndarray       # (N, ...) float64, normalized
    labels: np.ndarray       # (N,) int64
    classes: int

    def __post_init__(self):
        assert self.inputs.shape[0] == self.labels.shape[0]

    @property
    def size(self) -> int:
        return self.labels.size


def _read_cifar_batch(path: str) -> tuple[np.ndarray, np.ndarray]:
    if not os.path.exists(path):
        raise DatasetError(f"missing CIFAR-10 batch file: {path}")
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size != _CIFAR_BATCH_BYTES:
        offset = (raw.size // _CIFAR_RECORD) * _CIFAR_RECORD
        raise DatasetError(f"truncated CIFAR-10 batch {path}: {raw.size} bytes "
                           f"(expected {_CIFAR_BATCH_BYTES}), first bad record "
                           f"at byte offset {offset}")
    rec = raw.reshape(10_000, _CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if labels.max() >= 10:
        bad = int(np.argmax(labels >= 10))
        raise DatasetError(f"corrupt label {labels[bad]} in {path} record {bad}")
    images = rec[:, 1:].reshape(10_000, 3, 32, 32).astype(np.float64) / 255.0
    return images, labels


def load_cifar10(dir_path: str) -> tuple[DatasetHandle, DatasetHandle]:
    """Load the binary-version CIFAR-10 layout; per-channel normalization
    computed on the training split and applied to both splits."""
    xs, ys = [], []
    for name in _CIFAR_TRAIN:
        x, y = _read_cifar_batch(os.path.join(dir_path, name))
        xs.append(x)
        ys.append(y)
    train_x = np.concatenate(xs)
    train_y = np.concatenate(ys)
    test_x, test_y = _read_cifar_batch(os.path.join(dir_path, _CIFAR_TEST))

    mean = train_x.mean(axis=(0, 2, 3), keepdims=True)
    std = train_x.std(axis=(0, 2, 3), keepdims=True)
    for arr in (train_x, test_x):  # in place: the train split is ~1.2 GB
        arr -= mean
        arr /= std
    return (DatasetHandle(train_x, train_y, 10),
            DatasetHandle(test_x, test_y, 10))


def gen_synthetic(classes: int, dims: int, per_class: int, separation: float,
                  rng: SeededRng,
                  means: np.ndarray | None = None) -> DatasetHandle:
    """Gaussian class blobs with unit noise std.

    Class means are drawn so the expected pairwise distance is `separation`
    times the noise std; separation 0 collapses all classes onto one blob.
    Passing `means` reuses class means from another split instead of drawing
    fresh ones. The split is returned unnormalized.
    """
    if per_class == 0:
        raise ValueError("per_class must be positive")
    gen = rng.generator()
    if means is None:
        mean_std = separation / np.sqrt(2 * dims)
        means = gen.standard_normal((classes, dims)) * mean_std
    labels = np.repeat(np.arange(classes), per_class)
    inputs = means[labels] + gen.standard_normal((labels.size, dims))
    perm = gen.permutation(labels.size)
    inputs, labels = inputs[perm], labels[perm]
    return DatasetHandle(inputs, labels.astype(np.int64), classes)


def synthetic_class_means(classes: int, dims: int, separation: float,
                          rng: SeededRng) -> np.ndarray:
    """Draw the class-mean matrix gen_synthetic would draw for this stream."""
    mean_std = separation / np.sqrt(2 * dims)
    return rng.generator().standard_normal((classes, dims)) * mean_std


def gen_synthetic_pair(classes: int, dims: int, per_class: int,
                       test_per_class: int, separation: float,
                       rng: SeededRng) -> tuple[DatasetHandle, DatasetHandle]:
    """Train/test splits that share class means; both normalized with the
    training split's statistics."""
    means = synthetic_class_means(classes, dims, separation,
                                  rng.stream("means"))
    train = gen_synthetic(classes, dims, per_class, separation,
                          rng.stream("train"), means)
    test = gen_synthetic(classes, dims, test_per_class, separation,
                         rng.stream("test"), means)
    mean = train.inputs.mean(axis=0)
    std = np.maximum(train.inputs.std(axis=0), 1e-12)
    return (DatasetHandle((train.inputs - mean) / std, train.labels, classes),
            DatasetHandle((test.inputs - mean) / std, test.labels, classes))
