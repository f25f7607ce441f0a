"""Bundled synthetic dataset: Gaussian class blobs.

Class centers are drawn once per seed and shared between the train and
test draws, so both splits describe the same classification problem.
The spread parameter scales center dispersion against unit within-class
noise: larger values make the task easier.
"""

from __future__ import annotations

import numpy as np

from .data import LabeledDataset
from .errors import ConfigError
from .seeding import rng_for


def _blob_samples(
    centers: np.ndarray, per_class: int, rng: np.random.Generator
) -> LabeledDataset:
    classes, dim = centers.shape
    features = np.empty((classes * per_class, dim), dtype=np.float64)
    labels = np.empty(classes * per_class, dtype=np.int64)
    for c in range(classes):
        block = slice(c * per_class, (c + 1) * per_class)
        features[block] = centers[c] + rng.normal(0.0, 1.0, size=(per_class, dim))
        labels[block] = c
    order = rng.permutation(len(labels))
    return LabeledDataset(
        features=features[order], labels=labels[order], class_count=classes
    )


def gaussian_blobs(
    classes: int,
    dim: int,
    train_per_class: int,
    test_per_class: int,
    spread: float,
    seed: int,
) -> tuple[LabeledDataset, LabeledDataset]:
    """Balanced train and test sets over shared class centers."""
    if classes < 2:
        raise ConfigError(f"need >= 2 classes, got {classes}")
    if dim < 1:
        raise ConfigError(f"need >= 1 feature dimension, got {dim}")
    if train_per_class < 1 or test_per_class < 1:
        raise ConfigError("per-class sample counts must be >= 1")
    if spread <= 0:
        raise ConfigError(f"spread must be > 0, got {spread}")
    centers = rng_for(seed, "blob-centers").normal(0.0, spread, size=(classes, dim))
    train = _blob_samples(centers, train_per_class, rng_for(seed, "blob-train"))
    test = _blob_samples(centers, test_per_class, rng_for(seed, "blob-test"))
    return train, test
