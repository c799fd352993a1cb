"""Synthetic labeled image data: one fixed pseudo-random template per class,
samples are the template plus Gaussian noise, clamped to [-1, 1].

Train and test splits draw from disjoint seed streams, so they are disjoint
by construction. Splits are exactly class-balanced and deterministically
shuffled.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .checkpoint import load_tensors, save_tensors
from .errors import ConfigError

_TEMPLATE_STREAM = 2
_TRAIN_STREAM = 0
_TEST_STREAM = 1


@dataclass(frozen=True)
class SyntheticDatasetSpec:
    num_classes: int = 4
    train_samples: int = 2000
    test_samples: int = 500
    sigma: float = 0.15
    seed: int = 1234
    channels: int = 3
    height: int = 16
    width: int = 16

    def __post_init__(self):
        if self.num_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.num_classes}")
        if self.train_samples < 1 or self.test_samples < 1:
            raise ConfigError("each split needs at least one sample")
        if self.sigma < 0:
            raise ConfigError(f"noise sigma must be non-negative, got {self.sigma}")

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return (self.channels, self.height, self.width)


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32 in [-1, 1]
    labels: np.ndarray  # (N,) int64

    def __len__(self) -> int:
        return len(self.labels)


def class_templates(spec: SyntheticDatasetSpec) -> np.ndarray:
    out = np.empty((spec.num_classes,) + spec.image_shape, dtype=np.float32)
    for c in range(spec.num_classes):
        rng = np.random.default_rng([spec.seed, _TEMPLATE_STREAM, c])
        out[c] = rng.uniform(-1.0, 1.0, size=spec.image_shape).astype(np.float32)
    return out


def _balanced_labels(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    counts = [n // k + (1 if c < n % k else 0) for c in range(k)]
    labels = np.repeat(np.arange(k, dtype=np.int64), counts)
    rng.shuffle(labels)
    return labels


def _split(spec: SyntheticDatasetSpec, n: int, stream: int) -> Dataset:
    rng = np.random.default_rng([spec.seed, stream])
    labels = _balanced_labels(n, spec.num_classes, rng)
    templates = class_templates(spec)
    noise = rng.normal(0.0, spec.sigma, size=(n,) + spec.image_shape).astype(np.float32)
    images = np.clip(templates[labels] + noise, -1.0, 1.0).astype(np.float32)
    return Dataset(images, labels)


def gen_dataset(spec: SyntheticDatasetSpec) -> tuple[Dataset, Dataset]:
    train = _split(spec, spec.train_samples, _TRAIN_STREAM)
    test = _split(spec, spec.test_samples, _TEST_STREAM)
    return train, test


def nearest_template_accuracy(ds: Dataset, templates: np.ndarray) -> float:
    """Brute-force classifier: nearest class template in squared L2."""
    flat = ds.images.reshape(len(ds), -1)
    temps = templates.reshape(len(templates), -1)
    d2 = ((flat[:, None, :] - temps[None, :, :]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == ds.labels).mean())


def save_dataset(path, ds: Dataset) -> None:
    save_tensors(path, {"images": ds.images,
                        "labels": ds.labels.astype(np.float32)})


def load_dataset(path) -> Dataset:
    entries = load_tensors(path)
    if "images" not in entries or "labels" not in entries:
        raise ConfigError(f"{path}: not a dataset container (needs 'images' and 'labels')")
    labels = entries["labels"]
    rounded = np.rint(labels)
    if not np.allclose(labels, rounded):
        raise ConfigError(f"{path}: labels are not integral class ids")
    return Dataset(entries["images"], rounded.astype(np.int64))
