"""Datasets: a deterministic synthetic pattern set and a PGM/PPM folder loader."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, DataError
from .pnm import read_pnm

IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm")


@dataclass
class Dataset:
    images: np.ndarray          # [n, 3, h, w] float32 in [0, 1]
    labels: np.ndarray          # [n] int64
    num_classes: int
    split: str = "train"
    class_names: tuple = ()

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise ContractError(f"images must be [n, 3, h, w], got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ContractError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ContractError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def image_size(self) -> int:
        return self.images.shape[-1]

    def batches(self, batch_size: int, rng: np.random.Generator, drop_last: bool = False):
        """One epoch of (images, labels) in an order fixed by ``rng``."""
        order = rng.permutation(len(self))
        stop = len(order) - (len(order) % batch_size if drop_last else 0)
        for i in range(0, stop, batch_size):
            idx = order[i:i + batch_size]
            yield self.images[idx], self.labels[idx]


def _class_pattern(k: int, num_classes: int) -> np.ndarray:
    """Per-class grating: orientation, spatial frequency and colour mix depend on ``k``."""
    theta = np.pi * k / num_classes
    freq = 3.0 + 2.0 * (k % 3) + 1.0 * (k // 3)
    colour = 0.2 + 0.8 * np.clip(np.cos(2 * np.pi * (k / num_classes - np.arange(3) / 3)), 0.0, 1.0)
    return np.array([theta, freq, *colour])


def synth_dataset(n: int, num_classes: int, size: int, seed: int = 0, noise: float = 0.1,
                  split: str = "train") -> Dataset:
    """Class-conditional sinusoidal gratings plus Gaussian noise.

    Each class has its own orientation, spatial frequency and colour
    weighting; samples jitter phase, orientation and contrast so that a
    single template does not separate the classes. Labels are balanced to
    within one sample per class. Bitwise deterministic in ``seed``.
    """
    if n <= 0 or num_classes <= 0 or size <= 0:
        raise ContractError("n, num_classes and size must be positive")
    rng = np.random.default_rng(seed)
    specs = np.stack([_class_pattern(k, num_classes) for k in range(num_classes)])
    labels = rng.permutation(np.arange(n) % num_classes).astype(np.int64)

    yy, xx = np.meshgrid(np.arange(size) / size, np.arange(size) / size, indexing="ij")
    theta = specs[labels, 0] + rng.uniform(-0.15, 0.15, n)
    freq = specs[labels, 1] * rng.uniform(0.9, 1.1, n)
    phase = rng.uniform(-np.pi / 3, np.pi / 3, n)
    contrast = rng.uniform(0.6, 1.0, n)
    proj = np.cos(theta)[:, None, None] * xx + np.sin(theta)[:, None, None] * yy
    wave = np.sin(2 * np.pi * freq[:, None, None] * proj + phase[:, None, None])      # [n, h, w]
    colour = specs[labels, 2:]                                                        # [n, 3]
    images = 0.5 + 0.4 * contrast[:, None, None, None] * colour[:, :, None, None] * wave[:, None]
    images = images + noise * rng.standard_normal(images.shape)
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    names = tuple(f"class{k}" for k in range(num_classes))
    return Dataset(images, labels, num_classes, split, names)


def resize_nearest(img: np.ndarray, size: int) -> np.ndarray:
    """[c, h, w] -> [c, size, size] by nearest-neighbour sampling."""
    _, h, w = img.shape
    rows = (np.arange(size) * h // size).clip(0, h - 1)
    cols = (np.arange(size) * w // size).clip(0, w - 1)
    return img[:, rows][:, :, cols]


def load_image(path, size: int | None = None) -> np.ndarray:
    """Read one PGM/PPM as float32 [3, h, w]; grayscale is replicated to RGB."""
    img = read_pnm(path)
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    if size is not None and img.shape[1:] != (size, size):
        img = resize_nearest(img, size)
    return img.astype(np.float32)


def folder_dataset(root, size: int, split: str = "train") -> Dataset:
    """``root/<class>/*.ppm|*.pgm``; classes are the sorted sub-directory names."""
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"dataset folder not found: {root}")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise DataError(f"{root} has no class sub-directories")
    images, labels = [], []
    for k, name in enumerate(classes):
        for path in sorted((root / name).iterdir()):
            if path.suffix.lower() in IMAGE_SUFFIXES:
                images.append(load_image(path, size))
                labels.append(k)
    if not images:
        raise DataError(f"no .ppm/.pgm images under {root}")
    return Dataset(np.stack(images), np.array(labels, dtype=np.int64), len(classes), split, tuple(classes))
