"""Datasets: CIFAR-10 binary records, a seeded synthetic generator, augmentation."""

import math
import os
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .errors import FormatError, GenerationError, RecordError

CIFAR_SHAPE = (3, 32, 32)
CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_CLASSES = 10


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W], uint8 or float32 in [0, 1]
    labels: np.ndarray  # [N] int64
    num_classes: int
    mean: np.ndarray = None  # per-channel stats, filled by fit_normalization
    std: np.ndarray = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or len(self.images) != len(self.labels):
            raise ValueError(
                f"images {self.images.shape} and labels {self.labels.shape} do not pair up"
            )
        if len(self.labels) < 1:
            raise ValueError("dataset is empty")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self):
        return len(self.labels)

    def as_float(self):
        """Images scaled to [0, 1] as float32."""
        if self.images.dtype == np.uint8:
            return self.images.astype(np.float32) / 255.0
        return self.images.astype(np.float32, copy=False)

    def fit_normalization(self):
        x = self.as_float()
        self.mean = x.mean(axis=(0, 2, 3))
        self.std = x.std(axis=(0, 2, 3))
        self.std[self.std == 0] = 1.0
        return self

    def normalized(self, mean=None, std=None):
        mean = self.mean if mean is None else np.asarray(mean, dtype=np.float32)
        std = self.std if std is None else np.asarray(std, dtype=np.float32)
        if mean is None:
            raise ValueError("normalization stats not set; call fit_normalization first")
        x = self.as_float()
        return ((x - mean[:, None, None]) / std[:, None, None]).astype(np.float32)

    def subset(self, idx):
        return Dataset(self.images[idx], self.labels[idx], self.num_classes, self.mean, self.std)


def load_cifar_binary(paths):
    """Parse CIFAR-10 binary batches: per record 1 label byte + 3072 pixel bytes.

    Pixels are channel-planar (all R, then G, then B), each plane row-major.
    """
    if isinstance(paths, (str, os.PathLike)):
        paths = [paths]
    images, labels = [], []
    for path in paths:
        raw = np.fromfile(path, dtype=np.uint8)
        if raw.size == 0 or raw.size % CIFAR_RECORD:
            whole = raw.size // CIFAR_RECORD * CIFAR_RECORD
            raise FormatError(
                f"{path}: size {raw.size} is not a positive multiple of {CIFAR_RECORD}", whole
            )
        rec = raw.reshape(-1, CIFAR_RECORD)
        bad = np.flatnonzero(rec[:, 0] >= CIFAR_CLASSES)
        if bad.size:
            i = int(bad[0])
            raise RecordError(f"{path}: record {i} has label {rec[i, 0]}", i * CIFAR_RECORD)
        labels.append(rec[:, 0].astype(np.int64))
        images.append(rec[:, 1:].reshape(-1, *CIFAR_SHAPE))
    return Dataset(np.concatenate(images), np.concatenate(labels), CIFAR_CLASSES)


def write_cifar_binary(path, dataset):
    """Inverse of :func:`load_cifar_binary` for 3x32x32 uint8-representable images."""
    x = dataset.images
    if x.shape[1:] != CIFAR_SHAPE:
        raise ValueError(f"CIFAR binary needs images of shape {CIFAR_SHAPE}, got {x.shape[1:]}")
    if x.dtype != np.uint8:
        x = np.clip(np.rint(x * 255.0), 0, 255).astype(np.uint8)
    if dataset.labels.max() >= 256:
        raise RecordError("labels must fit in one byte")
    rec = np.empty((len(x), CIFAR_RECORD), dtype=np.uint8)
    rec[:, 0] = dataset.labels
    rec[:, 1:] = x.reshape(len(x), -1)
    rec.tofile(path)


def _templates(gen, num_classes, channels, size, res):
    coarse = gen.random((num_classes, channels, res, res))
    reps = math.ceil(size / res)
    up = coarse.repeat(reps, axis=2).repeat(reps, axis=3)
    return up[:, :, :size, :size]


def synth_dataset(num_classes, per_class, image_size=32, noise_std=0.05, seed=0,
                  channels=3, template_res=8, noise_seed=None):
    """Seeded class templates plus Gaussian pixel noise, clipped to [0, 1].

    Templates are blocky random images (``template_res`` cells per side),
    redrawn until every pair is at least ``0.05 * sqrt(C*H*W)`` apart in L2.
    ``noise_seed`` lets a held-out split share templates with the train
    split while drawing fresh noise.
    """
    if min(num_classes, per_class, image_size, channels, template_res) < 1 or noise_std < 0:
        raise ValueError("synth_dataset arguments must be positive")
    gen = rng_mod.stream(seed, "synth", 0)
    min_dist = 0.5 * math.sqrt(channels * image_size * image_size) * 0.1
    for _ in range(100):
        tpl = _templates(gen, num_classes, channels, image_size, template_res)
        flat = tpl.reshape(num_classes, -1)
        dist = np.sqrt(((flat[:, None] - flat[None]) ** 2).sum(-1))
        np.fill_diagonal(dist, np.inf)
        if num_classes == 1 or dist.min() >= min_dist:
            break
    else:
        raise GenerationError(f"could not separate {num_classes} templates by {min_dist:.3f}")
    noise_gen = rng_mod.stream(seed if noise_seed is None else noise_seed, "synth", 1)
    labels = np.repeat(np.arange(num_classes), per_class)
    images = tpl[labels]
    if noise_std > 0:
        images = images + noise_gen.standard_normal(images.shape) * noise_std
    images = np.clip(images, 0.0, 1.0).astype(np.float32)
    ds = Dataset(images, labels, num_classes)
    ds.templates = tpl.astype(np.float32)
    return ds


def augment(image, rng, mode="train", pad=4, flip=None):
    """Random horizontal flip (p=0.5) and reflect-pad + random crop, for one [C, H, W] image.

    ``flip`` forces the flip decision when not None.
    """
    if mode != "train":
        return image
    _, h, w = image.shape
    do_flip = rng.random() < 0.5 if flip is None else flip
    if do_flip:
        image = image[:, :, ::-1]
    if pad:
        padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
        top, left = rng.integers(0, 2 * pad + 1, size=2)
        image = padded[:, top:top + h, left:left + w]
    return np.ascontiguousarray(image)


def augment_batch(images, seed, epoch, indices, pad=4):
    """Augment each image with its own stream keyed by (seed, epoch, dataset index)."""
    out = np.empty_like(images)
    for j, idx in enumerate(indices):
        out[j] = augment(images[j], rng_mod.stream(seed, "augment", epoch, int(idx)), pad=pad)
    return out
