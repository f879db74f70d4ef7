"""Synthetic image-classification data: generation, downsampling, batching,
and dataset file I/O.

Images are single-channel float64 grids in [0, 1], stored row-major as 2-D
numpy arrays.  Each class has a fixed prototype pattern; samples are the
prototype plus seeded Gaussian pixel noise, clamped to [0, 1].

The prototypes are built in texture/solid pairs on shared regions so that
average pooling removes information in a controlled way: fine 1-px
checkers lose their texture at factor 2, 4-px stripes at factor 4, and
one pair differs by intensity alone and never degrades.  The solid twin
sits slightly below the texture's pooled mean level, so past the merge
factor a weak intensity signal remains: the task gets genuinely harder,
not impossible, as the factor grows.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from ._binio import ByteReader
from .exceptions import FormatError

DATASET_MAGIC = b"CQDS"
DATASET_VERSION = 1

_SPLIT_CODES = {"train": 0, "validation": 1}
_SPLIT_NAMES = {v: k for k, v in _SPLIT_CODES.items()}


@dataclass
class LabeledPair:
    """A full-resolution image, its downsampled version, and the class label."""

    full: np.ndarray
    low: np.ndarray
    label: int


@dataclass
class Dataset:
    pairs: list
    num_classes: int
    h_full: int
    factor: int
    split: str
    seed: int

    def __len__(self) -> int:
        return len(self.pairs)

    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.pairs], dtype=np.int64)


def class_prototype(label: int, num_classes: int, h: int) -> np.ndarray:
    """Deterministic prototype image for one class.

    Classes come in pairs over five region templates (vertical bar,
    horizontal bar, left half, top half, center square).  Within a pair
    the even class is solid and the odd class textured; the solid level
    sits 0.015 below the texture's mean, so the twins stay weakly
    separable even after the texture is pooled away.  The center square
    pair uses two strongly different solid intensities.  Labels >= 10
    reuse the base patterns with a small brightness offset.
    """
    if not 0 <= label < num_classes:
        raise ValueError(f"label {label} out of range [0, {num_classes})")
    if h < 8:
        raise ValueError(f"prototype side must be >= 8, got {h}")
    img = np.full((h, h), 0.1)
    rows = np.arange(h)[:, None]
    cols = np.arange(h)[None, :]
    base = label % 10
    region = base // 2
    textured = base % 2 == 1
    half, eighth, quarter = h // 2, h // 8, h // 4

    if region == 0:
        mask = (cols >= half - eighth) & (cols < half + eighth)
        fill = np.where(rows % 4 < 2, 0.9, 0.5) if textured else 0.685
    elif region == 1:
        mask = (rows >= half - eighth) & (rows < half + eighth)
        fill = np.where(cols % 4 < 2, 0.9, 0.5) if textured else 0.685
    elif region == 2:
        mask = cols < half
        fill = np.where((rows + cols) % 2 == 0, 0.9, 0.3) if textured else 0.585
    elif region == 3:
        mask = rows < half
        fill = np.where((rows + cols) % 2 == 0, 0.9, 0.3) if textured else 0.585
    else:
        mask = (rows >= quarter) & (rows < h - quarter) & (cols >= quarter) & (cols < h - quarter)
        fill = 0.8 if textured else 0.4

    img = np.where(mask, np.broadcast_to(fill, (h, h)), img)
    if label >= 10:
        img = np.clip(img + 0.04 * (label // 10), 0.0, 1.0)
    return img


def generate_synthetic(n: int, num_classes: int, h_full: int, noise_sigma: float,
                       seed: int, split: str = "train") -> Dataset:
    """Seeded synthetic dataset of ``n`` labeled images at ``h_full`` squared.

    Labels are assigned round-robin so class counts are balanced within
    one.  Each sample is its class prototype plus Gaussian pixel noise of
    standard deviation ``noise_sigma``, clamped to [0, 1].  Identical
    arguments produce a bit-identical dataset.  The returned dataset is
    at factor 1 (low == full); use :func:`make_pairs` to attach a
    downsampled stream.
    """
    if num_classes < 2:
        raise ValueError(f"need at least 2 classes, got {num_classes}")
    if n < num_classes:
        raise ValueError(f"need n >= num_classes, got n={n}, num_classes={num_classes}")
    if h_full < 8:
        raise ValueError(f"h_full must be >= 8, got {h_full}")
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma!r}")
    if split not in _SPLIT_CODES:
        raise ValueError(f"split must be one of {sorted(_SPLIT_CODES)}, got {split!r}")

    rng = np.random.default_rng(seed)
    protos = [class_prototype(k, num_classes, h_full) for k in range(num_classes)]
    pairs = []
    for i in range(n):
        label = i % num_classes
        if noise_sigma > 0:
            img = np.clip(protos[label] + rng.normal(0.0, noise_sigma, (h_full, h_full)), 0.0, 1.0)
        else:
            img = protos[label].copy()
        pairs.append(LabeledPair(full=img, low=img.copy(), label=label))
    return Dataset(pairs=pairs, num_classes=num_classes, h_full=h_full,
                   factor=1, split=split, seed=seed)


def downsample(img, factor: int) -> np.ndarray:
    """Non-overlapping ``factor x factor`` average pooling.

    Both image dimensions must be divisible by ``factor``; there is no
    implicit padding.  Factor 1 returns a copy.
    """
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"image must be 2-D, got ndim={a.ndim}")
    f = int(factor)
    if f != factor or f < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    h, w = a.shape
    if h % f != 0 or w % f != 0:
        raise ValueError(f"image dims ({h}, {w}) not divisible by factor {f}")
    if f == 1:
        return a.copy()
    return a.reshape(h // f, f, w // f, f).mean(axis=(1, 3))


def make_pairs(dataset: Dataset, factor: int) -> Dataset:
    """Re-derive every pair's low-resolution image at the given factor."""
    f = int(factor)
    if f != factor or f < 1:
        raise ValueError(f"factor must be a positive integer, got {factor!r}")
    if dataset.h_full % f != 0:
        raise ValueError(f"h_full {dataset.h_full} not divisible by factor {f}")
    pairs = [
        LabeledPair(full=p.full, low=downsample(p.full, f), label=p.label)
        for p in dataset.pairs
    ]
    return Dataset(pairs=pairs, num_classes=dataset.num_classes, h_full=dataset.h_full,
                   factor=f, split=dataset.split, seed=dataset.seed)


def batches(dataset: Dataset, batch_size: int, epoch: int, shuffle_seed: int) -> list:
    """Seeded per-epoch permutation of sample indices, cut into batches.

    The permutation is keyed on ``(shuffle_seed, epoch)``, so different
    epochs shuffle differently but reruns are identical.  The final short
    batch is retained.
    """
    n = len(dataset)
    if n == 0:
        raise ValueError("cannot batch an empty dataset")
    bs = int(batch_size)
    if bs < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size!r}")
    rng = np.random.default_rng([int(shuffle_seed), int(epoch)])
    perm = rng.permutation(n)
    return [perm[start:start + bs] for start in range(0, n, bs)]


def save_dataset(dataset: Dataset, path) -> None:
    """Write the dataset container; bit-exact round trip via :func:`load_dataset`.

    Only full-resolution images are stored; the low-resolution stream is
    re-derived on load, which guarantees the coupling invariant by
    construction.
    """
    n = len(dataset)
    if dataset.num_classes > 0xFFFF:
        raise ValueError("labels beyond u16 range are not supported")
    if dataset.seed < 0:
        raise ValueError("dataset seed must be non-negative for serialization")
    out = bytearray()
    out += DATASET_MAGIC
    out += struct.pack(
        "<IIIIIIQ",
        DATASET_VERSION, n, dataset.num_classes, dataset.h_full,
        dataset.factor, _SPLIT_CODES[dataset.split], dataset.seed,
    )
    for p in dataset.pairs:
        out += np.ascontiguousarray(p.full, dtype="<f8").tobytes()
    labels = np.array([p.label for p in dataset.pairs], dtype="<u2")
    out += labels.tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_dataset(path) -> Dataset:
    with open(path, "rb") as fh:
        data = fh.read()
    reader = ByteReader(data, context=f"dataset file {path}")
    magic = reader.take(4)
    if magic != DATASET_MAGIC:
        raise FormatError(f"{path} is not a dataset file (magic {magic!r})")
    version, n, num_classes, h_full, factor, split_code, seed = reader.unpack("<IIIIIIQ")
    if version != DATASET_VERSION:
        raise FormatError(f"unsupported dataset version {version}")
    if split_code not in _SPLIT_NAMES:
        raise FormatError(f"unknown split code {split_code}")
    if num_classes < 2 or h_full < 1 or factor < 1 or h_full % factor != 0:
        raise FormatError(
            f"inconsistent dataset header: K={num_classes} h={h_full} factor={factor}"
        )
    images = [
        reader.array("<f8", h_full * h_full).reshape(h_full, h_full) for _ in range(n)
    ]
    labels = reader.array("<u2", n)
    reader.expect_end()
    if np.any(labels >= num_classes):
        raise FormatError(f"label out of range in {path}")
    pairs = [
        LabeledPair(full=img, low=downsample(img, factor), label=int(lab))
        for img, lab in zip(images, labels)
    ]
    return Dataset(pairs=pairs, num_classes=num_classes, h_full=h_full,
                   factor=factor, split=_SPLIT_NAMES[split_code], seed=int(seed))


def write_image_ascii(img, path) -> None:
    """Debug export: one image row per line, space-separated pixel values."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"image must be 2-D, got ndim={a.ndim}")
    with open(path, "w") as fh:
        for row in a:
            fh.write(" ".join(format(v, ".17g") for v in row))
            fh.write("\n")
