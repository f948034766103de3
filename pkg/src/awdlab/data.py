"""Datasets: synthetic generators, label noise, splits, augmentation, file IO.

Inputs are float arrays scaled to [0, 1]; labels are integers in [0, C).
Vector datasets have inputs of shape (N, D), image datasets (N, C, H, W).
"""

import csv
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ConfigError, StratificationError
from .rng import make_rng

__all__ = [
    "Dataset",
    "NoiseSpec",
    "flip_labels_symmetric",
    "synth_clusters",
    "synth_images",
    "stratified_split_indices",
    "split_train_val",
    "pad_and_crop",
    "save_dataset",
    "load_dataset",
    "load_csv_dataset",
]


@dataclass
class Dataset:
    name: str
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.validate()

    def validate(self) -> None:
        if self.inputs.ndim not in (2, 4):
            raise ConfigError(
                f"{self.name}: inputs must be (N, D) or (N, C, H, W), "
                f"got rank {self.inputs.ndim}"
            )
        if len(self.inputs) != len(self.labels):
            raise ConfigError(
                f"{self.name}: {len(self.inputs)} inputs vs {len(self.labels)} labels"
            )
        if self.num_classes < 2:
            raise ConfigError(f"{self.name}: need >= 2 classes, got {self.num_classes}")
        if len(self.labels) and (
            self.labels.min() < 0 or self.labels.max() >= self.num_classes
        ):
            raise ConfigError(f"{self.name}: labels outside [0, {self.num_classes})")
        if len(self.inputs) and (
            self.inputs.min() < -1e-9 or self.inputs.max() > 1.0 + 1e-9
        ):
            raise ConfigError(f"{self.name}: inputs outside [0, 1]")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def is_image(self) -> bool:
        return self.inputs.ndim == 4

    def subset(self, indices: np.ndarray, name: Optional[str] = None) -> "Dataset":
        return Dataset(
            name=name or self.name,
            inputs=self.inputs[indices],
            labels=self.labels[indices],
            num_classes=self.num_classes,
        )

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass
class NoiseSpec:
    """Record of a symmetric label-flip operation, sufficient to undo it."""

    rate: float
    seed: int
    flipped_indices: np.ndarray
    original_labels: np.ndarray
    num_classes: int

    def restore(self, noisy_labels: np.ndarray) -> np.ndarray:
        clean = np.asarray(noisy_labels).copy()
        clean[self.flipped_indices] = self.original_labels
        return clean

    def clean_indices(self, n: int) -> np.ndarray:
        mask = np.ones(n, dtype=bool)
        mask[self.flipped_indices] = False
        return np.nonzero(mask)[0]


def flip_labels_symmetric(labels: np.ndarray, num_classes: int, rate: float,
                          seed: int) -> tuple[np.ndarray, NoiseSpec]:
    """Flip each label with probability `rate` to a uniform *different* class."""
    if not (0.0 <= rate <= 1.0):
        raise ConfigError(f"noise rate must lie in [0, 1], got {rate}")
    if num_classes < 2:
        raise ConfigError(f"need >= 2 classes to flip labels, got {num_classes}")
    labels = np.asarray(labels, dtype=np.int64)
    rng = make_rng(seed, "noise")
    flip = rng.random(len(labels)) < rate
    # Offsets in [1, C) guarantee the flipped label differs from the original
    # and is uniform over the other classes.
    offsets = rng.integers(1, num_classes, size=len(labels))
    noisy = labels.copy()
    noisy[flip] = (labels[flip] + offsets[flip]) % num_classes
    idx = np.nonzero(flip)[0]
    spec = NoiseSpec(
        rate=rate, seed=seed, flipped_indices=idx,
        original_labels=labels[idx].copy(), num_classes=num_classes,
    )
    return noisy, spec


def synth_clusters(classes: int, dim: int, per_class: int, separation: float,
                   seed: int) -> Dataset:
    """Gaussian blobs at axis-aligned means, min-max rescaled into [0, 1].

    Class c sits at (separation / sqrt(2)) * e_c, so every pair of means is
    exactly `separation` apart; unit isotropic noise is added.  Requires
    dim >= classes.  separation = 0 collapses all classes onto one blob.
    """
    if classes < 2:
        raise ConfigError(f"need >= 2 classes, got {classes}")
    if dim < classes:
        raise ConfigError(f"need dim >= classes for distinct means, got dim={dim}")
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    if separation < 0:
        raise ConfigError(f"separation must be >= 0, got {separation}")
    rng = make_rng(seed, "clusters")
    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    means = np.zeros((classes, dim))
    means[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
    x = means[labels] + rng.standard_normal((n, dim))
    lo, hi = x.min(), x.max()
    if hi > lo:
        x = (x - lo) / (hi - lo)
    else:
        x = np.full_like(x, 0.5)
    return Dataset(
        name=f"clusters-c{classes}-d{dim}", inputs=x, labels=labels,
        num_classes=classes,
    )


def synth_images(classes: int, height: int, width: int, per_class: int, seed: int,
                 channels: int = 1, amplitude: float = 0.22, noise: float = 0.10,
                 jitter: float = 0.3) -> Dataset:
    """Oriented sinusoidal stripe images, one orientation/frequency per class.

    Class c uses stripe angle pi * c / classes and a frequency cycling over
    {2, 3, 4}; each sample gets a small random phase and pixel noise.  Values
    are clipped to [0, 1].  The classes are linearly separable in pixel space
    up to the jitter.
    """
    if classes < 2:
        raise ConfigError(f"need >= 2 classes, got {classes}")
    if height < 8 or width < 8:
        raise ConfigError(f"images must be at least 8x8, got {height}x{width}")
    if per_class < 1:
        raise ConfigError(f"per_class must be >= 1, got {per_class}")
    rng = make_rng(seed, "images")
    n = classes * per_class
    labels = np.repeat(np.arange(classes), per_class)
    ii, jj = np.meshgrid(np.arange(height), np.arange(width), indexing="ij")
    x = np.empty((n, channels, height, width))
    for c in range(classes):
        angle = np.pi * c / classes
        freq = 2 + (c % 3)
        proj = (ii * np.cos(angle) + jj * np.sin(angle)) / height
        sel = labels == c
        count = int(sel.sum())
        phases = rng.uniform(-jitter, jitter, size=(count, channels, 1, 1))
        base = np.sin(2.0 * np.pi * freq * proj[None, None, :, :] + phases)
        pix = rng.standard_normal((count, channels, height, width))
        x[sel] = 0.5 + amplitude * base + noise * pix
    np.clip(x, 0.0, 1.0, out=x)
    return Dataset(
        name=f"stripes-c{classes}-{height}x{width}", inputs=x, labels=labels,
        num_classes=classes,
    )


def stratified_split_indices(labels: np.ndarray, fraction: float,
                             rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (rest, held_out) index partition, stratified by class."""
    if not (0.0 < fraction < 1.0):
        raise ConfigError(f"fraction must lie in (0, 1), got {fraction}")
    labels = np.asarray(labels)
    rest, held = [], []
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        if len(idx) < 2:
            raise StratificationError(
                f"class {int(c)} has {len(idx)} example(s); need >= 2 to split"
            )
        perm = rng.permutation(idx)
        n_held = int(np.floor(fraction * len(idx) + 0.5))
        n_held = min(max(n_held, 1), len(idx) - 1)
        held.append(perm[:n_held])
        rest.append(perm[n_held:])
    return np.sort(np.concatenate(rest)), np.sort(np.concatenate(held))


def split_train_val(dataset: Dataset, val_fraction: float,
                    seed: int) -> tuple[Dataset, Dataset]:
    """Stratified train/validation split with its own random stream."""
    rng = make_rng(seed, "split")
    train_idx, val_idx = stratified_split_indices(dataset.labels, val_fraction, rng)
    return (
        dataset.subset(train_idx, name=f"{dataset.name}-train"),
        dataset.subset(val_idx, name=f"{dataset.name}-val"),
    )


def pad_and_crop(x: np.ndarray, pad: int, rng: np.random.Generator,
                 flip: bool = True) -> np.ndarray:
    """Zero-pad by `pad`, crop back at a random offset, optional horizontal flip.

    With pad = 0 and flip off this is the identity.  Operates on (N, C, H, W).
    """
    x = np.asarray(x)
    if x.ndim != 4:
        raise ConfigError(f"augmentation expects (N, C, H, W), got rank {x.ndim}")
    if pad < 0:
        raise ConfigError(f"pad must be >= 0, got {pad}")
    n, _, h, w = x.shape
    out = x.copy()
    if pad > 0:
        padded = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
        offs = rng.integers(0, 2 * pad + 1, size=(n, 2))
        for i in range(n):
            oy, ox = offs[i]
            out[i] = padded[i, :, oy:oy + h, ox:ox + w]
    if flip:
        do_flip = rng.random(n) < 0.5
        out[do_flip] = out[do_flip, :, :, ::-1]
    return out


DATA_MAGIC = b"AWDDATA1"


def save_dataset(path, dataset: Dataset) -> None:
    """Binary format: magic, u32 (N, num_classes, rank, dims...), f32 inputs, u32 labels."""
    with open(path, "wb") as fh:
        fh.write(DATA_MAGIC)
        dims = dataset.inputs.shape[1:]
        fh.write(struct.pack("<3I", len(dataset), dataset.num_classes, len(dims)))
        fh.write(struct.pack(f"<{len(dims)}I", *dims))
        fh.write(dataset.inputs.astype("<f4").tobytes())
        fh.write(dataset.labels.astype("<u4").tobytes())


def load_dataset(path, name: Optional[str] = None) -> Dataset:
    with open(path, "rb") as fh:
        magic = fh.read(len(DATA_MAGIC))
        if magic != DATA_MAGIC:
            raise ValueError(f"{path}: not a dataset file (bad magic {magic!r})")
        n, num_classes, rank = struct.unpack("<3I", fh.read(12))
        dims = struct.unpack(f"<{rank}I", fh.read(4 * rank)) if rank else ()
        count = n * int(np.prod(dims)) if dims else n
        inputs = np.frombuffer(fh.read(4 * count), dtype="<f4").reshape((n,) + dims)
        labels = np.frombuffer(fh.read(4 * n), dtype="<u4").astype(np.int64)
    stem = name or os.path.splitext(os.path.basename(str(path)))[0]
    return Dataset(name=stem, inputs=inputs.astype(np.float64), labels=labels,
                   num_classes=num_classes)


def load_csv_dataset(path, name: Optional[str] = None) -> Dataset:
    """CSV with a header row; feature columns then an integer label column."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    feats = np.array([[float(v) for v in row[:-1]] for row in rows])
    raw_labels = [row[-1] for row in rows]
    try:
        labels = np.array([int(v) for v in raw_labels], dtype=np.int64)
    except ValueError as exc:
        raise ValueError(f"{path}: last column must hold integer labels: {exc}") from None
    if labels.min() < 0:
        raise ValueError(f"{path}: labels must be non-negative")
    if feats.min() < 0.0 or feats.max() > 1.0:
        raise ValueError(
            f"{path}: feature values must lie in [0, 1] "
            f"(found range [{feats.min():g}, {feats.max():g}]); rescale before import"
        )
    stem = name or os.path.splitext(os.path.basename(str(path)))[0]
    return Dataset(name=stem, inputs=feats, labels=labels,
                   num_classes=int(labels.max()) + 1)
