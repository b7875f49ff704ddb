"""Synthetic desk-scale datasets and readers for CIFAR-10 binary / IDX files."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .seeding import derive_seed

CIFAR_RECORD = 3073
# per-channel mean/std of the CIFAR-10 training set
CIFAR_MEAN = (0.4914, 0.4822, 0.4465)
CIFAR_STD = (0.2470, 0.2435, 0.2616)


class FormatError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    classes: int
    split: str = "train"
    provenance: str = ""

    def __post_init__(self):
        if len(self.features) != len(self.labels):
            raise ValueError(f"{len(self.features)} feature rows but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError(f"labels outside [0, {self.classes})")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx, split: str | None = None) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.classes, split or self.split,
                       self.provenance + f"[subset {len(np.atleast_1d(idx))}]")


def spiral_arm(t: np.ndarray, c: int, classes: int) -> np.ndarray:
    """Noise-free point on arm ``c`` at angle ``t``: radius = t / (3*pi)."""
    phase = 2.0 * np.pi * c / classes
    r = t / (3.0 * np.pi)
    return np.stack([r * np.cos(t + phase), r * np.sin(t + phase)], axis=-1)


def gen_spirals(n_per_class: int, classes: int = 2, noise: float = 0.0, seed: int = 0,
                split: str = "train") -> Dataset:
    """Interleaved Archimedean spirals spanning 3*pi of angle."""
    if n_per_class < 1 or classes < 2:
        raise ValueError("need n_per_class >= 1 and classes >= 2")
    rng = np.random.default_rng(derive_seed(seed, f"spirals/{split}", 0))
    xs, ys = [], []
    for c in range(classes):
        t = np.sort(rng.uniform(0.0, 3.0 * np.pi, n_per_class))
        pts = spiral_arm(t, c, classes)
        if noise > 0:
            pts = pts + noise * rng.standard_normal(pts.shape)
        xs.append(pts)
        ys.append(np.full(n_per_class, c))
    return Dataset(np.concatenate(xs), np.concatenate(ys).astype(np.int64), classes, split,
                   f"spirals(n={n_per_class},classes={classes},noise={noise},seed={seed})")


def gen_rings(n_per_class: int, classes: int = 2, noise: float = 0.05, seed: int = 0,
              split: str = "train") -> Dataset:
    rng = np.random.default_rng(derive_seed(seed, f"rings/{split}", 0))
    xs, ys = [], []
    for c in range(classes):
        theta = rng.uniform(0, 2 * np.pi, n_per_class)
        r = (c + 1) / classes + noise * rng.standard_normal(n_per_class)
        xs.append(np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1))
        ys.append(np.full(n_per_class, c))
    return Dataset(np.concatenate(xs), np.concatenate(ys).astype(np.int64), classes, split,
                   f"rings(n={n_per_class},classes={classes},noise={noise},seed={seed})")


def gen_blobs(n_per_class: int, classes: int = 3, noise: float = 0.3, seed: int = 0,
              split: str = "train") -> Dataset:
    rng = np.random.default_rng(derive_seed(seed, f"blobs/{split}", 0))
    centres = np.stack([np.cos(2 * np.pi * np.arange(classes) / classes),
                        np.sin(2 * np.pi * np.arange(classes) / classes)], axis=1)
    xs = [centres[c] + noise * rng.standard_normal((n_per_class, 2)) for c in range(classes)]
    ys = [np.full(n_per_class, c) for c in range(classes)]
    return Dataset(np.concatenate(xs), np.concatenate(ys).astype(np.int64), classes, split,
                   f"blobs(n={n_per_class},classes={classes},noise={noise},seed={seed})")


GENERATORS = {"spirals": gen_spirals, "rings": gen_rings, "blobs": gen_blobs}


def make_task(name: str, n_per_class: int, classes: int = 2, noise: float = 0.0, seed: int = 0,
              test_per_class: int | None = None) -> tuple[Dataset, Dataset]:
    gen = GENERATORS[name]
    train = gen(n_per_class, classes, noise, seed, "train")
    test = gen(test_per_class or n_per_class, classes, noise, seed, "test")
    return train, test


# -- batching ----------------------------------------------------------------

def batches(d: Dataset, batch_size: int, epoch_seed: int | None) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """One epoch in permuted order (identity order when ``epoch_seed`` is None)."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = len(d)
    order = np.arange(n) if epoch_seed is None else np.random.default_rng(epoch_seed).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        yield d.features[idx], d.labels[idx]


# -- on-disk formats ---------------------------------------------------------

def normalize(pixels: np.ndarray, mean=CIFAR_MEAN, std=CIFAR_STD) -> np.ndarray:
    """(n, 3, h, w) in [0, 1] -> per-channel standardised."""
    m = np.asarray(mean).reshape(1, -1, 1, 1)
    s = np.asarray(std).reshape(1, -1, 1, 1)
    return (pixels - m) / s


def denormalize(features: np.ndarray, mean=CIFAR_MEAN, std=CIFAR_STD) -> np.ndarray:
    m = np.asarray(mean).reshape(1, -1, 1, 1)
    s = np.asarray(std).reshape(1, -1, 1, 1)
    return features * s + m


def read_cifar10_bin(path: str | Path, mean=CIFAR_MEAN, std=CIFAR_STD, split: str = "train") -> Dataset:
    """Records of 1 label byte + 1024 R + 1024 G + 1024 B bytes."""
    raw = Path(path).read_bytes()
    if len(raw) % CIFAR_RECORD:
        raise FormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if len(bad):
        raise FormatError(f"{path}: record {bad[0]} has label byte {labels[bad[0]]} > 9")
    pixels = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    digest = hashlib.sha256(raw).hexdigest()[:16]
    return Dataset(normalize(pixels, mean, std), labels, 10, split, f"cifar10:{Path(path).name}:{digest}")


def read_cifar10_dir(root: str | Path) -> tuple[Dataset, Dataset]:
    root = Path(root)
    parts = [read_cifar10_bin(p) for p in sorted(root.glob("data_batch_*.bin"))]
    if not parts:
        raise FileNotFoundError(f"no data_batch_*.bin under {root}")
    train = Dataset(np.concatenate([p.features for p in parts]), np.concatenate([p.labels for p in parts]),
                    10, "train", f"cifar10:{root}")
    test = read_cifar10_bin(root / "test_batch.bin", split="test")
    return train, test


def read_idx(path: str | Path) -> np.ndarray:
    """IDX arrays (MNIST style): magic 0x0000TTDD, big-endian u32 dims."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: too short for an IDX header")
    zero, dtype_code, ndim = struct.unpack(">HBB", raw[:4])
    types = {0x08: ">u1", 0x09: ">i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
    if zero != 0 or dtype_code not in types:
        raise FormatError(f"{path}: bad IDX magic {raw[:4].hex()}")
    dims = struct.unpack(f">{ndim}I", raw[4:4 + 4 * ndim])
    dt = np.dtype(types[dtype_code])
    count = int(np.prod(dims)) if dims else 1
    expected = 4 + 4 * ndim + count * dt.itemsize
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes for dims {dims}, got {len(raw)}")
    return np.frombuffer(raw, dtype=dt, offset=4 + 4 * ndim).reshape(dims).astype(dt.newbyteorder("="))


def read_idx_dataset(images: str | Path, labels: str | Path, classes: int = 10, split: str = "train") -> Dataset:
    x = read_idx(images).astype(np.float64) / 255.0
    y = read_idx(labels).astype(np.int64)
    if x.ndim == 3:
        x = x[:, None, :, :]
    return Dataset(x, y, classes, split, f"idx:{Path(images).name}")
