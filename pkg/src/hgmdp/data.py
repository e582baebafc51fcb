"""Datasets: MNIST IDX files and a seeded Gaussian-blob generator."""
from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .rng import make_rng, standard_normal

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

DATA_DIR_ENV = "HGMDP_DATA_DIR"

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


class FormatError(ValueError):
    pass


@dataclass
class Dataset:
    name: str
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    split: str = "all"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] != self.labels.shape[0]:
            raise ValueError("inputs must be (n, d) with one label per row")
        if self.inputs.size and (self.inputs.min() < -1 or self.inputs.max() > 1):
            raise ValueError("inputs must lie in [-1, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError("labels out of range")

    def __len__(self):
        return self.labels.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx, split=None) -> "Dataset":
        return Dataset(self.name, self.inputs[idx], self.labels[idx], self.n_classes, split or self.split)

    def one_hot(self) -> np.ndarray:
        return np.eye(self.n_classes)[self.labels]


def _read_idx(path, magic, kind):
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    (got,) = struct.unpack_from(">I", raw, 0)
    if got != magic:
        raise FormatError(f"{path}: bad magic 0x{got:08x} at offset 0 (expected 0x{magic:08x} for {kind})")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{path}: truncated header at offset {len(raw)}")
    dims = struct.unpack_from(">" + "I" * ndim, raw, 4)
    expected = int(np.prod(dims))
    body = len(raw) - header
    if body != expected:
        raise FormatError(
            f"{path}: header promises {expected} bytes of data starting at offset {header}, found {body}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def load_mnist_idx(images_path, labels_path, name="mnist", split="all") -> Dataset:
    """Read an IDX image/label pair; pixels map from [0, 255] to [-1, 1] as p / 127.5 - 1."""
    images = _read_idx(images_path, IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise FormatError(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 127.5 - 1.0
    return Dataset(name, x, labels.astype(np.int64), 10, split)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IMAGES_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def load_mnist(split="train", data_dir=None, limit=None) -> Dataset:
    data_dir = Path(data_dir or os.environ.get(DATA_DIR_ENV, "data"))
    img, lab = MNIST_FILES[split]
    ds = load_mnist_idx(data_dir / img, data_dir / lab, split=split)
    return ds.subset(slice(0, limit)) if limit else ds


def make_synthetic(n: int, d: int, k_classes: int, seed: int = 0, spread: float = 0.1, radius: float = 0.5) -> Dataset:
    """Gaussian blobs around distinct class means, clamped to [-1, 1].

    Means are distinct hypercube vertices scaled by ``radius`` when the cube
    has enough of them, otherwise uniform points in ``[-radius, radius]^d``.
    Labels cycle through the classes, so every class is present.
    """
    rng = make_rng(seed)
    if d <= 30 and k_classes <= 2**d:
        codes = rng.choice(2**d, size=k_classes, replace=False)
        bits = (codes[:, None] >> np.arange(d)[None, :]) & 1
        means = radius * (2.0 * bits - 1.0)
    elif d > 30:
        # random vertices of a high-dimensional cube; collisions are negligible
        means = radius * np.where(rng.uniform(size=(k_classes, d)) < 0.5, -1.0, 1.0)
    else:
        means = rng.uniform(-radius, radius, (k_classes, d))
    labels = np.arange(n) % k_classes
    labels = labels[rng.permutation(n)]
    x = means[labels] + spread * standard_normal(rng, (n, d))
    return Dataset("synthetic", np.clip(x, -1.0, 1.0), labels, k_classes)


def train_test_split(ds: Dataset, test_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    perm = make_rng(seed).permutation(len(ds))
    n_test = int(round(test_fraction * len(ds)))
    return ds.subset(perm[n_test:], "train"), ds.subset(perm[:n_test], "test")
