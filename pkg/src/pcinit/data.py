"""Datasets and minibatch streams.

IDX files follow the MNIST container: big-endian magic (0x00000803 for
images, 0x00000801 for labels), big-endian dimension sizes, then uint8 data.
"""

from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801

DATASETS = ("mnist", "fashion", "kmnist", "synthetic")
IDX_NAMES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
DATA_ENV = "PC_ENGINE_DATA"


class IDXFormatError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray          # (N, d_x), float in [0, 1]
    labels: np.ndarray          # (N,) int class ids
    num_classes: int
    split: str = "train"
    name: str = ""

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise ValueError("inputs and labels differ in length")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels outside 0..{self.num_classes - 1}")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes, self.split, self.name)

    def one_hot(self, idx=None) -> np.ndarray:
        lab = self.labels if idx is None else self.labels[idx]
        return one_hot(lab, self.num_classes, self.inputs.dtype)


def one_hot(labels, num_classes: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(labels), num_classes), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def _read(path) -> bytes:
    path = str(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _parse_idx(buf: bytes, magic: int, path) -> np.ndarray:
    if len(buf) < 4:
        raise IDXFormatError(f"{path}: truncated header at byte offset {len(buf)} (expected 4-byte magic)")
    (got,) = struct.unpack(">I", buf[:4])
    if got != magic:
        raise IDXFormatError(f"{path}: bad magic 0x{got:08x} at byte offset 0, expected 0x{magic:08x}")
    ndim = magic & 0xFF
    hdr = 4 + 4 * ndim
    if len(buf) < hdr:
        raise IDXFormatError(f"{path}: truncated dimension header at byte offset {len(buf)}, expected {hdr} bytes")
    dims = struct.unpack(f">{ndim}I", buf[4:hdr])
    size = int(np.prod(dims, dtype=np.int64))
    if len(buf) < hdr + size:
        raise IDXFormatError(
            f"{path}: truncated payload at byte offset {len(buf)}, expected {hdr + size} bytes for dims {dims}"
        )
    return np.frombuffer(buf, dtype=np.uint8, count=size, offset=hdr).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int = 10, split: str = "train", name: str = "") -> Dataset:
    images = _parse_idx(_read(images_path), IMAGES_MAGIC, images_path)
    labels = _parse_idx(_read(labels_path), LABELS_MAGIC, labels_path)
    if len(images) != len(labels):
        raise IDXFormatError(f"{images_path}: {len(images)} images but {len(labels)} labels")
    x = images.reshape(len(images), -1).astype(np.float32) / 255.0
    return Dataset(x, labels.astype(np.int64), num_classes, split, name)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", IMAGES_MAGIC))
        fh.write(struct.pack(">3I", *images.shape))
        fh.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", LABELS_MAGIC))
        fh.write(struct.pack(">I", len(labels)))
        fh.write(labels.tobytes())


def data_root(data_dir=None) -> Path:
    if data_dir:
        return Path(data_dir)
    return Path(os.environ.get(DATA_ENV, "data"))


def _find(folder: Path, stem: str) -> Path:
    for cand in (folder / stem, folder / f"{stem}.gz"):
        if cand.exists():
            return cand
    raise FileNotFoundError(f"missing {stem}[.gz] under {folder}")


def load_dataset(name: str, split: str = "train", data_dir=None, **synthetic) -> Dataset:
    if name not in DATASETS:
        raise ValueError(f"unknown dataset {name!r}; expected one of {DATASETS}")
    if name == "synthetic":
        return synthetic_blobs(split=split, **synthetic)
    folder = data_root(data_dir) / name
    img, lab = IDX_NAMES[split]
    return load_idx(_find(folder, img), _find(folder, lab), 10, split, name)


def synthetic_blobs(
    n_per_class: int = 100, num_classes: int = 10, dim: int = 20, separation: float = 3.0,
    seed: int = 0, split: str = "train",
) -> Dataset:
    """Gaussian class blobs squashed into [0, 1]; train and test share the centers."""
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((num_classes, dim)) * separation
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    labels = np.repeat(np.arange(num_classes), n_per_class)
    pts = centers[labels] + rng.standard_normal((len(labels), dim))
    x = 1.0 / (1.0 + np.exp(-pts / (separation + 1.0)))
    order = rng.permutation(len(labels))
    return Dataset(x[order].astype(np.float32), labels[order], num_classes, split, "synthetic")


def subsample_fraction(ds: Dataset, fraction: float, rng: np.random.Generator) -> Dataset:
    """Stratified subsample keeping ceil(fraction * N_c) samples of each class c."""
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must lie in (0, 1], got {fraction}")
    if fraction == 1:
        return ds
    keep = []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        k = math.ceil(fraction * len(idx))
        if len(idx) and k == 0:
            raise ValueError(f"class {c} is empty after subsampling")
        keep.append(rng.choice(idx, size=k, replace=False))
    keep = np.sort(np.concatenate(keep))
    return ds.subset(keep)


class StreamBatcher:
    """Class-partitioned batches with a fixed slot layout.

    Slots ``[c*k, (c+1)*k)`` always hold class ``c`` (``k = n / C``). Each
    class draws from its own shuffled pool, which is reshuffled when
    exhausted, so minority classes are oversampled. An epoch is ``N // n``
    batches, the same update count as shuffled batching.
    """

    def __init__(self, ds: Dataset, n: int, rng: np.random.Generator, batches_per_epoch: int | None = None):
        C = ds.num_classes
        if n % C:
            raise ValueError(f"stream batching needs n divisible by C, got n={n}, C={C}")
        self.ds, self.n, self.rng, self.k = ds, n, rng, n // C
        self.pools = [np.flatnonzero(ds.labels == c) for c in range(C)]
        for c, p in enumerate(self.pools):
            if len(p) == 0:
                raise ValueError(f"class {c} has no samples")
        self.slot_classes = np.repeat(np.arange(C), self.k)
        self._order = [rng.permutation(p) for p in self.pools]
        self._pos = [0] * C
        self.batches_per_epoch = batches_per_epoch or max(len(ds) // n, 1)
        self.oversampled = any(len(p) < max(map(len, self.pools)) for p in self.pools)

    def _take(self, c: int) -> np.ndarray:
        out = []
        need = self.k
        while need:
            if self._pos[c] == len(self._order[c]):
                self._order[c] = self.rng.permutation(self.pools[c])
                self._pos[c] = 0
            got = self._order[c][self._pos[c]:self._pos[c] + need]
            self._pos[c] += len(got)
            need -= len(got)
            out.append(got)
        return np.concatenate(out)

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        """Sample indices and the (constant) slot -> class map."""
        idx = np.concatenate([self._take(c) for c in range(self.ds.num_classes)])
        return idx, self.slot_classes

    def epoch(self):
        for _ in range(self.batches_per_epoch):
            yield self.next_batch()[0]


class ShuffledBatcher:
    """Uniformly reshuffled every epoch; the short tail batch is kept."""

    def __init__(self, ds: Dataset, n: int, rng: np.random.Generator):
        if n > len(ds):
            raise ValueError(f"batch size {n} exceeds dataset size {len(ds)}")
        self.ds, self.n, self.rng = ds, n, rng

    @property
    def batches_per_epoch(self) -> int:
        return math.ceil(len(self.ds) / self.n)

    def epoch(self):
        order = self.rng.permutation(len(self.ds))
        for i in range(0, len(order), self.n):
            yield order[i:i + self.n]

