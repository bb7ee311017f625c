"""Fetch MNIST and FashionMNIST from the npm registry and write IDX files.

MNIST ships as raw IDX files inside the ``mnist-data`` package.
FashionMNIST ships as per-class JSON pixel arrays inside ``fashion-mnist``
(70k images, no train/test marker). Empty rows are dropped; the first 1000
images of each class are used for testing and the remaining 6000 for
training (class 0 has an empty separator row right after its first 1000).

Usage: python scripts/fetch_data.py [--data-dir DIR] [--tarball-dir DIR]
"""

from __future__ import annotations

import argparse
import io
import json
import shutil
import tarfile
import urllib.request
from pathlib import Path

import numpy as np

from pcinit.data import data_root, write_idx_images, write_idx_labels

REGISTRY = "https://registry.npmjs.org"
FASHION_TEST_PER_CLASS = 1000


def tarball(pkg: str, cache: Path) -> Path:
    path = cache / f"{pkg}.tgz"
    if path.exists():
        return path
    with urllib.request.urlopen(f"{REGISTRY}/{pkg}") as r:
        meta = json.load(r)
    url = meta["versions"][meta["dist-tags"]["latest"]]["dist"]["tarball"]
    print(f"downloading {url}")
    with urllib.request.urlopen(url) as r, open(path, "wb") as fh:
        shutil.copyfileobj(r, fh)
    return path


def fetch_mnist(out: Path, cache: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with tarfile.open(tarball("mnist-data", cache)) as tf:
        for name in ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
                     "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"):
            with tf.extractfile(f"package/data/{name}") as src, open(out / name, "wb") as dst:
                shutil.copyfileobj(src, dst)
    print(f"mnist -> {out}")


def fetch_fashion(out: Path, cache: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    xs = {"train": [], "test": []}
    ys = {"train": [], "test": []}
    with tarfile.open(tarball("fashion-mnist", cache)) as tf:
        for c in range(10):
            raw = json.load(io.TextIOWrapper(tf.extractfile(f"package/src/clothes/{c}.json")))["data"]
            imgs = np.asarray([r for r in raw if len(r) == 784], dtype=np.uint8).reshape(-1, 28, 28)
            for split, part in (("test", imgs[:FASHION_TEST_PER_CLASS]), ("train", imgs[FASHION_TEST_PER_CLASS:])):
                xs[split].append(part)
                ys[split].append(np.full(len(part), c, dtype=np.uint8))
    rng = np.random.default_rng(0)
    for split, prefix in (("train", "train"), ("test", "t10k")):
        x, y = np.concatenate(xs[split]), np.concatenate(ys[split])
        order = rng.permutation(len(y))
        write_idx_images(out / f"{prefix}-images-idx3-ubyte", x[order])
        write_idx_labels(out / f"{prefix}-labels-idx1-ubyte", y[order])
        print(f"fashion {split}: {len(y)} images")
    print(f"fashion -> {out}")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--data-dir", default=None)
    ap.add_argument("--tarball-dir", default="/tmp/pcinit-npm")
    args = ap.parse_args(argv)
    root = data_root(args.data_dir)
    cache = Path(args.tarball_dir)
    cache.mkdir(parents=True, exist_ok=True)
    fetch_mnist(root / "mnist", cache)
    fetch_fashion(root / "fashion", cache)


if __name__ == "__main__":
    main()
