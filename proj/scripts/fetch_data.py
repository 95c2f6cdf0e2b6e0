#!/usr/bin/env python3
"""Build the desk-scale datasets as IDX (ubyte) files.

mnist5k   5000 MNIST digits shipped inside the mlxtend wheel, split 4000/1000
          (stratified, seed 0) into train/test.
digits28  sklearn's 8x8 handwritten digits, upscaled to 20x20 and centred on a
          28x28 canvas. Used as the sibling dataset for the limited-surrogate
          scenario.

Usage: python3 scripts/fetch_data.py [--out data]
"""

import argparse
import glob
import gzip
import io
import os
import struct
import subprocess
import sys
import tempfile
import zipfile

import numpy as np


def write_idx_images(path, images):
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def load_mnist5k():
    try:
        import mlxtend.data  # noqa: F401

        root = os.path.dirname(sys.modules["mlxtend.data"].__file__)
        with gzip.open(os.path.join(root, "data", "mnist_5k.csv.gz")) as f:
            raw = f.read()
    except ImportError:
        tmp = tempfile.mkdtemp()
        subprocess.check_call(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "mlxtend"]
        )
        wheel = glob.glob(os.path.join(tmp, "mlxtend-*.whl"))[0]
        with zipfile.ZipFile(wheel) as z:
            raw = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz"))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",")
    x = table[:, :-1].reshape(-1, 28, 28)
    y = table[:, -1].astype(int)
    return x, y


def load_digits28():
    from PIL import Image
    from sklearn.datasets import load_digits

    d = load_digits()
    out = np.zeros((len(d.images), 28, 28))
    for i, img in enumerate(d.images):
        small = Image.fromarray((img * (255.0 / 16.0)).astype(np.uint8))
        big = np.asarray(small.resize((20, 20), Image.BILINEAR), dtype=np.float64)
        out[i, 4:24, 4:24] = big
    return out, d.target.astype(int)


def stratified_split(y, test_per_class, seed):
    rng = np.random.RandomState(seed)
    test = []
    for c in np.unique(y):
        idx = np.flatnonzero(y == c)
        rng.shuffle(idx)
        test.extend(idx[:test_per_class])
    test = np.array(test)
    train = np.setdiff1d(np.arange(len(y)), test)
    # the source file is sorted by label
    rng.shuffle(train)
    rng.shuffle(test)
    return train, test


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    args = ap.parse_args()

    x, y = load_mnist5k()
    train, test = stratified_split(y, 100, seed=0)
    out = os.path.join(args.out, "mnist5k")
    os.makedirs(out, exist_ok=True)
    write_idx_images(os.path.join(out, "train-images-idx3-ubyte"), x[train])
    write_idx_labels(os.path.join(out, "train-labels-idx1-ubyte"), y[train])
    write_idx_images(os.path.join(out, "t10k-images-idx3-ubyte"), x[test])
    write_idx_labels(os.path.join(out, "t10k-labels-idx1-ubyte"), y[test])
    print(f"mnist5k: {len(train)} train / {len(test)} test -> {out}")

    x, y = load_digits28()
    order = np.random.RandomState(1).permutation(len(y))
    x, y = x[order], y[order]
    out = os.path.join(args.out, "digits28")
    os.makedirs(out, exist_ok=True)
    write_idx_images(os.path.join(out, "train-images-idx3-ubyte"), x)
    write_idx_labels(os.path.join(out, "train-labels-idx1-ubyte"), y)
    print(f"digits28: {len(y)} samples -> {out}")


if __name__ == "__main__":
    main()
