"""Rebuild data/mnist-subset/ from the `mnist` npm package (10 000 MNIST digits).

Usage: python3 scripts/make_mnist_subset.py <path-to-unpacked-npm-package>

Pixels in the package are k/255 rounded to three decimals; they are mapped back
to bytes with round(x * 255). Samples are shuffled with a fixed seed, the first
8000 form the training split and the remaining 2000 the test split. Output is
gzip-compressed IDX (the same container the original MNIST distribution uses).
"""

import gzip
import json
import os
import struct
import sys

import numpy as np

SEED = 20240601
TRAIN = 8000


def write_idx(path, array):
    header = struct.pack(">BBBB", 0, 0, 0x08, array.ndim)
    header += b"".join(struct.pack(">I", d) for d in array.shape)
    with gzip.GzipFile(path, "wb", mtime=0) as fh:
        fh.write(header + array.astype(np.uint8).tobytes())


def main(pkg):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as fh:
            raw = np.asarray(json.load(fh)["data"], dtype=np.float64)
        raw = np.rint(raw * 255.0).reshape(-1, 28, 28)
        images.append(raw)
        labels.append(np.full(raw.shape[0], digit))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.RandomState(SEED).permutation(len(labels))
    images, labels = images[order], labels[order]

    out = os.path.join(os.path.dirname(__file__), "..", "data", "mnist-subset")
    os.makedirs(out, exist_ok=True)
    write_idx(os.path.join(out, "train-images-idx3-ubyte.gz"), images[:TRAIN])
    write_idx(os.path.join(out, "train-labels-idx1-ubyte.gz"), labels[:TRAIN])
    write_idx(os.path.join(out, "t10k-images-idx3-ubyte.gz"), images[TRAIN:])
    write_idx(os.path.join(out, "t10k-labels-idx1-ubyte.gz"), labels[TRAIN:])


if __name__ == "__main__":
    main(sys.argv[1])
