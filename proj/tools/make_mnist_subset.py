#!/usr/bin/env python3
"""Write a class-balanced MNIST subset in IDX format.

Source: the 5000-sample MNIST CSV shipped inside the mlxtend wheel
(mlxtend/data/data/mnist_5k.csv.gz, 500 images per class, sorted by class).
The first 100 images of each class go to train, the next 100 to test; each
split is then shuffled with a fixed seed.
"""
import argparse
import gzip
import struct
from pathlib import Path

import numpy as np


def write_idx(prefix: Path, images: np.ndarray, labels: np.ndarray) -> None:
    n = images.shape[0]
    with open(f"{prefix}-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.astype(np.uint8).tobytes())
    with open(f"{prefix}-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("csv_gz")
    ap.add_argument("out_dir")
    ap.add_argument("--per-class", type=int, default=100)
    args = ap.parse_args()

    table = np.loadtxt(gzip.open(args.csv_gz), delimiter=",")
    x, y = table[:, :-1].astype(np.uint8), table[:, -1].astype(int)
    rng = np.random.default_rng(20221201)
    train, test = [], []
    for c in range(10):
        idx = np.flatnonzero(y == c)
        train.extend(idx[: args.per_class])
        test.extend(idx[args.per_class : 2 * args.per_class])
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, ids in (("train", np.array(train)), ("t10k", np.array(test))):
        ids = ids[rng.permutation(len(ids))]
        write_idx(out / name, x[ids], y[ids])


if __name__ == "__main__":
    main()
