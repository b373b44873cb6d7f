#!/usr/bin/env python3
"""Write the scikit-learn 8x8 digits as 28x28 MNIST-style IDX files.

Each image is upscaled 3x (nearest neighbour) and padded by 2 pixels, so the
files drop into any 784-input configuration. This is a small stand-in for
smoke runs when MNIST itself is unavailable; numbers from it are not MNIST
numbers.

    make_digits_idx.py OUT_DIR [--test-count 297] [--seed 0]
"""
import argparse
import pathlib
import struct
import sys

import numpy as np


def write_images(path, images):
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        f.write(images.astype(np.uint8).tobytes())


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(labels.astype(np.uint8).tobytes())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir", type=pathlib.Path)
    ap.add_argument("--test-count", type=int, default=297)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    try:
        from sklearn.datasets import load_digits
    except ImportError:
        print("scikit-learn is required", file=sys.stderr)
        return 77

    digits = load_digits()
    images = np.rint(digits.images * (255.0 / 16.0))
    images = np.kron(images, np.ones((1, 3, 3)))
    images = np.pad(images, ((0, 0), (2, 2), (2, 2)))
    order = np.random.default_rng(args.seed).permutation(len(images))
    images, labels = images[order], digits.target[order]

    test = args.test_count
    args.out_dir.mkdir(parents=True, exist_ok=True)
    write_images(args.out_dir / "train-images-idx3-ubyte", images[:-test])
    write_labels(args.out_dir / "train-labels-idx1-ubyte", labels[:-test])
    write_images(args.out_dir / "t10k-images-idx3-ubyte", images[-test:])
    write_labels(args.out_dir / "t10k-labels-idx1-ubyte", labels[-test:])
    print(f"{len(images) - test} train / {test} test images in {args.out_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
