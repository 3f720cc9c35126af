#!/usr/bin/env python3
"""Builds the bundled MNIST fixture from the `mnist` npm package.

The npm package (https://www.npmjs.com/package/mnist, cazala/mnist) ships
28x28 grayscale digits as per-class JSON arrays of floats in [0, 1],
quantized to 256 levels. This script converts them back to bytes with
round(v * 255) and writes standard IDX files:

    <out>/train-images-idx3-ubyte   first 700 images of each class
    <out>/train-labels-idx1-ubyte
    <out>/t10k-images-idx3-ubyte    next 150 images of each class
    <out>/t10k-labels-idx1-ubyte

The split is deterministic (per-class file order), class-major. Usage:

    python3 tools/make_mnist_fixture.py <npm-package-dir> <out-dir>

where <npm-package-dir> contains src/digits/0.json .. 9.json.
"""

import json
import struct
import sys
from pathlib import Path

SIDE = 28
TRAIN_PER_CLASS = 700
TEST_PER_CLASS = 150


def write_idx_images(path: Path, images: list[bytes]) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), SIDE, SIDE))
        for img in images:
            f.write(img)


def write_idx_labels(path: Path, labels: list[int]) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    pkg = Path(sys.argv[1])
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)

    train_images, train_labels = [], []
    test_images, test_labels = [], []
    for digit in range(10):
        data = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        count = len(data) // (SIDE * SIDE)
        need = TRAIN_PER_CLASS + TEST_PER_CLASS
        if count < need:
            print(f"digit {digit}: only {count} images, need {need}", file=sys.stderr)
            return 1
        as_bytes = bytes(round(v * 255) for v in data[: need * SIDE * SIDE])
        for i in range(TRAIN_PER_CLASS):
            train_images.append(as_bytes[i * SIDE * SIDE : (i + 1) * SIDE * SIDE])
            train_labels.append(digit)
        for i in range(TRAIN_PER_CLASS, need):
            test_images.append(as_bytes[i * SIDE * SIDE : (i + 1) * SIDE * SIDE])
            test_labels.append(digit)

    write_idx_images(out / "train-images-idx3-ubyte", train_images)
    write_idx_labels(out / "train-labels-idx1-ubyte", train_labels)
    write_idx_images(out / "t10k-images-idx3-ubyte", test_images)
    write_idx_labels(out / "t10k-labels-idx1-ubyte", test_labels)
    print(
        f"wrote {len(train_images)} train and {len(test_images)} test images to {out}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
