"""Rebuild data/mnist/*.gz from the `mnist` npm package (version 1.1.0).

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 scripts/mnist_from_npm.py package data/mnist

The package stores 10000 digits as per-class JSON arrays of grey levels in
[0, 1]. They are rounded back to bytes, shuffled with a fixed seed and
written as gzip-compressed IDX files with a zero gzip timestamp, so the
output is byte-for-byte reproducible.
"""

import gzip
import json
import struct
import sys
from pathlib import Path

import numpy as np

SHUFFLE_SEED = 20240101


def main(package: Path, out: Path) -> None:
    images, labels = [], []
    for digit in range(10):
        flat = np.array(json.loads((package / f"src/digits/{digit}.json").read_text())["data"], dtype=np.float64)
        n = len(flat) // 784
        images.append(np.clip(np.rint(flat[: n * 784].reshape(n, 784) * 255), 0, 255).astype(np.uint8))
        labels += [digit] * n
    x = np.concatenate(images)
    y = np.array(labels, dtype=np.uint8)
    order = np.random.RandomState(SHUFFLE_SEED).permutation(len(y))
    x, y = x[order], y[order]
    out.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(out / "mnist-10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(y), 28, 28))
        f.write(x.tobytes())
    with gzip.GzipFile(out / "mnist-10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(y)))
        f.write(y.tobytes())


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
