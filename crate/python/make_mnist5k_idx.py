"""Convert the 5,000-example MNIST subset bundled with mlxtend into gzipped IDX files.

Usage: python python/make_mnist5k_idx.py path/to/mnist_5k.csv.gz data/mnist5k
"""

import gzip
import struct
import sys
from pathlib import Path

import numpy as np


def main(src: str, out_dir: str) -> None:
    table = np.loadtxt(gzip.open(src, "rt"), delimiter=",")
    pixels = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    count = len(labels)
    header = struct.pack(">IIII", 0x00000803, count, 28, 28)
    with gzip.GzipFile(out / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(header + pixels.tobytes())
    with gzip.GzipFile(out / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, count) + labels.tobytes())
    print(f"wrote {count} examples, class counts {np.bincount(labels).tolist()}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
