"""Convert the digit JSON files shipped in the npm ``mnist`` package to IDX.

The package (https://www.npmjs.com/package/mnist) bundles 10,000 MNIST
digits as flattened 28x28 floats in [0, 1], one JSON file per class. Values
are stored as byte/255, so rounding recovers the original bytes exactly.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/npm_digits_to_idx.py package/src/digits data/
"""

import argparse
import gzip
import json
import struct
from pathlib import Path

import numpy as np


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("digits_dir", type=Path)
    parser.add_argument("out_dir", type=Path)
    parser.add_argument("--seed", type=int, default=20190611)
    args = parser.parse_args()

    images, labels = [], []
    for digit in range(10):
        flat = np.asarray(json.loads((args.digits_dir / f"{digit}.json").read_text())["data"])
        pix = np.rint(flat * 255.0).astype(np.uint8).reshape(-1, 28, 28)
        images.append(pix)
        labels.append(np.full(len(pix), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.Generator(np.random.PCG64(args.seed)).permutation(len(labels))
    images, labels = images[order], labels[order]

    args.out_dir.mkdir(parents=True, exist_ok=True)
    n = len(labels)
    with gzip.GzipFile(args.out_dir / "digits10k-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, n, 28, 28))
        f.write(images.tobytes())
    with gzip.GzipFile(args.out_dir / "digits10k-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, n))
        f.write(labels.tobytes())
    print(f"wrote {n} digits, per class {np.bincount(labels).tolist()}")


if __name__ == "__main__":
    main()
