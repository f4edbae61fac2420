#!/usr/bin/env python3
"""Rebuild IDX-format MNIST files from the digit dumps shipped in the npm `mnist` package.

The package stores 10000 MNIST digits as per-class JSON arrays of pixel/255 values
rounded to three decimals; round(v * 255) recovers the original byte exactly.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import json
import random
import struct
import sys
from pathlib import Path

PIXELS = 28 * 28
TRAIN_COUNT = 8000


def main(digits_dir: Path, out_dir: Path) -> None:
    samples = []
    for label in range(10):
        raw = json.loads((digits_dir / f"{label}.json").read_text())["data"]
        assert len(raw) % PIXELS == 0
        for start in range(0, len(raw), PIXELS):
            pixels = bytes(int(round(v * 255)) for v in raw[start:start + PIXELS])
            samples.append((pixels, label))
    random.Random(0).shuffle(samples)
    out_dir.mkdir(parents=True, exist_ok=True)
    splits = {"train": samples[:TRAIN_COUNT], "t10k": samples[TRAIN_COUNT:]}
    for name, rows in splits.items():
        with open(out_dir / f"{name}-images-idx3-ubyte", "wb") as f:
            f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
            for pixels, _ in rows:
                f.write(pixels)
        with open(out_dir / f"{name}-labels-idx1-ubyte", "wb") as f:
            f.write(struct.pack(">II", 0x00000801, len(rows)))
            f.write(bytes(label for _, label in rows))
        print(f"{name}: {len(rows)} samples")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
