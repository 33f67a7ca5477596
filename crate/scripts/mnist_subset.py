"""Convert the 10,000 MNIST digits bundled with the npm `mnist` package
(https://www.npmjs.com/package/mnist, MIT licensed) into gzipped IDX files.

Usage: python3 scripts/mnist_subset.py <path/to/package/src/digits> data/mnist

Pixels are stored in the package as value/255 rounded to three decimals, so
they are mapped back with round(v * 255). Samples are shuffled with a fixed
seed and split 8000 train / 2000 test.
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(payload)


def main(src, dst):
    src, dst = Path(src), Path(dst)
    samples = []
    for label in range(10):
        data = json.loads((src / f"{label}.json").read_text())["data"]
        for i in range(len(data) // 784):
            px = bytes(min(255, max(0, round(v * 255))) for v in data[i * 784:(i + 1) * 784])
            samples.append((px, label))
    random.Random(20170101).shuffle(samples)
    splits = {"train": samples[:8000], "t10k": samples[8000:]}
    for name, part in splits.items():
        write_idx(dst / f"{name}-images-idx3-ubyte.gz", 0x803, [len(part), 28, 28],
                  b"".join(p for p, _ in part))
        write_idx(dst / f"{name}-labels-idx1-ubyte.gz", 0x801, [len(part)],
                  bytes(l for _, l in part))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
