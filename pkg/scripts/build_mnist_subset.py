"""Build the 10k-digit MNIST subset used by the desk-scale experiments.

Full MNIST is not reachable from the build sandbox; the npm package
``mnist@1.1.0`` ships 10,000 real MNIST digits as JSON (pixels stored as
value/255 rounded to 3 decimals, which round-trips exactly to uint8).
This script converts them to IDX and splits 8,000 train / 2,000 held-out.

    python scripts/build_mnist_subset.py [--tarball mnist-1.1.0.tgz] [--out data/mnist]
"""

import argparse
import io
import json
import subprocess
import tarfile
import tempfile
from pathlib import Path

import numpy as np

from cldl.data import Dataset, save_idx, split_holdout


def fetch_tarball(workdir):
    subprocess.run(["npm", "pack", "mnist@1.1.0", "--silent"], cwd=workdir, check=True,
                   stdout=subprocess.DEVNULL)
    return Path(workdir) / "mnist-1.1.0.tgz"


def read_digits(tarball):
    images, labels = [], []
    with tarfile.open(tarball) as tar:
        for digit in range(10):
            raw = tar.extractfile(f"package/src/digits/{digit}.json").read()
            px = np.asarray(json.load(io.BytesIO(raw))["data"], dtype=np.float64).reshape(-1, 28, 28)
            u8 = np.rint(px * 255.0).astype(np.uint8)
            assert np.allclose(np.round(u8 / 255.0, 3), px), "pixel round-trip failed"
            images.append(u8)
            labels.append(np.full(len(u8), digit, dtype=np.int64))
    return np.concatenate(images), np.concatenate(labels)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--tarball", type=Path)
    ap.add_argument("--out", type=Path, default=Path("data/mnist"))
    ap.add_argument("--holdout", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tarball = args.tarball or fetch_tarball(tmp)
        u8, labels = read_digits(tarball)
    full = Dataset(u8[:, None].astype(np.float64) / 255.0, labels)
    train, held = split_holdout(full, args.holdout, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    save_idx(train, args.out / "train-images-idx3-ubyte.gz", args.out / "train-labels-idx1-ubyte.gz")
    save_idx(held, args.out / "eval-images-idx3-ubyte.gz", args.out / "eval-labels-idx1-ubyte.gz")
    print(f"wrote {len(train)} train / {len(held)} eval examples to {args.out}")


if __name__ == "__main__":
    main()
