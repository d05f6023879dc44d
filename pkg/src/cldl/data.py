"""IDX / CIFAR-10 binary readers, subsetting and mini-batching."""

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 1 + 3072


class IdxFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    images: np.ndarray  # (N, C, H, W) in [0, 1]
    labels: np.ndarray  # (N,) ints in [0, n_classes)
    n_classes: int = 10
    split: str = "train"

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.images.size and (self.images.min() < 0 or self.images.max() > 1):
            raise ValueError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return self.images.shape[1:]

    def take(self, index, split=None):
        index = np.asarray(index)
        return Dataset(self.images[index], self.labels[index], self.n_classes,
                       split or self.split)


def _open(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no such file: {path}")
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def read_idx(path):
    """Parse one IDX file into a uint8 array (big-endian header)."""
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise IdxFormatError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic >> 16 != 0 or (magic >> 8) & 0xFF != 0x08:
        raise IdxFormatError(f"{path}: bad magic 0x{magic:08x} (expected unsigned-byte IDX)")
    ndim = magic & 0xFF
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise IdxFormatError(f"{path}: truncated header")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    n = int(np.prod(dims)) if dims else 1
    if len(raw) - head < n:
        raise IdxFormatError(f"{path}: truncated data ({len(raw) - head} of {n} bytes)")
    return magic, np.frombuffer(raw, dtype=np.uint8, count=n, offset=head).reshape(dims)


def write_idx(path, array):
    """Write a uint8 array as IDX (gzip-compressed if the name ends in .gz)."""
    array = np.ascontiguousarray(array, dtype=np.uint8)
    header = struct.pack(">I", 0x0800 | array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload = header + array.tobytes()
    path = Path(path)
    if path.suffix == ".gz":
        # no file name and a pinned mtime keep the bytes reproducible
        payload = gzip.compress(payload, mtime=0)
    path.write_bytes(payload)


def load_idx(images_path, labels_path, n_classes=10, split="train"):
    magic, images = read_idx(images_path)
    if magic != IMAGES_MAGIC:
        raise IdxFormatError(f"{images_path}: magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}")
    magic, labels = read_idx(labels_path)
    if magic != LABELS_MAGIC:
        raise IdxFormatError(f"{labels_path}: magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}")
    if len(images) != len(labels):
        raise IdxFormatError(f"count mismatch: {len(images)} images, {len(labels)} labels")
    x = images.astype(np.float64)[:, None, :, :] / 255.0
    return Dataset(x, labels.astype(np.int64), n_classes, split)


def save_idx(dataset, images_path, labels_path):
    """Inverse of load_idx for single-channel datasets."""
    if dataset.images.shape[1] != 1:
        raise ValueError("IDX export supports single-channel images only")
    px = np.rint(dataset.images[:, 0] * 255.0).astype(np.uint8)
    write_idx(images_path, px)
    write_idx(labels_path, dataset.labels.astype(np.uint8))


def load_cifar10_batches(paths, split="train"):
    """CIFAR-10 binary batches: 1 label byte then 3072 channel-major pixel bytes."""
    xs, ys = [], []
    for path in paths:
        with _open(path) as fh:
            raw = fh.read()
        if len(raw) % CIFAR_RECORD:
            raise IdxFormatError(f"{path}: size {len(raw)} is not a multiple of {CIFAR_RECORD}")
        rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
        ys.append(rec[:, 0].astype(np.int64))
        xs.append(rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0)
    return Dataset(np.concatenate(xs), np.concatenate(ys), 10, split)


def subset(dataset, n, seed):
    """``n`` examples chosen by a seeded permutation."""
    if n > len(dataset):
        raise ValueError(f"requested {n} examples from a dataset of {len(dataset)}")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    return dataset.take(np.sort(perm[:n]))


def iterate_batches(dataset, batch_size, seed):
    """One pass over ``dataset`` in seeded random order; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = np.random.default_rng(seed).permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield dataset.images[idx], dataset.labels[idx]


def subset_shuffle_batch(dataset, n, seed, batch_size):
    rng = np.random.default_rng(seed)
    sub_seed, order_seed = rng.integers(0, 2**63, size=2)
    return iterate_batches(subset(dataset, n, int(sub_seed)), batch_size, int(order_seed))


def split_holdout(dataset, n_holdout, seed):
    """Disjoint (train, holdout) partition with a seeded permutation."""
    if n_holdout >= len(dataset):
        raise ValueError("holdout would leave no training data")
    perm = np.random.default_rng(seed).permutation(len(dataset))
    hold, rest = np.sort(perm[:n_holdout]), np.sort(perm[n_holdout:])
    return dataset.take(rest, "train"), dataset.take(hold, "eval")
