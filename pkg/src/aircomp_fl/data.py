"""Datasets, device partitions, mini-batch sampling and the IDX file format."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.inputs) != len(self.labels):
            raise DataError("inputs and labels are not aligned")

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return self.size

    def take(self, idx) -> tuple[np.ndarray, np.ndarray]:
        return self.inputs[idx], self.labels[idx]


@dataclass(frozen=True)
class Partition:
    """Disjoint index sets into one dataset, one per device."""

    assignment: tuple[np.ndarray, ...]

    @property
    def K(self) -> int:
        return len(self.assignment)

    @property
    def sizes(self) -> np.ndarray:
        return np.array([len(a) for a in self.assignment])

    @property
    def q(self) -> np.ndarray:
        s = self.sizes
        return s / s.sum()

    def all_indices(self) -> np.ndarray:
        return np.concatenate(self.assignment)


def balanced_sizes(K: int, size: int) -> np.ndarray:
    return np.full(K, size, dtype=int)


def unbalanced_sizes(K: int, low: int, high: int, rng: np.random.Generator) -> np.ndarray:
    """Sizes drawn uniformly from the integers in ``[low, high]``."""
    return rng.integers(low, high + 1, size=K)


def partition_iid(dataset: Dataset, K: int, sizes, rng: np.random.Generator) -> Partition:
    sizes = np.asarray(sizes, dtype=int)
    if sizes.shape != (K,) or np.any(sizes < 0):
        raise DataError("need K non-negative sizes")
    if sizes.sum() > dataset.size:
        raise DataError(f"requested {sizes.sum()} samples but dataset has {dataset.size}")
    perm = rng.permutation(dataset.size)[: sizes.sum()]
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return Partition(tuple(np.sort(perm[bounds[k]:bounds[k + 1]]) for k in range(K)))


def partition_noniid(dataset: Dataset, K: int, sizes, rng: np.random.Generator,
                     num_shards: int = 5, classes_per_shard: int = 2) -> Partition:
    """Split the label set into disjoint groups and deal each group to ``K/num_shards`` devices."""
    sizes = np.asarray(sizes, dtype=int)
    if K % num_shards:
        raise DataError(f"K={K} is not divisible by num_shards={num_shards}")
    classes = np.unique(dataset.labels)
    if classes.size < num_shards * classes_per_shard:
        raise DataError(f"need {num_shards * classes_per_shard} classes, dataset has {classes.size}")
    chosen = rng.permutation(classes)[: num_shards * classes_per_shard].reshape(num_shards, classes_per_shard)
    per = K // num_shards
    out: list[np.ndarray] = [None] * K  # type: ignore[list-item]
    for s in range(num_shards):
        pool = np.flatnonzero(np.isin(dataset.labels, chosen[s]))
        devices = range(s * per, (s + 1) * per)
        need = int(sum(sizes[k] for k in devices))
        if need > pool.size:
            raise DataError(f"shard {s} needs {need} samples but only {pool.size} carry its labels")
        pool = rng.permutation(pool)
        start = 0
        for k in devices:
            out[k] = np.sort(pool[start:start + sizes[k]])
            start += sizes[k]
    return Partition(tuple(out))


def sample_minibatch(partition: Partition, k: int, B: int, rng: np.random.Generator) -> np.ndarray:
    """``B`` indices drawn uniformly with replacement from device ``k``'s set."""
    if B < 1:
        raise ValueError("B must be >= 1")
    local = partition.assignment[k]
    if local.size == 0:
        raise DataError(f"device {k} holds no data")
    return local[rng.integers(0, local.size, size=B)]


# --- IDX -----------------------------------------------------------------

_IDX_DTYPES = {
    0x08: np.dtype(">u1"), 0x09: np.dtype(">i1"), 0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"), 0x0D: np.dtype(">f4"), 0x0E: np.dtype(">f8"),
}


def _open(path):
    path = Path(path)
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def read_idx(path) -> np.ndarray:
    with _open(path) as fh:
        raw = fh.read()
    if len(raw) < 4 or raw[0] != 0 or raw[1] != 0:
        raise DataError(f"{path}: not an IDX file")
    code, ndim = raw[2], raw[3]
    if code not in _IDX_DTYPES:
        raise DataError(f"{path}: unknown IDX type code 0x{code:02x}")
    shape = struct.unpack(">" + "I" * ndim, raw[4:4 + 4 * ndim])
    dtype = _IDX_DTYPES[code]
    body = raw[4 + 4 * ndim:]
    if len(body) != int(np.prod(shape)) * dtype.itemsize:
        raise DataError(f"{path}: payload size does not match header {shape}")
    return np.frombuffer(body, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array)
    codes = {v.newbyteorder("="): k for k, v in _IDX_DTYPES.items()}
    dt = array.dtype.newbyteorder("=")
    if dt not in codes:
        raise DataError(f"dtype {array.dtype} has no IDX code")
    header = bytes([0, 0, codes[dt], array.ndim]) + struct.pack(">" + "I" * array.ndim, *array.shape)
    payload = array.astype(_IDX_DTYPES[codes[dt]]).tobytes()
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as fh:
        fh.write(header + payload)


MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def find_mnist(directory) -> dict[str, Path] | None:
    directory = Path(directory)
    found = {}
    for key, stem in MNIST_FILES.items():
        for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
            if (directory / name).exists():
                found[key] = directory / name
                break
        else:
            return None
    return found


def load_mnist(directory) -> tuple[Dataset, Dataset]:
    """Train and test splits from the four standard IDX files, pixels scaled to [0, 1]."""
    files = find_mnist(directory)
    if files is None:
        raise DataError(f"MNIST IDX files not found in {directory}")
    out = []
    for split in ("train", "test"):
        images = read_idx(files[f"{split}_images"])
        labels = read_idx(files[f"{split}_labels"])
        if images.ndim != 3 or labels.ndim != 1:
            raise DataError("unexpected MNIST array ranks")
        X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
        out.append(Dataset(X, labels.astype(np.int64)))
    return out[0], out[1]


def synthetic_classification(n_samples: int, n_features: int, n_classes: int,
                             rng: np.random.Generator, separation: float = 3.0,
                             noise: float = 1.0, centers: np.ndarray | None = None):
    """Gaussian mixture with one isotropic component per class, equal class counts.

    Returns the dataset and the class centers so that a test split can be drawn
    from the same mixture.
    """
    if centers is None:
        centers = rng.standard_normal((n_classes, n_features))
        centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
    # balanced labels in random order, so two-class shards always find enough samples
    labels = rng.permutation(np.arange(n_samples) % n_classes)
    X = centers[labels] + noise * rng.standard_normal((n_samples, n_features))
    return Dataset(X, labels.astype(np.int64)), centers


def stratified_subset(dataset: Dataset, n: int, rng: np.random.Generator) -> Dataset:
    """``n`` samples with class counts as equal as the data allows, in sorted index order."""
    if n > dataset.size:
        raise DataError(f"requested {n} samples but dataset has {dataset.size}")
    classes = np.unique(dataset.labels)
    pools = [rng.permutation(np.flatnonzero(dataset.labels == c)) for c in classes]
    quota = np.zeros(classes.size, dtype=int)
    left = n
    # water-fill: small classes give their shortfall to the others
    open_ = list(range(classes.size))
    while left > 0 and open_:
        share = max(left // len(open_), 1)
        nxt = []
        for i in open_:
            take = min(share, pools[i].size - quota[i], left)
            quota[i] += take
            left -= take
            if quota[i] < pools[i].size:
                nxt.append(i)
            if left == 0:
                break
        open_ = nxt
    keep = np.sort(np.concatenate([pool[:q] for pool, q in zip(pools, quota)]))
    return Dataset(dataset.inputs[keep], dataset.labels[keep])
