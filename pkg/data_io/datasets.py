"""
Dataset ingestion: MNIST (IDX, optionally gzipped), CIFAR-10 (binary
3073-byte records) and a seeded synthetic dataset for smoke runs.
"""
import os
import gzip
import struct
import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from utils.errors import DatasetFormatError

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
CIFAR_RECORD = 3073
CIFAR_SHAPE = (3, 32, 32)
NUM_CLASSES = 10

MNIST_MEAN, MNIST_STD = 0.1307, 0.3081
CIFAR_MEAN = np.array([0.4914, 0.4822, 0.4465], dtype=np.float32)
CIFAR_STD = np.array([0.2470, 0.2435, 0.2616], dtype=np.float32)

MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]


@dataclass
class Dataset:
    name: str
    images: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)

    def limit(self, count: int) -> "Dataset":
        if count <= 0 or count >= len(self):
            return self
        return Dataset(self.name, self.images[:count], self.labels[:count])


def _read_bytes(path: str) -> bytes:
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as fh:
        return fh.read()


def _find(directory: str, name: str) -> str:
    for candidate in (name, name + ".gz"):
        path = os.path.join(directory, candidate)
        if os.path.exists(path):
            return path
    raise FileNotFoundError(f"{name}[.gz] not found in {directory}")


def parse_idx_images(data: bytes, path: str = "") -> np.ndarray:
    """(N, rows, cols) uint8 images from an IDX3 buffer"""
    if len(data) < 16:
        raise DatasetFormatError("header truncated", path, len(data))
    magic, count, rows, cols = struct.unpack(">IIII", data[:16])
    if magic != IDX_IMAGES_MAGIC:
        raise DatasetFormatError(f"bad image magic 0x{magic:08x}", path, 0)
    expected = 16 + count * rows * cols
    if len(data) < expected:
        raise DatasetFormatError(f"expected {count} images of {rows}x{cols}", path, len(data))
    return np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16).reshape(count, rows, cols)


def parse_idx_labels(data: bytes, path: str = "") -> np.ndarray:
    if len(data) < 8:
        raise DatasetFormatError("header truncated", path, len(data))
    magic, count = struct.unpack(">II", data[:8])
    if magic != IDX_LABELS_MAGIC:
        raise DatasetFormatError(f"bad label magic 0x{magic:08x}", path, 0)
    if len(data) < 8 + count:
        raise DatasetFormatError(f"expected {count} labels", path, len(data))
    labels = np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    _check_labels(labels, path, first_offset=8, stride=1)
    return labels


def parse_cifar_records(data: bytes, path: str = "") -> Tuple[np.ndarray, np.ndarray]:
    """(images (N, 3, 32, 32) uint8, labels (N,)) from concatenated 3073-byte records"""
    remainder = len(data) % CIFAR_RECORD
    if remainder:
        raise DatasetFormatError(f"size {len(data)} is not a multiple of {CIFAR_RECORD}", path,
                                 len(data) - remainder)
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    _check_labels(labels, path, first_offset=0, stride=CIFAR_RECORD)
    return records[:, 1:].reshape((-1,) + CIFAR_SHAPE), labels


def _check_labels(labels: np.ndarray, path: str, first_offset: int, stride: int) -> None:
    bad = np.flatnonzero((labels < 0) | (labels >= NUM_CLASSES))
    if bad.size:
        i = int(bad[0])
        raise DatasetFormatError(f"label {labels[i]} outside [0, {NUM_CLASSES - 1}]", path,
                                 first_offset + i * stride)


def normalize_mnist(images: np.ndarray) -> np.ndarray:
    x = images.astype(np.float32)[:, None] / 255.0
    return (x - MNIST_MEAN) / MNIST_STD


def normalize_cifar(images: np.ndarray) -> np.ndarray:
    x = images.astype(np.float32) / 255.0
    return (x - CIFAR_MEAN.reshape(1, 3, 1, 1)) / CIFAR_STD.reshape(1, 3, 1, 1)


def load_mnist(directory: str) -> Tuple[Dataset, Dataset]:
    splits = []
    for split in ("train", "test"):
        img_name, lbl_name = MNIST_FILES[split]
        img_path, lbl_path = _find(directory, img_name), _find(directory, lbl_name)
        images = parse_idx_images(_read_bytes(img_path), img_path)
        labels = parse_idx_labels(_read_bytes(lbl_path), lbl_path)
        if len(images) != len(labels):
            raise DatasetFormatError(f"{len(images)} images but {len(labels)} labels", lbl_path, 4)
        splits.append(Dataset(f"mnist-{split}", normalize_mnist(images).astype(np.float32), labels))
        logger.info(f"Loaded MNIST {split}: {len(labels)} examples")
    return splits[0], splits[1]


def _cifar_dir(directory: str) -> str:
    nested = os.path.join(directory, "cifar-10-batches-bin")
    return nested if os.path.isdir(nested) else directory


def _load_cifar_files(directory: str, names: List[str]) -> Tuple[np.ndarray, np.ndarray]:
    images, labels = [], []
    for name in names:
        path = _find(directory, name)
        x, y = parse_cifar_records(_read_bytes(path), path)
        images.append(x)
        labels.append(y)
    return np.concatenate(images), np.concatenate(labels)


def stratified_subset(labels: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Sorted indices holding round(fraction * count) examples of every class"""
    rng = np.random.default_rng(seed)
    keep = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        n = max(1, int(round(fraction * idx.size)))
        keep.append(rng.permutation(idx)[:n])
    return np.sort(np.concatenate(keep)) if keep else np.zeros(0, dtype=np.int64)


def load_cifar10_subset(directory: str, fraction: float = 0.1, seed: int = 0) -> Tuple[Dataset, Dataset]:
    directory = _cifar_dir(directory)
    x_train, y_train = _load_cifar_files(directory, CIFAR_TRAIN_FILES)
    x_test, y_test = _load_cifar_files(directory, CIFAR_TEST_FILES)
    if fraction < 1.0:
        keep = stratified_subset(y_train, fraction, seed)
        x_train, y_train = x_train[keep], y_train[keep]
    logger.info(f"Loaded CIFAR-10 desk profile: {len(y_train)} train ({fraction:.0%}), {len(y_test)} test")
    return (Dataset("cifar10-subset-train", normalize_cifar(x_train), y_train),
            Dataset("cifar10-test", normalize_cifar(x_test), y_test))


def make_synthetic(n_train: int = 2000, n_test: int = 500, shape=(1, 12, 12), seed: int = 0,
                   noise: float = 0.8) -> Tuple[Dataset, Dataset]:
    """Gaussian class prototypes plus noise; learnable within an epoch or two"""
    rng = np.random.default_rng(seed)
    prototypes = rng.standard_normal((NUM_CLASSES,) + tuple(shape)).astype(np.float32)

    def sample(n: int) -> Dataset:
        labels = np.arange(n, dtype=np.int64) % NUM_CLASSES
        images = prototypes[labels] + noise * rng.standard_normal((n,) + tuple(shape)).astype(np.float32)
        return Dataset("synthetic", images.astype(np.float32), labels)

    return sample(n_train), sample(n_test)


def load_dataset(name: str, path: Optional[str] = None, subset_fraction: float = 0.1,
                 seed: int = 0) -> Tuple[Dataset, Dataset]:
    """
    Load (train, test) in file order; shuffling is left to the batch iterator.

    Args:
        name: "mnist", "cifar10-subset" or "synthetic"
        path: Dataset directory (defaults to $LILNETX_DATA_DIR/<name>)
        subset_fraction: Stratified training fraction for the CIFAR desk profile
        seed: Seed for the subset choice and the synthetic data
    """
    if name == "synthetic":
        return make_synthetic(seed=seed)
    root = path or os.path.join(os.getenv("LILNETX_DATA_DIR", "./data"), name.split("-")[0])
    if name == "mnist":
        return load_mnist(root)
    if name == "cifar10-subset":
        return load_cifar10_subset(root, subset_fraction, seed)
    raise ValueError(f"unknown dataset {name!r}")


def random_crop_flip(images: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    """Random crop after zero padding plus random horizontal flip, per example"""
    n, _, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    dy = rng.integers(0, 2 * pad + 1, n)
    dx = rng.integers(0, 2 * pad + 1, n)
    flip = rng.random(n) < 0.5
    out = np.empty_like(images)
    for i in range(n):
        crop = padded[i, :, dy[i]:dy[i] + h, dx[i]:dx[i] + w]
        out[i] = crop[:, :, ::-1] if flip[i] else crop
    return out


def iterate_batches(data: Dataset, batch_size: int, rng: Optional[np.random.Generator] = None,
                    augment_rng: Optional[np.random.Generator] = None) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yield (images, labels) batches; shuffled when rng is given, augmented when augment_rng is given"""
    order = rng.permutation(len(data)) if rng is not None else np.arange(len(data))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        x = data.images[idx]
        if augment_rng is not None:
            x = random_crop_flip(x, augment_rng)
        yield x, data.labels[idx]
