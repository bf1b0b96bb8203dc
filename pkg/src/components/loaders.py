"""
Dataset sources: IDX files, CIFAR-10 binary batches, CSV tables and two
synthetic generators. Exact byte layouts are documented in docs/formats.md.
"""
import csv
import logging
import math
import os
import struct
from dataclasses import dataclass

import numpy as np

from src.core.errors import ContractError, FormatError
from src.components.data import make_dataset

logger = logging.getLogger(__name__)

IDX_TYPES = {
    0x08: ">u1",
    0x09: ">i1",
    0x0B: ">i2",
    0x0C: ">i4",
    0x0D: ">f4",
    0x0E: ">f8",
}
CIFAR10_RECORD = 1 + 3 * 32 * 32
CIFAR10_CLASSES = 10
SYNTHETIC_KINDS = ("two-moons", "gaussian-blobs")


def find_base_path():
    """
    Project root: the working directory when it holds ``data/``, its
    parent when we run from ``src/``, else the working directory.
    """
    current_dir = os.getcwd()
    if os.path.isdir(os.path.join(current_dir, "data")):
        return current_dir
    parent = os.path.abspath(os.path.join(current_dir, ".."))
    if os.path.basename(current_dir) == "src" and os.path.isdir(os.path.join(parent, "data")):
        return parent
    return current_dir


def resolve_data_path(path):
    """Absolute path for a dataset file given relative to the cwd or the project root"""
    if os.path.isabs(path) or os.path.exists(path):
        return path
    candidate = os.path.normpath(os.path.join(find_base_path(), path))
    if os.path.exists(candidate):
        return candidate
    raise FileNotFoundError(f"Dataset file not found: {path}")


def _read_bytes(path):
    with open(resolve_data_path(path), "rb") as f:
        return f.read()


@dataclass(frozen=True)
class DataSource:
    kind: str
    path: object = None
    labels_path: object = None
    n: int = 0
    seed: int = 0
    classes: int = 2
    noise: float = 0.1


def parse_idx(data, path=None):
    """Decode an IDX blob into an ndarray with the dims from its header"""
    if len(data) < 4:
        raise FormatError("truncated IDX header", path, len(data))
    magic = struct.unpack(">I", data[:4])[0]
    type_code, ndim = data[2], data[3]
    if data[0:2] != b"\x00\x00" or type_code not in IDX_TYPES:
        raise FormatError(f"bad IDX magic 0x{magic:08x}", path, 0)
    header_end = 4 + 4 * ndim
    if len(data) < header_end:
        raise FormatError("truncated IDX dimension table", path, len(data))
    dims = struct.unpack(f">{ndim}I", data[4:header_end])
    dtype = np.dtype(IDX_TYPES[type_code])
    count = math.prod(dims)
    expected = count * dtype.itemsize
    available = len(data) - header_end
    if available < expected:
        raise FormatError(f"IDX payload truncated: expected {expected} bytes, found {available}",
                          path, len(data))
    if available > expected:
        raise FormatError(f"{available - expected} trailing bytes after IDX payload",
                          path, header_end + expected)
    return np.frombuffer(data, dtype=dtype, count=count, offset=header_end).reshape(dims)


def _scale(values):
    if values.dtype == np.uint8:
        return values.astype(np.float64) / 255.0
    return values.astype(np.float64)


def read_idx_images(path):
    """IDX image file as an [N, C, H, W] float tensor (uint8 pixels scaled to [0, 1])"""
    values = parse_idx(_read_bytes(path), path)
    if values.ndim == 2:
        values = values.reshape(values.shape[0], 1, 1, values.shape[1])
    elif values.ndim == 3:
        values = values.reshape(values.shape[0], 1, values.shape[1], values.shape[2])
    elif values.ndim != 4:
        raise FormatError(f"IDX image file must have 2 to 4 dims, got {values.ndim}", path, 3)
    return _scale(values)


def read_idx_labels(path):
    values = parse_idx(_read_bytes(path), path)
    if values.ndim != 1:
        raise FormatError(f"IDX label file must be 1-dimensional, got {values.ndim} dims", path, 3)
    return values.astype(np.int64)


def load_idx(images_path, labels_path, name=None):
    if labels_path is None:
        raise ContractError("an idx dataset needs a labels file")
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise FormatError(f"{len(labels)} labels for {len(images)} images", labels_path, 4)
    if labels.min() < 0:
        raise FormatError("negative label", labels_path, 8)
    return make_dataset(images, labels, name or os.path.basename(images_path), kind="idx")


def parse_cifar10(data, path=None):
    """Split CIFAR-10 binary records (label byte + 3x32x32 pixels) into images and labels"""
    if not data:
        raise FormatError("empty CIFAR-10 file", path, 0)
    whole = len(data) - len(data) % CIFAR10_RECORD
    if whole != len(data):
        raise FormatError(f"truncated CIFAR-10 record ({len(data) - whole} of {CIFAR10_RECORD} bytes)",
                          path, whole)
    records = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR10_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.flatnonzero(labels >= CIFAR10_CLASSES)
    if bad.size:
        raise FormatError(f"label {labels[bad[0]]} out of range", path, int(bad[0]) * CIFAR10_RECORD)
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64) / 255.0
    return images, labels


def load_cifar10(path, name=None):
    images, labels = parse_cifar10(_read_bytes(path), path)
    return make_dataset(images, labels, name or os.path.basename(path),
                        num_classes=CIFAR10_CLASSES, kind="cifar10")


def parse_csv(text, path=None):
    """
    Rows of numeric features with an integer ``label`` column.

    Each row becomes a 1-channel, 1-row image of its features.
    """
    lines = text.splitlines(keepends=True)
    if not lines:
        raise FormatError("empty CSV file", path, 0)
    header = next(csv.reader([lines[0]]))
    header = [column.strip() for column in header]
    if "label" not in header:
        raise FormatError("CSV header has no 'label' column", path, 0)
    label_column = header.index("label")
    features, labels = [], []
    offset = len(lines[0].encode())
    for line in lines[1:]:
        start = offset
        offset += len(line.encode())
        if not line.strip():
            continue
        row = next(csv.reader([line]))
        if len(row) != len(header):
            raise FormatError(f"expected {len(header)} fields, found {len(row)}", path, start)
        try:
            label = int(row[label_column])
            values = [float(v) for i, v in enumerate(row) if i != label_column]
        except ValueError as e:
            raise FormatError(f"non-numeric field ({e})", path, start) from None
        if label < 0:
            raise FormatError(f"negative label {label}", path, start)
        labels.append(label)
        features.append(values)
    if not labels:
        raise FormatError("CSV file has a header but no rows", path, offset)
    images = np.asarray(features, dtype=np.float64)
    return images.reshape(len(images), 1, 1, images.shape[1]), np.asarray(labels, dtype=np.int64)


def load_csv(path, name=None):
    with open(resolve_data_path(path), "r", newline="") as f:
        text = f.read()
    images, labels = parse_csv(text, path)
    return make_dataset(images, labels, name or os.path.basename(path), kind="csv")


def gaussian_blobs(n, classes, rng, std=0.5, radius=3.0):
    """
    Class k is centred at radius * (cos(2 pi k / K), sin(2 pi k / K)) with
    isotropic gaussian noise of deviation ``std``. Labels cycle 0..K-1
    before shuffling, so classes are balanced to within one sample.
    """
    labels = np.arange(n) % classes
    angles = 2.0 * np.pi * labels / classes
    centres = radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    points = centres + rng.normal(0.0, std, size=(n, 2))
    order = rng.permutation(n)
    return points[order], labels[order]


def two_moons(n, noise, rng):
    """
    Class 0: (cos t, sin t); class 1: (1 - cos t, 0.5 - sin t), with
    t ~ uniform(0, pi) and gaussian noise of deviation ``noise``.
    """
    n_outer = n // 2
    n_inner = n - n_outer
    t_outer = rng.uniform(0.0, np.pi, size=n_outer)
    t_inner = rng.uniform(0.0, np.pi, size=n_inner)
    outer = np.stack([np.cos(t_outer), np.sin(t_outer)], axis=1)
    inner = np.stack([1.0 - np.cos(t_inner), 0.5 - np.sin(t_inner)], axis=1)
    points = np.concatenate([outer, inner]) + rng.normal(0.0, noise, size=(n, 2))
    labels = np.concatenate([np.zeros(n_outer, dtype=np.int64), np.ones(n_inner, dtype=np.int64)])
    order = rng.permutation(n)
    return points[order], labels[order]


def synthetic(kind, n, seed, classes=2, noise=0.1):
    """Points as [n, 1, 1, 2] images plus labels"""
    if n < 1:
        raise ContractError(f"synthetic dataset needs n >= 1, got {n}")
    rng = np.random.default_rng(seed)
    if kind == "gaussian-blobs":
        points, labels = gaussian_blobs(n, classes, rng, std=noise)
        num_classes = classes
    elif kind == "two-moons":
        points, labels = two_moons(n, noise, rng)
        num_classes = 2
    else:
        raise ContractError(f"Unknown synthetic dataset {kind!r}")
    return points.reshape(n, 1, 1, 2), labels, num_classes


def load_dataset(source):
    """Load one split described by a DataSource"""
    if source.kind in SYNTHETIC_KINDS:
        images, labels, num_classes = synthetic(source.kind, source.n, source.seed,
                                                source.classes, source.noise)
        dataset = make_dataset(images, labels, f"{source.kind}-{source.n}-seed{source.seed}",
                               num_classes=num_classes, kind=source.kind)
    elif source.path is None:
        raise ContractError(f"dataset kind {source.kind!r} needs a file path")
    elif source.kind == "idx":
        dataset = load_idx(source.path, source.labels_path)
    elif source.kind == "cifar10":
        dataset = load_cifar10(source.path)
    elif source.kind == "csv":
        dataset = load_csv(source.path)
    else:
        raise ContractError(f"Unknown dataset kind {source.kind!r}")
    logger.info("Loaded dataset %s: %d samples of shape %s, %d classes",
                dataset.name, len(dataset), dataset.sample_shape, dataset.num_classes)
    return dataset


def load_splits(cfg):
    """
    Train and test datasets for a run config. The test split (or None)
    reuses the training split's channel means. Synthetic data is drawn
    once and split by position.
    """
    if cfg.dataset in SYNTHETIC_KINDS:
        total = cfg.n_train + cfg.n_test
        full = load_dataset(DataSource(cfg.dataset, n=total, seed=cfg.data_seed,
                                       classes=cfg.classes, noise=cfg.noise))
        train_idx = np.arange(cfg.n_train)
        train = full.subset(train_idx, name=f"{full.name}-train")
        train = train.with_means(train.images.mean(axis=(0, 2, 3)))
        if cfg.n_test == 0:
            return train, None
        test = full.subset(np.arange(cfg.n_train, total), name=f"{full.name}-test")
        return train, test.with_means(train.means)

    train = load_dataset(DataSource(cfg.dataset, cfg.dataset_path, cfg.labels_path))
    if cfg.test_path is None:
        return train, None
    test = load_dataset(DataSource(cfg.dataset, cfg.test_path, cfg.test_labels_path))
    num_classes = max(train.num_classes, test.num_classes)
    train = make_dataset(train.images, train.labels, train.name, num_classes, train.kind)
    test = make_dataset(test.images, test.labels, test.name, num_classes, test.kind, means=train.means)
    return train, test
