"""
Dataset ingestion: IDX parsing (MNIST / Fashion-MNIST), preprocessing,
synthetic Gaussian blobs and class filtering.

IDX layout (big endian):

    [offset] [type]          [value]
    0000     32 bit integer  0x00000803 images / 0x00000801 labels
    0004     32 bit integer  number of items
    0008     32 bit integer  rows            (images only)
    0012     32 bit integer  columns         (images only)
    ....     unsigned byte   pixels / labels, row-major
"""
import gzip
import hashlib
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import requests

from errors import (
    ArgumentError,
    ChecksumError,
    ConsistencyError,
    DimensionError,
    FormatError,
    TruncatedDataError,
)

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
SD_FLOOR = 1e-8

CLASS_PRESETS: Dict[str, Tuple[int, ...]] = {
    "mnist-01": (0, 1),
    "mnist-35": (3, 5),
    "mnist-36": (3, 6),
    "mnist-012": (0, 1, 2),
    "mnist-356": (3, 5, 6),
    "fashion-01": (0, 1),
    "fashion-35": (3, 5),
    "fashion-36": (3, 6),
    "fashion-012": (0, 1, 2),
    "fashion-356": (3, 5, 6),
}

IdxSource = Union[str, Path, bytes, bytearray, BinaryIO]


@dataclass(frozen=True)
class Standardization:
    mean: np.ndarray
    sd: np.ndarray


@dataclass(frozen=True)
class LabeledDataset:
    features: np.ndarray
    labels: np.ndarray
    class_index: Dict[int, Tuple[int, ...]] = field(default_factory=dict)
    image_shape: Optional[Tuple[int, int]] = None
    standardization: Optional[Standardization] = None

    def __post_init__(self):
        features = np.array(self.features, dtype=np.float64, copy=True)
        labels = np.array(self.labels, dtype=np.int64, copy=True).reshape(-1)
        if features.ndim != 2:
            raise DimensionError(f"features must be a 2-D matrix, got shape {features.shape}")
        if features.shape[0] != labels.size:
            raise ConsistencyError(f"{features.shape[0]} feature rows but {labels.size} labels")
        features.setflags(write=False)
        labels.setflags(write=False)

        index: Dict[int, list] = {}
        for i, label in enumerate(labels.tolist()):
            index.setdefault(label, []).append(i)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_index", {c: tuple(index[c]) for c in sorted(index)})

    @property
    def num_samples(self) -> int:
        return int(self.labels.size)

    @property
    def feature_dim(self) -> int:
        return int(self.features.shape[1])

    @property
    def classes(self) -> Tuple[int, ...]:
        return tuple(self.class_index)

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return replace(self, features=self.features[indices], labels=self.labels[indices], class_index={})


def _read_source(source: IdxSource) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, (str, Path)):
        path = Path(source)
        if path.suffix == ".gz":
            with gzip.open(path, "rb") as f:
                return f.read()
        return path.read_bytes()
    return source.read()


def _parse_idx_array(buffer: bytes, expected_magic: int, what: str) -> np.ndarray:
    if len(buffer) < 4:
        raise TruncatedDataError(f"{what}: stream too short for the IDX magic ({len(buffer)} bytes)")
    (magic,) = struct.unpack(">I", buffer[:4])
    if magic != expected_magic:
        raise FormatError(f"{what}: expected IDX magic 0x{expected_magic:08X}, found 0x{magic:08X}")

    ndim = magic & 0xFF
    header_end = 4 + 4 * ndim
    if len(buffer) < header_end:
        raise TruncatedDataError(f"{what}: header truncated, expected {ndim} dimension sizes")
    dims = struct.unpack(f">{ndim}I", buffer[4:header_end])
    size = int(np.prod(dims))
    if len(buffer) < header_end + size:
        raise TruncatedDataError(f"{what}: expected {size} data bytes, found {len(buffer) - header_end}")
    return np.frombuffer(buffer, dtype=np.uint8, count=size, offset=header_end).reshape(dims)


def parse_idx(images: IdxSource, labels: IdxSource) -> LabeledDataset:
    image_array = _parse_idx_array(_read_source(images), IDX_IMAGES_MAGIC, "images")
    label_array = _parse_idx_array(_read_source(labels), IDX_LABELS_MAGIC, "labels")
    if image_array.shape[0] != label_array.shape[0]:
        raise ConsistencyError(f"{image_array.shape[0]} images but {label_array.shape[0]} labels")

    count, rows, cols = image_array.shape
    features = image_array.reshape(count, rows * cols).astype(np.float64) / 255.0
    dataset = LabeledDataset(features, label_array.astype(np.int64), image_shape=(rows, cols))
    logger.info(f"Parsed IDX dataset: {count} samples, {rows}x{cols} pixels, {len(dataset.classes)} classes")
    return dataset


def load_idx_pair(images_path: Union[str, Path], labels_path: Union[str, Path]) -> LabeledDataset:
    for path in (images_path, labels_path):
        if not Path(path).exists():
            raise FileNotFoundError(f"IDX file not found: {path}")
    return parse_idx(Path(images_path), Path(labels_path))


def _image_side(ds: LabeledDataset) -> int:
    if ds.image_shape is not None:
        rows, cols = ds.image_shape
        if rows != cols:
            raise ArgumentError(f"downsample needs square images, got {rows}x{cols}")
        return rows
    side = math.isqrt(ds.feature_dim)
    if side * side != ds.feature_dim:
        raise ArgumentError(f"downsample needs square images, feature_dim {ds.feature_dim} is not a square")
    return side


def preprocess(
    ds: LabeledDataset,
    mode: str,
    factor: int = 1,
    stats: Optional[Standardization] = None,
) -> LabeledDataset:
    """
    flatten      drop the image shape, keep features as they are
    downsample   average factor x factor pixel blocks
    standardize  per-feature (x - mean) / max(sd, 1e-8); pass `stats` from the
                 training set to reuse its statistics on test data
    """
    if mode == "flatten":
        return replace(ds, image_shape=None)

    if mode == "downsample":
        if factor < 1:
            raise ArgumentError(f"downsample factor must be >= 1, got {factor}")
        side = _image_side(ds)
        if side % factor:
            raise ArgumentError(f"downsample factor {factor} does not divide image side {side}")
        out = side // factor
        blocks = ds.features.reshape(ds.num_samples, out, factor, out, factor)
        features = blocks.mean(axis=(2, 4)).reshape(ds.num_samples, out * out)
        return replace(ds, features=features, image_shape=(out, out))

    if mode == "standardize":
        if stats is None:
            stats = Standardization(mean=ds.features.mean(axis=0), sd=ds.features.std(axis=0))
        if stats.mean.shape != (ds.feature_dim,):
            raise DimensionError(f"standardization statistics cover {stats.mean.size} features, dataset has {ds.feature_dim}")
        centered = ds.features - stats.mean
        centered[:, stats.sd <= SD_FLOOR] = 0.0
        features = centered / np.maximum(stats.sd, SD_FLOOR)
        return replace(ds, features=features, standardization=stats)

    raise ArgumentError(f"unknown preprocessing mode '{mode}'")


def synth_blobs(
    n_classes: int,
    dim: int,
    per_class: int,
    separation: float,
    noise_sd: float,
    seed: int,
) -> LabeledDataset:
    """
    Isotropic Gaussian blobs around class means placed on signed coordinate axes.

    Means sit at distance r from the origin on distinct signed axes with
    r = separation * scale / sqrt(2), scale = noise_sd (or 1 when noise_sd is 0),
    so every pair of means is at least separation * scale apart. With more
    classes than signed axes the means are spaced separation * scale apart on
    a line along the first axis, centred on the origin, in a seeded order.
    """
    if n_classes < 1 or dim < 1 or per_class < 1:
        raise ArgumentError("n_classes, dim and per_class must all be positive")
    if separation < 0 or noise_sd < 0:
        raise ArgumentError("separation and noise_sd must be non-negative")
    rng = np.random.Generator(np.random.PCG64(seed))
    scale = noise_sd if noise_sd > 0 else 1.0
    means = np.zeros((n_classes, dim))
    if n_classes <= 2 * dim:
        radius = separation * scale / math.sqrt(2.0)
        for c, slot in enumerate(rng.permutation(2 * dim)[:n_classes].tolist()):
            means[c, slot % dim] = radius if slot < dim else -radius
    else:
        positions = (np.arange(n_classes) - (n_classes - 1) / 2.0) * separation * scale
        means[:, 0] = positions[rng.permutation(n_classes)]

    labels = np.repeat(np.arange(n_classes), per_class)
    features = means[labels]
    if noise_sd > 0:
        features = features + rng.normal(0.0, noise_sd, size=features.shape)
    return LabeledDataset(features, labels)


def filter_classes(ds: LabeledDataset, classes: Sequence[int]) -> LabeledDataset:
    classes = [int(c) for c in classes]
    if not classes:
        raise ArgumentError("filter_classes needs at least one class")
    if len(set(classes)) != len(classes):
        raise ArgumentError(f"duplicate classes requested: {classes}")
    missing = [c for c in classes if c not in ds.class_index]
    if missing:
        raise ArgumentError(f"classes not present in dataset: {missing}")

    relabel = {c: i for i, c in enumerate(classes)}
    keep = np.array(sorted(i for c in classes for i in ds.class_index[c]), dtype=np.int64)
    labels = np.array([relabel[c] for c in ds.labels[keep].tolist()], dtype=np.int64)
    return replace(ds, features=ds.features[keep], labels=labels, class_index={})


def split(ds: LabeledDataset, test_fraction: float, seed: int) -> Tuple[LabeledDataset, LabeledDataset]:
    """Stratified split; each class contributes round(n * test_fraction) test samples."""
    if not 0.0 < test_fraction < 1.0:
        raise ArgumentError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    rng = np.random.Generator(np.random.PCG64(seed))
    train_idx, test_idx = [], []
    for c in ds.classes:
        members = np.array(ds.class_index[c], dtype=np.int64)
        shuffled = members[rng.permutation(members.size)]
        n_test = int(round(members.size * test_fraction))
        test_idx.extend(shuffled[:n_test].tolist())
        train_idx.extend(shuffled[n_test:].tolist())
    return ds.subset(sorted(train_idx)), ds.subset(sorted(test_idx))


def fetch_idx(url: str, destination: Union[str, Path], sha256: str, timeout: int = 60) -> Path:
    """Download one IDX file and verify its SHA-256 before keeping it."""
    destination = Path(destination)
    if destination.exists() and _sha256(destination.read_bytes()) == sha256.lower():
        logger.info(f"{destination} already present with matching checksum")
        return destination

    logger.info(f"Downloading {url}")
    response = requests.get(url, timeout=timeout)
    response.raise_for_status()
    digest = _sha256(response.content)
    if digest != sha256.lower():
        raise ChecksumError(f"checksum mismatch for {url}: expected {sha256}, got {digest}")

    destination.parent.mkdir(parents=True, exist_ok=True)
    destination.write_bytes(response.content)
    logger.info(f"Saved {destination} ({len(response.content)} bytes)")
    return destination


def _sha256(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()
