"""
Module 5: Data

Dataset ingestion (IDX image/label pairs, labeled CSV tables), unit
normalization, class-stratified subsetting and synthetic Gaussian blobs.

INPUT STRUCTURE:
{
    'images_path': str,             # IDX image file (magic 0x00000803)
    'labels_path': str,             # IDX label file (magic 0x00000801)
    'csv_path': str,                # CSV with a label column; literal NaN = missing
    'label_column': str,            # Name (or 0-based index without header) of labels
    'blobs': {'n': int, 'd': int, 'k': int, 'separation': float,
              'cluster_std': float, 'seed': int},
}

OUTPUT STRUCTURE:
Dataset(
    features=np.ndarray,            # Shape (n, d), float64; NaN allowed for pre-masked CSV
    labels=np.ndarray,              # Shape (n,), int64 in [0, class_count)
    name=str,
    class_count=int,
)
"""

import csv
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
import pandas as pd

from ddic_ot.exceptions import ConfigurationError, ConsistencyError, ContractError, FormatError, ShapeError

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
MISSING_TOKEN = "NaN"

PathLike = Union[str, Path]


@dataclass(frozen=True)
class Dataset:
    """
    Labeled feature matrix.

    Attributes:
        features: n x d float64 matrix
        labels: Dense integer labels in [0, class_count)
        name: Human-readable name used in result tables
        class_count: Number of distinct classes
    """

    features: np.ndarray
    labels: np.ndarray
    name: str
    class_count: int

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if features.ndim != 2:
            raise ShapeError(f"features must be 2-D, got shape {features.shape}")
        if labels.size != features.shape[0]:
            raise ShapeError(f"{labels.size} labels for {features.shape[0]} samples")
        if labels.size and (labels.min() < 0 or labels.max() >= self.class_count):
            raise ContractError(f"labels must lie in [0, {self.class_count})")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


def _dense_labels(raw) -> Tuple[np.ndarray, int]:
    codes, uniques = pd.factorize(pd.Series(raw), sort=True)
    return codes.astype(np.int64), len(uniques)


def _read_idx(path: PathLike, magic: int, dims: int) -> Tuple[Tuple[int, ...], np.ndarray]:
    """Header dimensions and the unsigned-byte payload of an IDX file."""
    data = Path(path).read_bytes()
    header_size = 4 * (1 + dims)
    if len(data) < header_size:
        raise FormatError(f"{path}: truncated header ({len(data)} bytes, need {header_size})")
    found = struct.unpack(">I", data[:4])[0]
    if found != magic:
        raise FormatError(f"{path}: bad magic {found:#010x}, expected {magic:#010x}")
    shape = struct.unpack(f">{dims}I", data[4:header_size])
    expected = header_size + int(np.prod(shape, dtype=np.int64))
    if len(data) != expected:
        kind = "truncated" if len(data) < expected else "oversized"
        raise FormatError(f"{path}: {kind} payload ({len(data)} bytes, header implies {expected})")
    return shape, np.frombuffer(data, dtype=np.uint8, offset=header_size)


def load_idx(images_path: PathLike, labels_path: PathLike, name: Optional[str] = None) -> Dataset:
    """
    Load an IDX image file and its IDX label file.

    Images are flattened row-major to n x (rows * cols); labels are remapped
    to a dense [0, c) range.

    Raises:
        FormatError: Wrong magic number or truncated file
        ConsistencyError: Image and label counts differ

    Example:
        >>> ds = load_idx("train-images-idx3-ubyte", "train-labels-idx1-ubyte")
        >>> ds.features.shape
        (60000, 784)
    """
    (count, rows, cols), pixels = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    (label_count,), raw_labels = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if count != label_count:
        raise ConsistencyError(f"{images_path} holds {count} images but {labels_path} holds {label_count} labels")

    features = pixels.reshape(count, rows * cols).astype(np.float64)
    labels, class_count = _dense_labels(raw_labels)
    logger.info("Loaded %d IDX images of %dx%d with %d classes", count, rows, cols, class_count)
    return Dataset(features, labels, name or Path(images_path).stem, class_count)


def write_idx(
    dataset: Dataset,
    images_path: PathLike,
    labels_path: PathLike,
    image_shape: Optional[Tuple[int, int]] = None
) -> None:
    """
    Write a dataset of byte-valued features as an IDX image/label pair.

    Args:
        dataset: Features must be integers in [0, 255], labels below 256
        images_path: Output image file
        labels_path: Output label file
        image_shape: (rows, cols) with rows * cols == d; defaults to a square
            when d is a perfect square, else (1, d)
    """
    features = dataset.features
    d = dataset.n_features
    if not (np.all(np.isfinite(features)) and np.all(features == np.round(features))
            and np.all((features >= 0) & (features <= 255))):
        raise ContractError("write_idx needs integer features in [0, 255]")
    if dataset.labels.size and dataset.labels.max() > 255:
        raise ContractError("write_idx needs labels below 256")
    if image_shape is None:
        side = int(round(np.sqrt(d)))
        image_shape = (side, side) if side * side == d else (1, d)
    if image_shape[0] * image_shape[1] != d:
        raise ShapeError(f"image shape {image_shape} does not hold {d} features")

    with open(images_path, "wb") as handle:
        handle.write(struct.pack(">4I", IDX_IMAGE_MAGIC, dataset.n_samples, *image_shape))
        handle.write(features.astype(np.uint8).tobytes())
    with open(labels_path, "wb") as handle:
        handle.write(struct.pack(">2I", IDX_LABEL_MAGIC, dataset.n_samples))
        handle.write(dataset.labels.astype(np.uint8).tobytes())


def _check_rectangular(path: PathLike) -> None:
    with open(path, newline="", encoding="utf-8") as handle:
        width = None
        for row_number, row in enumerate(csv.reader(handle), start=1):
            if not row:
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise FormatError(f"{path}: row {row_number} has {len(row)} fields, expected {width}")


def load_csv(
    path: PathLike,
    label_column: Union[str, int] = "label",
    header: bool = True,
    name: Optional[str] = None
) -> Dataset:
    """
    Load a numeric CSV table with a label column.

    The literal `NaN` marks a missing feature. Without a header, columns are
    addressed by 0-based index.

    Raises:
        FormatError: Ragged rows or non-numeric feature cells
        ConfigurationError: Unknown label column
    """
    _check_rectangular(path)
    frame = pd.read_csv(
        path,
        header=0 if header else None,
        na_values=[MISSING_TOKEN],
        keep_default_na=False,
        skip_blank_lines=True,
    )
    column = label_column
    if not header:
        try:
            column = int(label_column)
        except ValueError:
            raise ConfigurationError(f"label column must be an index for headerless CSV, got '{label_column}'")
    if column not in frame.columns:
        raise ConfigurationError(f"{path}: label column '{label_column}' not found in {list(frame.columns)}")

    if frame[column].isna().any():
        raise FormatError(f"{path}: label column '{label_column}' has missing values")
    try:
        features = frame.drop(columns=[column]).apply(pd.to_numeric, errors="raise").to_numpy(dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{path}: non-numeric feature value ({exc})")

    labels, class_count = _dense_labels(frame[column].to_numpy())
    logger.info("Loaded %d rows x %d features from %s", features.shape[0], features.shape[1], path)
    return Dataset(features, labels, name or Path(path).stem, class_count)


def normalize_unit(X) -> np.ndarray:
    """
    Divide every observed entry by the largest absolute observed value.

    NaN sentinels pass through; all-NaN and all-zero inputs are returned unchanged.
    """
    X = np.asarray(X, dtype=np.float64)
    observed = ~np.isnan(X)
    if not observed.any():
        return X.copy()
    scale = np.abs(X[observed]).max()
    if scale == 0:
        return X.copy()
    return X / scale


def _spread_directions(k: int, d: int, rng: np.random.Generator) -> np.ndarray:
    """k unit vectors picked greedily to be far apart from a random pool."""
    pool = rng.normal(size=(max(32 * k, 64), d))
    pool /= np.linalg.norm(pool, axis=1, keepdims=True)
    chosen = [0]
    nearest = np.linalg.norm(pool - pool[0], axis=1)
    for _ in range(1, k):
        index = int(np.argmax(nearest))
        chosen.append(index)
        nearest = np.minimum(nearest, np.linalg.norm(pool - pool[index], axis=1))
    return pool[chosen]


def make_blobs(
    n: int,
    d: int,
    k: int,
    separation: float,
    cluster_std: float = 1.0,
    seed: int = 0
) -> Dataset:
    """
    Isotropic Gaussian clusters with near-equal sizes.

    Means sit at `separation` times mutually distant unit directions.

    Example:
        >>> blobs = make_blobs(600, 50, 3, separation=10.0, seed=0)
        >>> blobs.features.shape, blobs.class_count
        ((600, 50), 3)
    """
    if k < 1 or n < k:
        raise ContractError(f"make_blobs needs n >= k >= 1, got n={n}, k={k}")
    if d < 1 or not separation > 0 or cluster_std < 0:
        raise ContractError("make_blobs needs d >= 1, separation > 0 and cluster_std >= 0")

    rng = np.random.default_rng(seed)
    means = _spread_directions(k, d, rng) * separation
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    labels = np.repeat(np.arange(k), sizes)
    features = means[labels] + rng.normal(scale=cluster_std, size=(n, d))
    order = rng.permutation(n)
    return Dataset(features[order], labels[order], "blobs", k)


def stratified_subset(dataset: Dataset, size: int, seed: int) -> Dataset:
    """
    Seeded class-stratified sample of `size` rows (original row order kept).

    Per-class quotas are proportional to class frequency, with remainders
    assigned to the largest fractional parts.
    """
    if size < 1:
        raise ContractError(f"subset size must be at least 1, got {size}")
    if size >= dataset.n_samples:
        return dataset
    rng = np.random.default_rng(seed)
    counts = np.bincount(dataset.labels, minlength=dataset.class_count)
    exact = counts * size / dataset.n_samples
    quotas = np.floor(exact).astype(np.int64)
    remainder = size - quotas.sum()
    quotas[np.argsort(-(exact - quotas), kind="stable")[:remainder]] += 1

    picked = []
    for label, quota in enumerate(quotas):
        members = np.flatnonzero(dataset.labels == label)
        picked.append(rng.choice(members, size=quota, replace=False))
    rows = np.sort(np.concatenate(picked))
    labels, class_count = _dense_labels(dataset.labels[rows])
    return Dataset(dataset.features[rows], labels, dataset.name, class_count)
