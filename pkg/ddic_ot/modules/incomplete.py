"""
Module 1: Incomplete Data

Missing-data formalism: MCAR mask generation, observed-matrix construction,
statistical fills (zero, mean, kNN) and the merge of observed entries with a
model reconstruction.

INPUT STRUCTURE:
{
    'X': np.ndarray,                # Complete data, shape (n, d), finite
    'mask': np.ndarray,             # {0, 1} matrix, shape (n, d); 1 = observed
    'missing_ratio': float,         # MCAR probability p in [0, 1]
    'seed': int,                    # Mask generator seed
    'labels': np.ndarray,           # Optional ground truth, shape (n,)
}

OUTPUT STRUCTURE:
MaskedDataset(
    observed=np.ndarray,            # Shape (n, d); NaN exactly where mask == 0
    mask=np.ndarray,                # Shape (n, d); float64 zeros and ones
    labels=np.ndarray | None,       # Shape (n,); evaluation only
)
Fills return np.ndarray of shape (n, d) with every observed entry unchanged.
"""

import logging
import warnings
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import numpy as np

from ddic_ot.config import FillStrategy
from ddic_ot.exceptions import ContractError, ShapeError

logger = logging.getLogger(__name__)

# Rows per block of the kNN distance computation
KNN_CHUNK_ROWS = 256
# Upper bound on the size of one block of pairwise differences (float64 entries)
KNN_BLOCK_ENTRIES = 2 ** 24


@dataclass(frozen=True)
class MaskedDataset:
    """
    Observed data matrix with its mask.

    Attributes:
        observed: n x d matrix with NaN where an entry is missing
        mask: n x d matrix of zeros and ones (1 = observed)
        labels: Optional integer ground-truth labels, used only for evaluation
    """

    observed: np.ndarray
    mask: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        observed = np.asarray(self.observed, dtype=np.float64)
        mask = np.asarray(self.mask, dtype=np.float64)
        if observed.ndim != 2 or observed.shape != mask.shape:
            raise ShapeError(f"observed {observed.shape} and mask {mask.shape} must be matching 2-D matrices")
        if not np.all((mask == 0) | (mask == 1)):
            raise ContractError("mask entries must be exactly 0 or 1")
        if not np.array_equal(np.isnan(observed), mask == 0):
            raise ContractError("observed must be NaN exactly where mask == 0")
        if not np.all(np.isfinite(observed[mask == 1])):
            raise ContractError("observed entries must be finite where mask == 1")
        object.__setattr__(self, "observed", observed)
        object.__setattr__(self, "mask", mask)
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int64).ravel()
            if labels.size != observed.shape[0]:
                raise ShapeError(f"{labels.size} labels for {observed.shape[0]} rows")
            object.__setattr__(self, "labels", labels)

    @property
    def n_samples(self) -> int:
        return self.observed.shape[0]

    @property
    def n_features(self) -> int:
        return self.observed.shape[1]

    @property
    def observed_mask(self) -> np.ndarray:
        """Boolean view of the mask."""
        return self.mask == 1

    @property
    def missing_fraction(self) -> float:
        if self.mask.size == 0:
            return 0.0
        return float(1.0 - self.mask.mean())


def _check_ratio(p: float) -> None:
    if not 0 <= p <= 1:
        raise ContractError(f"missing ratio must be between 0 and 1, got {p}")


def generate_mask(n: int, d: int, missing_ratio: float, seed: int) -> np.ndarray:
    """
    Draw an MCAR mask: each entry is independently missing with probability p.

    Args:
        n: Number of rows
        d: Number of columns
        missing_ratio: Probability p that an entry is missing
        seed: Generator seed; identical arguments give identical masks

    Returns:
        n x d float64 matrix of zeros and ones
    """
    _check_ratio(missing_ratio)
    if n < 0 or d < 0:
        raise ContractError(f"mask dimensions must be non-negative, got ({n}, {d})")
    rng = np.random.default_rng(seed)
    return (rng.random((n, d)) >= missing_ratio).astype(np.float64)


def apply_mask(X, mask, labels: Optional[np.ndarray] = None) -> MaskedDataset:
    """
    Hide the entries of X where mask == 0.

    Example:
        >>> ds = apply_mask([[1.0, 2.0], [3.0, 4.0]], [[1, 0], [1, 1]])
        >>> ds.observed
        array([[ 1., nan],
               [ 3.,  4.]])
    """
    X = np.asarray(X, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if X.shape != mask.shape:
        raise ShapeError(f"data shape {X.shape} does not match mask shape {mask.shape}")
    if not np.all(np.isfinite(X)):
        raise ContractError("apply_mask needs finite data")
    return MaskedDataset(np.where(mask == 1, X, np.nan), mask, labels)


def column_means(ds: MaskedDataset) -> np.ndarray:
    """Mean of the observed entries of each column; 0 for fully missing columns."""
    observed = ds.observed_mask
    counts = observed.sum(axis=0)
    sums = np.where(observed, ds.observed, 0.0).sum(axis=0)
    means = np.divide(sums, counts, out=np.zeros(ds.n_features), where=counts > 0)
    empty = np.flatnonzero(counts == 0)
    if empty.size and ds.n_samples > 0:
        warnings.warn(f"{empty.size} column(s) have no observed entries and are filled with 0")
    return means


def mean_fill(ds: MaskedDataset) -> np.ndarray:
    """Replace each missing entry by the mean of its column's observed entries."""
    return np.where(ds.observed_mask, ds.observed, column_means(ds)[None, :])


def zero_fill(ds: MaskedDataset) -> np.ndarray:
    return np.where(ds.observed_mask, ds.observed, 0.0)


def knn_fill(ds: MaskedDataset, k: int) -> np.ndarray:
    """
    Fill each missing entry with the mean of its k nearest donors.

    The distance between two rows is the mean squared difference over the
    features observed in both rows; rows sharing no feature are never
    neighbours. For entry (i, j) the donors are the nearest rows (ties by
    lower index) that observe column j. Entries without any donor fall back
    to the column mean.

    Args:
        ds: Dataset to fill
        k: Number of donors per entry, 1 <= k < n

    Returns:
        n x d filled matrix
    """
    n, d = ds.observed.shape
    if k < 1 or k >= n:
        raise ContractError(f"knn_fill needs 1 <= k < n, got k={k} with n={n}")

    observed = ds.observed_mask
    filled = np.where(observed, ds.observed, 0.0)
    incomplete_rows = np.flatnonzero(~observed.all(axis=1))
    if incomplete_rows.size == 0:
        return filled

    fallback = column_means(ds)
    weights = ds.mask
    values = filled.copy()
    block_rows = max(1, min(KNN_CHUNK_ROWS, KNN_BLOCK_ENTRIES // (n * d)))

    for start in range(0, incomplete_rows.size, block_rows):
        rows = incomplete_rows[start:start + block_rows]
        distances = _shared_distances(rows, values, weights)

        for offset, row in enumerate(rows):
            missing_cols = np.flatnonzero(~observed[row])
            order = np.argsort(distances[offset], kind="stable")
            candidates = order[np.isfinite(distances[offset][order])]
            sums, counts = _donor_sums(candidates, missing_cols, observed, values, k)
            filled[row, missing_cols] = np.where(
                counts > 0, sums / np.maximum(counts, 1), fallback[missing_cols]
            )

    logger.debug("knn_fill: filled %d incomplete rows with k=%d", incomplete_rows.size, k)
    return filled


def _shared_distances(rows: np.ndarray, values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """
    Mean squared difference over co-observed features, from direct differences.

    Pairs without a shared feature and each row's distance to itself are inf.
    """
    diffs = values[rows][:, None, :] - values[None, :, :]
    co_observed = weights[rows][:, None, :] * weights[None, :, :]
    shared = co_observed.sum(axis=2)
    sq_sum = np.einsum("rnd,rnd->rn", diffs * diffs, co_observed)
    distances = np.full(shared.shape, np.inf)
    np.divide(sq_sum, shared, out=distances, where=shared > 0)
    distances[np.arange(rows.size), rows] = np.inf
    return distances


def _donor_sums(
    candidates: np.ndarray,
    columns: np.ndarray,
    observed: np.ndarray,
    values: np.ndarray,
    k: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Sum and count of the first k candidates observing each column."""
    if candidates.size == 0:
        return np.zeros(columns.size), np.zeros(columns.size, dtype=np.int64)
    limit = min(candidates.size, max(4 * k, 32))
    while True:
        block = candidates[:limit]
        seen = observed[np.ix_(block, columns)]
        chosen = seen & (np.cumsum(seen, axis=0) <= k)
        counts = chosen.sum(axis=0)
        if limit == candidates.size or np.all(counts >= k):
            break
        limit = min(candidates.size, limit * 4)
    sums = np.where(chosen, values[np.ix_(block, columns)], 0.0).sum(axis=0)
    return sums, counts


def fill_missing(ds: MaskedDataset, strategy: Union[FillStrategy, str], knn_k: int = 5) -> np.ndarray:
    """
    Fill missing entries with the given strategy.

    Args:
        ds: Dataset to fill
        strategy: 'mean', 'zero' or 'knn'
        knn_k: Donor count for the kNN strategy

    Returns:
        n x d filled matrix
    """
    strategy = FillStrategy(strategy)
    if strategy is FillStrategy.MEAN:
        return mean_fill(ds)
    if strategy is FillStrategy.ZERO:
        return zero_fill(ds)
    return knn_fill(ds, knn_k)


def fully_observed_prob(p: float, d: int) -> float:
    """
    Probability that a row of d MCAR features has no missing entry: (1 - p)^d.

    Example:
        >>> f"{fully_observed_prob(0.1, 300):.4e}"
        '1.8739e-14'
    """
    _check_ratio(p)
    if d < 0:
        raise ContractError(f"dimension must be non-negative, got {d}")
    return float((1.0 - p) ** d)


def impute_from_reconstruction(ds: MaskedDataset, X_hat) -> np.ndarray:
    """Keep observed entries and take missing entries from the reconstruction."""
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X_hat.shape != ds.observed.shape:
        raise ShapeError(f"reconstruction shape {X_hat.shape} does not match data {ds.observed.shape}")
    return np.where(ds.observed_mask, ds.observed, X_hat)
