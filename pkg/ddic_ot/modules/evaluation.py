"""
Module 4: Evaluation

Clustering metrics against ground-truth labels (ACC with optimal one-to-one
cluster matching, NMI, Purity) and mean/std aggregation over repeated runs.

INPUT STRUCTURE:
{
    'true_labels': np.ndarray,      # Shape (n,), any hashable class ids
    'pred_labels': np.ndarray,      # Shape (n,), any hashable cluster ids
    'reports': List[MetricsReport], # Runs of one (method, ratio) cell
}

OUTPUT STRUCTURE:
MetricsReport(
    acc=float, nmi=float, purity=float,     # In [0, 1]; NaN only for failed runs
    dataset=str, method=str, ratio=float, seed=int, run=int,
    epochs=int, wall_time_s=float,
    failed=bool, error=str | None,
)
AggregateRow(
    method=str, ratio=float,
    runs=int,                       # Successful runs aggregated
    failed=int,                     # Failed runs excluded from the statistics
    acc_mean=float, acc_std=float,
    nmi_mean=float, nmi_std=float,
    purity_mean=float, purity_std=float,
)
"""

import math
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from ddic_ot.exceptions import ContractError

METRICS = ("acc", "nmi", "purity")
RUN_COLUMNS = [
    "dataset", "method", "ratio", "seed", "run", "acc", "nmi", "purity", "epochs", "wall_time_s",
    "failed", "error",
]


def _check_labels(true_labels, pred_labels) -> Tuple[np.ndarray, np.ndarray]:
    true_labels = np.asarray(true_labels).ravel()
    pred_labels = np.asarray(pred_labels).ravel()
    if true_labels.size != pred_labels.size:
        raise ContractError(f"label vectors differ in length ({true_labels.size} vs {pred_labels.size})")
    if true_labels.size == 0:
        raise ContractError("label vectors must be nonempty")
    return true_labels, pred_labels


def contingency_matrix(true_labels, pred_labels) -> np.ndarray:
    """Counts of (predicted cluster, true class) pairs, shape (clusters, classes)."""
    true_labels, pred_labels = _check_labels(true_labels, pred_labels)
    _, classes = np.unique(true_labels, return_inverse=True)
    _, clusters = np.unique(pred_labels, return_inverse=True)
    table = np.zeros((clusters.max() + 1, classes.max() + 1), dtype=np.int64)
    np.add.at(table, (clusters, classes), 1)
    return table


def acc(true_labels, pred_labels) -> float:
    """
    Clustering accuracy under the best one-to-one cluster-to-class mapping.

    The Hungarian algorithm runs on the contingency matrix padded to a square,
    so surplus clusters (or classes) stay unmatched.

    Example:
        >>> acc([0, 0, 1, 1, 2, 2], [1, 1, 0, 0, 0, 2])
        0.8333333333333334
    """
    table = contingency_matrix(true_labels, pred_labels)
    size = max(table.shape)
    square = np.zeros((size, size), dtype=np.int64)
    square[:table.shape[0], :table.shape[1]] = table
    rows, cols = linear_sum_assignment(square, maximize=True)
    return float(square[rows, cols].sum() / table.sum())


def _entropy(counts: np.ndarray, n: int) -> float:
    p = counts[counts > 0] / n
    return float(-np.sum(p * np.log(p)))


def nmi(true_labels, pred_labels, average: str = "geometric") -> float:
    """
    Normalized mutual information (natural log).

    Args:
        true_labels: Ground-truth classes
        pred_labels: Predicted clusters
        average: 'geometric' normalizes by sqrt(H(true) H(pred)),
            'arithmetic' by (H(true) + H(pred)) / 2

    Returns:
        NMI in [0, 1]; 1 when both partitions are a single cluster, 0 when
        exactly one of them is
    """
    if average not in ("geometric", "arithmetic"):
        raise ContractError(f"average must be 'geometric' or 'arithmetic', got '{average}'")
    table = contingency_matrix(true_labels, pred_labels)
    n = int(table.sum())
    h_pred = _entropy(table.sum(axis=1), n)
    h_true = _entropy(table.sum(axis=0), n)
    if h_pred == 0 and h_true == 0:
        return 1.0
    if h_pred == 0 or h_true == 0:
        return 0.0

    joint = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    nonzero = joint > 0
    mutual_info = float(np.sum(joint[nonzero] * np.log(joint[nonzero] / outer[nonzero])))
    if average == "geometric":
        denominator = math.sqrt(h_true * h_pred)
    else:
        denominator = 0.5 * (h_true + h_pred)
    return float(min(1.0, max(0.0, mutual_info / denominator)))


def purity(true_labels, pred_labels) -> float:
    """Fraction of samples belonging to the dominant class of their cluster."""
    table = contingency_matrix(true_labels, pred_labels)
    return float(table.max(axis=1).sum() / table.sum())


@dataclass
class MetricsReport:
    """Metrics of one run plus the metadata of the run."""

    acc: float
    nmi: float
    purity: float
    dataset: Optional[str] = None
    method: Optional[str] = None
    ratio: Optional[float] = None
    seed: Optional[int] = None
    run: Optional[int] = None
    epochs: Optional[int] = None
    wall_time_s: float = 0.0
    failed: bool = False
    error: Optional[str] = None

    def __post_init__(self):
        """Validate metric ranges of successful runs"""
        if self.failed:
            return
        for name in METRICS:
            value = getattr(self, name)
            if not (math.isfinite(value) and 0.0 <= value <= 1.0):
                raise ContractError(f"{name} must be in [0, 1], got {value}")

    @classmethod
    def failure(cls, error: str, **metadata) -> "MetricsReport":
        return cls(float("nan"), float("nan"), float("nan"), failed=True, error=error, **metadata)

    def to_row(self) -> Dict[str, object]:
        """Values in RUN_COLUMNS order."""
        values = asdict(self)
        return {column: values[column] for column in RUN_COLUMNS}


def evaluate(true_labels, pred_labels, nmi_average: str = "geometric", **metadata) -> MetricsReport:
    """
    Compute all three metrics for one run.

    Example:
        >>> report = evaluate([0, 1, 1], [1, 0, 0], method="mf-kmeans")
        >>> report.acc, report.purity
        (1.0, 1.0)
    """
    return MetricsReport(
        acc=acc(true_labels, pred_labels),
        nmi=nmi(true_labels, pred_labels, average=nmi_average),
        purity=purity(true_labels, pred_labels),
        **metadata,
    )


@dataclass
class AggregateRow:
    method: Optional[str]
    ratio: Optional[float]
    runs: int
    failed: int
    acc_mean: float
    acc_std: float
    nmi_mean: float
    nmi_std: float
    purity_mean: float
    purity_std: float

    def to_row(self) -> Dict[str, object]:
        return asdict(self)


def _mean_std(values: Sequence[float]) -> Tuple[float, float]:
    if len(values) == 0:
        return float("nan"), float("nan")
    array = np.asarray(values, dtype=np.float64)
    std = float(np.std(array, ddof=1)) if array.size > 1 else 0.0
    return float(np.mean(array)), std


def aggregate(reports: List[MetricsReport]) -> AggregateRow:
    """
    Sample mean and standard deviation (n - 1 denominator) of each metric.

    Failed runs are counted but excluded from the statistics; when every run
    failed the means and deviations are NaN.

    Example:
        >>> row = aggregate([MetricsReport(0.4, 0.4, 0.4), MetricsReport(0.6, 0.6, 0.6)])
        >>> round(row.acc_mean, 6), round(row.acc_std, 4)
        (0.5, 0.1414)
    """
    if not reports:
        raise ContractError("aggregate needs at least one report")
    succeeded = [report for report in reports if not report.failed]
    statistics = {}
    for name in METRICS:
        mean, std = _mean_std([getattr(report, name) for report in succeeded])
        statistics[f"{name}_mean"] = mean
        statistics[f"{name}_std"] = std
    return AggregateRow(
        method=reports[0].method,
        ratio=reports[0].ratio,
        runs=len(succeeded),
        failed=len(reports) - len(succeeded),
        **statistics,
    )
