"""
Utility Functions

Helper functions for configuration validation, seed derivation and result
formatting.
"""

import math
from typing import Iterable, List, Sequence

import numpy as np


def validate_train_config(config) -> tuple[bool, List[str]]:
    """
    Validate the hyperparameters of a training run.

    Args:
        config: A TrainConfig (or any object with the same attributes)

    Returns:
        tuple[bool, List[str]]: (is_valid, list of error messages)
    """
    errors = []

    if not (math.isfinite(config.gamma) and config.gamma >= 0):
        errors.append(f"gamma must be finite and non-negative, got {config.gamma}")

    if not (math.isfinite(config.eps) and config.eps > 0):
        errors.append(f"eps must be positive, got {config.eps}")

    if not (math.isfinite(config.lr) and config.lr >= 0):
        errors.append(f"lr must be non-negative, got {config.lr}")

    if config.batch_size < 2:
        errors.append(f"batch_size must be at least 2, got {config.batch_size}")

    if config.max_iter < 0:
        errors.append(f"max_iter cannot be negative, got {config.max_iter}")

    if not 0 <= config.delta <= 1:
        errors.append(f"delta must be between 0 and 1, got {config.delta}")

    if config.pretrain_epochs < 0:
        errors.append(f"pretrain_epochs cannot be negative, got {config.pretrain_epochs}")

    if config.sinkhorn_unroll < 1:
        errors.append(f"sinkhorn_unroll must be at least 1, got {config.sinkhorn_unroll}")

    if config.sinkhorn_tol is not None and not config.sinkhorn_tol > 0:
        errors.append(f"sinkhorn_tol must be positive or None, got {config.sinkhorn_tol}")

    if config.seed < 0:
        errors.append(f"seed cannot be negative, got {config.seed}")

    if config.cluster_count < 1:
        errors.append(f"cluster_count must be at least 1, got {config.cluster_count}")

    if any(dim < 1 for dim in config.hidden_dims):
        errors.append(f"hidden_dims must all be at least 1, got {list(config.hidden_dims)}")

    if config.embedding_dim < 1:
        errors.append(f"embedding_dim must be at least 1, got {config.embedding_dim}")

    if config.knn_k < 1:
        errors.append(f"knn_k must be at least 1, got {config.knn_k}")

    if config.kmeans_restarts < 1:
        errors.append(f"kmeans_restarts must be at least 1, got {config.kmeans_restarts}")

    if config.kmeans_max_iters < 1:
        errors.append(f"kmeans_max_iters must be at least 1, got {config.kmeans_max_iters}")

    return len(errors) == 0, errors


def validate_ratios(ratios: Sequence[float]) -> tuple[bool, List[str]]:
    """
    Validate a list of missing ratios.

    Args:
        ratios (Sequence[float]): Missing ratios of a sweep

    Returns:
        tuple[bool, List[str]]: (is_valid, list of error messages)
    """
    errors = []

    if len(ratios) == 0:
        errors.append("At least one missing ratio is required")

    for ratio in ratios:
        if not 0 <= ratio <= 1:
            errors.append(f"Missing ratio must be between 0 and 1, got {ratio}")

    if len(set(ratios)) != len(ratios):
        errors.append(f"Missing ratios contain duplicates: {list(ratios)}")

    return len(errors) == 0, errors


def derive_seed(base_seed: int, ratio: float, run_index: int) -> int:
    """
    Derive the seed of one (ratio, run) cell of a sweep.

    The derivation depends only on its arguments, never on process state or
    scheduling order.

    Args:
        base_seed (int): Experiment seed (>= 0)
        ratio (float): Missing ratio of the cell
        run_index (int): Run number within the cell (>= 0)

    Returns:
        int: A 32-bit seed

    Example:
        >>> derive_seed(0, 0.3, 1) == derive_seed(0, 0.3, 1)
        True
    """
    if base_seed < 0 or run_index < 0:
        raise ValueError(f"base_seed and run_index must be non-negative, got {base_seed}, {run_index}")
    ratio_key = int(round(ratio * 1_000_000))
    sequence = np.random.SeedSequence([int(base_seed), ratio_key, int(run_index)])
    return int(sequence.generate_state(1, dtype=np.uint32)[0])


def format_percentage(value: float, decimals: int = 2) -> str:
    """
    Format a metric in [0, 1] as a percentage string.

    Args:
        value (float): Value to format (e.g., 0.9216 for 92.16%)
        decimals (int): Number of decimal places

    Returns:
        str: Formatted percentage string
    """
    if value is None or not math.isfinite(value):
        return "n/a"
    return f"{value * 100:.{decimals}f}%"


def format_mean_std(mean: float, std: float, decimals: int = 2) -> str:
    """
    Format an aggregated metric the way result tables print it, e.g. '92.16±0.35'.

    Args:
        mean (float): Mean in [0, 1]
        std (float): Standard deviation in [0, 1] units
        decimals (int): Number of decimal places

    Returns:
        str: Percentage-scaled 'mean±std'
    """
    if not (math.isfinite(mean) and math.isfinite(std)):
        return "n/a"
    return f"{mean * 100:.{decimals}f}±{std * 100:.{decimals}f}"


def parse_float_list(value) -> List[float]:
    """Parse '0.1,0.2' (or an iterable of numbers) into a list of floats."""
    if isinstance(value, str):
        items: Iterable = [item for item in value.split(",") if item.strip()]
    else:
        items = value
    return [float(item) for item in items]
