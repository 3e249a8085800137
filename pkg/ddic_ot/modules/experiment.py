"""
Module 6: Experiment Runner

Runs the (method x missing ratio x run) grid: every cell derives its own
seed, draws a fresh MCAR mask, executes one pipeline (DDIC-OT or a
fill-then-k-means baseline) and scores it against the ground truth.

INPUT STRUCTURE:
ExperimentConfig(
    dataset=str,                    # 'blobs', a preset name, or a free label
    methods=Tuple[Method, ...],     # ddic-ot, mf-kmeans, zf-kmeans, knn-kmeans
    missing_ratios=Tuple[float],    # Default 0.1 ... 0.7
    runs=int,                       # Runs per (method, ratio)
    seed=int,                       # Base seed
    out=str,                        # Per-run CSV path
    ...                             # Data source, workers, train_overrides
)

OUTPUT STRUCTURE:
SweepResult(
    runs=pd.DataFrame,              # One row per run; columns RUN_COLUMNS:
                                    # dataset, method, ratio, seed, run, acc,
                                    # nmi, purity, epochs, wall_time_s, failed,
                                    # error (message of a failed run)
    summary=pd.DataFrame,           # One row per (method, ratio): mean/std per
                                    # metric, runs, failed
    curves=pd.DataFrame,            # Metric means vs ratio, one column per
                                    # (method, metric)
    overall=pd.DataFrame,           # Mean over ratios per method
    failed=int,                     # Number of failed cells
    paths=Dict[str, Path],          # Written files: runs, summary, curves,
                                    # overall[, reconstructions]
)
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd

from ddic_ot.config import ExperimentConfig, FillStrategy, Method
from ddic_ot.exceptions import ContractError, DDICError
from ddic_ot.modules.data import Dataset, load_csv, load_idx, make_blobs, normalize_unit, stratified_subset
from ddic_ot.modules.evaluation import RUN_COLUMNS, MetricsReport, aggregate, evaluate
from ddic_ot.modules.incomplete import apply_mask, fill_missing, generate_mask
from ddic_ot.modules.trainer import FitResult, fit, kmeans
from ddic_ot.utils import derive_seed

logger = logging.getLogger(__name__)

BASELINE_FILLS = {
    Method.MF_KMEANS: FillStrategy.MEAN,
    Method.ZF_KMEANS: FillStrategy.ZERO,
    Method.KNN_KMEANS: FillStrategy.KNN,
}

SUMMARY_COLUMNS = [
    "dataset", "method", "ratio", "runs", "failed",
    "acc_mean", "acc_std", "nmi_mean", "nmi_std", "purity_mean", "purity_std",
]
MEAN_COLUMNS = ["acc_mean", "nmi_mean", "purity_mean"]


def load_dataset(config: ExperimentConfig) -> Dataset:
    """
    Load (or generate) the dataset described by an experiment configuration.

    Precedence: CSV, then IDX pair, then synthetic blobs. Normalization and
    subsetting are applied afterwards when configured.
    """
    if config.csv is not None:
        dataset = load_csv(config.csv, config.label_column, config.csv_header, name=config.dataset)
    elif config.images is not None:
        dataset = load_idx(config.images, config.labels, name=config.dataset)
    else:
        dataset = make_blobs(
            config.blob_samples,
            config.blob_dim,
            config.blob_clusters,
            config.blob_separation,
            config.blob_std,
            seed=config.seed,
        )
    if config.subset is not None:
        dataset = stratified_subset(dataset, config.subset, config.seed)
    if config.normalize:
        dataset = Dataset(normalize_unit(dataset.features), dataset.labels, dataset.name, dataset.class_count)
    return dataset


def _execute_cell(
    config: ExperimentConfig,
    dataset: Dataset,
    method: Method,
    ratio: float,
    run_index: int,
    progress: Optional[TextIO] = None
) -> Tuple[MetricsReport, Optional[FitResult]]:
    seed = derive_seed(config.seed, ratio, run_index)
    metadata = dict(dataset=dataset.name, method=method.value, ratio=ratio, seed=seed, run=run_index)
    start = time.perf_counter()
    try:
        features = dataset.features
        present = np.isfinite(features)
        mask = generate_mask(dataset.n_samples, dataset.n_features, ratio, seed) * present
        ds = apply_mask(np.where(present, features, 0.0), mask, dataset.labels)
        train = config.train_config(cluster_count=dataset.class_count).replace(seed=seed)

        fit_result = None
        if method is Method.DDIC_OT:
            fit_result = fit(ds, train, progress)
            labels, output, epochs = fit_result.labels, fit_result.imputed, fit_result.epochs_run
        else:
            output = fill_missing(ds, BASELINE_FILLS[method], train.knn_k)
            labels, _ = kmeans(output, train.cluster_count, seed, train.kmeans_max_iters, train.kmeans_restarts)
            epochs = 0

        observed = ds.observed_mask
        if not np.array_equal(output[observed], ds.observed[observed]):
            raise ContractError(f"{method.value} altered observed entries")

        report = evaluate(dataset.labels, labels, epochs=epochs,
                          wall_time_s=time.perf_counter() - start, **metadata)
        return report, fit_result
    except DDICError as exc:
        logger.error("Cell %s ratio=%.2f run=%d failed: %s", method.value, ratio, run_index, exc)
        return MetricsReport.failure(str(exc), wall_time_s=time.perf_counter() - start, **metadata), None


def run_cell(
    config: ExperimentConfig,
    dataset: Dataset,
    method: Union[Method, str],
    ratio: float,
    run_index: int,
    progress: Optional[TextIO] = None
) -> MetricsReport:
    """
    Run one (method, ratio, run) cell.

    Failures inside the pipeline are recorded in the returned report
    (failed=True) instead of being raised.

    Example:
        >>> dataset = load_dataset(config)
        >>> report = run_cell(config, dataset, "mf-kmeans", 0.3, 0)
        >>> report.acc
    """
    report, _ = _execute_cell(config, dataset, Method(method), ratio, run_index, progress)
    return report


def _cell_job(args) -> MetricsReport:
    config, dataset, method, ratio, run_index = args
    return run_cell(config, dataset, method, ratio, run_index)


def dump_reconstructions(fit_result: FitResult, rows: Union[int, Sequence[int]], path) -> pd.DataFrame:
    """
    Write original (with NaN gaps), filled and imputed rows side by side.

    Args:
        fit_result: Output of a DDIC-OT fit
        rows: Number of leading rows, or explicit row indices
        path: Destination CSV

    Returns:
        The written table; columns row, original_j, filled_j, imputed_j
    """
    n, d = fit_result.imputed.shape
    indices = np.arange(min(rows, n)) if isinstance(rows, (int, np.integer)) else np.asarray(rows, dtype=np.int64)
    if indices.size and (indices.min() < 0 or indices.max() >= n):
        raise ContractError(f"row indices must lie in [0, {n})")

    columns = ["row"]
    blocks = [indices[:, None].astype(np.float64)]
    for prefix, matrix in (("original", fit_result.observed.observed),
                           ("filled", fit_result.filled),
                           ("imputed", fit_result.imputed)):
        columns += [f"{prefix}_{j}" for j in range(d)]
        blocks.append(matrix[indices])
    table = pd.DataFrame(np.hstack(blocks), columns=columns)
    table["row"] = indices
    table.to_csv(path, index=False, na_rep="NaN")
    logger.info("Wrote %d reconstructed rows to %s", indices.size, path)
    return table


@dataclass
class SweepResult:
    runs: pd.DataFrame
    summary: pd.DataFrame
    curves: pd.DataFrame
    overall: pd.DataFrame
    failed: int
    paths: Dict[str, Path]


def summarize(reports: List[MetricsReport], dataset_name: str, methods: Sequence[Method],
              ratios: Sequence[float]) -> pd.DataFrame:
    """One aggregate row per (method, ratio) in sweep order."""
    rows = []
    for method in methods:
        for ratio in ratios:
            cell = [r for r in reports if r.method == method.value and r.ratio == ratio]
            if cell:
                rows.append({"dataset": dataset_name, **aggregate(cell).to_row()})
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def curves_table(summary: pd.DataFrame) -> pd.DataFrame:
    """Metric means against missing ratio, one column per (method, metric)."""
    if summary.empty:
        return pd.DataFrame(columns=["ratio"])
    pivot = summary.pivot(index="ratio", columns="method", values=MEAN_COLUMNS)
    pivot.columns = [f"{method}_{metric.replace('_mean', '')}" for metric, method in pivot.columns]
    return pivot.reset_index()


def overall_table(summary: pd.DataFrame) -> pd.DataFrame:
    """Mean over missing ratios of each metric, per method."""
    if summary.empty:
        return pd.DataFrame(columns=["method"] + MEAN_COLUMNS)
    return summary.groupby("method", sort=False)[MEAN_COLUMNS].mean().reset_index()


def _companion_path(out: Path, suffix: str) -> Path:
    return out.with_name(f"{out.stem}_{suffix}.csv")


def sweep(config: ExperimentConfig, progress: Optional[TextIO] = None) -> SweepResult:
    """
    Run the full grid and write the result tables.

    Files written next to `config.out` (say results.csv):
    results.csv (per run), results_summary.csv, results_curves.csv,
    results_overall.csv and, when dump_rows > 0, results_reconstructions.csv.

    Args:
        config: Experiment description
        progress: JSON-lines progress stream (only used with a single worker)

    Returns:
        SweepResult
    """
    dataset = load_dataset(config)
    logger.info("Dataset %s: %d samples x %d features, %d classes",
                dataset.name, dataset.n_samples, dataset.n_features, dataset.class_count)

    jobs = [(method, ratio, run)
            for method in config.methods
            for ratio in config.missing_ratios
            for run in range(config.runs)]

    out = Path(config.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    paths: Dict[str, Path] = {"runs": out}

    reports: Dict[Tuple[Method, float, int], MetricsReport] = {}
    if config.dump_rows > 0 and Method.DDIC_OT in config.methods:
        dump_job = (Method.DDIC_OT, config.missing_ratios[0], 0)
        report, fit_result = _execute_cell(config, dataset, *dump_job, progress=progress)
        reports[dump_job] = report
        if fit_result is not None:
            paths["reconstructions"] = _companion_path(out, "reconstructions")
            dump_reconstructions(fit_result, config.dump_rows, paths["reconstructions"])
    pending = [job for job in jobs if job not in reports]

    if config.workers > 1 and len(pending) > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as executor:
            arguments = [(config, dataset, method, ratio, run) for method, ratio, run in pending]
            for job, report in zip(pending, executor.map(_cell_job, arguments)):
                reports[job] = report
    else:
        for method, ratio, run in pending:
            reports[(method, ratio, run)] = run_cell(config, dataset, method, ratio, run, progress)
            logger.info("Finished %s ratio=%.2f run=%d", method.value, ratio, run)

    ordered = [reports[job] for job in jobs]
    runs = pd.DataFrame([report.to_row() for report in ordered], columns=RUN_COLUMNS)
    summary = summarize(ordered, dataset.name, config.methods, config.missing_ratios)
    curves = curves_table(summary)
    overall = overall_table(summary)

    runs.to_csv(out, index=False)
    for name, table in (("summary", summary), ("curves", curves), ("overall", overall)):
        paths[name] = _companion_path(out, name)
        table.to_csv(paths[name], index=False)

    failed = sum(report.failed for report in ordered)
    if failed:
        logger.warning("%d of %d cells failed", failed, len(ordered))
    return SweepResult(runs, summary, curves, overall, failed, paths)
