"""
Command-line entry point: runs a missing-ratio sweep and prints the
per-(method, ratio) summary.

    ddic-ot --dataset blobs --method ddic-ot,mf-kmeans --ratios 0.1,0.3 --runs 3
    ddic-ot --config mnist.cfg --csv mnist.csv --out results/mnist.csv

Exit codes: 0 on success, 1 if any cell failed, 2 on configuration or input errors.
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from .config import ExperimentConfig, read_config_file
from .exceptions import ConfigurationError, DDICError
from .modules.experiment import sweep
from .utils import format_mean_std

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CELL_FAILED = 1
EXIT_BAD_INPUT = 2

# Flag name -> configuration key
_FLAG_KEYS = {
    "dataset": "dataset",
    "method": "methods",
    "ratios": "missing_ratios",
    "runs": "runs",
    "gamma": "gamma",
    "eps": "eps",
    "seed": "seed",
    "out": "out",
    "workers": "workers",
    "dump_rows": "dump_rows",
    "images": "images",
    "labels": "labels",
    "csv": "csv",
    "label_column": "label_column",
}


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command-line arguments"""
    parser = argparse.ArgumentParser(
        prog="ddic-ot",
        description="Deep incomplete clustering with a Sinkhorn reconstruction loss: missing-ratio sweeps",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--config", help="key = value configuration file; flags override it")
    parser.add_argument("--dataset", help="Dataset name: 'blobs', a preset (mnist, usps, ...) or a label")
    parser.add_argument("--method", help="Comma list of ddic-ot, mf-kmeans, zf-kmeans, knn-kmeans")
    parser.add_argument("--ratios", help="Comma list of missing ratios in [0, 1]")
    parser.add_argument("--runs", type=int, help="Independent runs per (method, ratio)")
    parser.add_argument("--gamma", type=float, help="Clustering loss weight")
    parser.add_argument("--eps", type=float, help="Sinkhorn entropic regularization")
    parser.add_argument("--seed", type=int, help="Base seed")
    parser.add_argument("--out", help="Per-run CSV path; summary tables are written next to it")
    parser.add_argument("--workers", type=int, help="Process pool size")
    parser.add_argument("--dump-rows", type=int, help="Write N reconstructed rows of the first ddic-ot cell")
    parser.add_argument("--images", help="IDX image file")
    parser.add_argument("--labels", help="IDX label file")
    parser.add_argument("--csv", help="CSV file with a label column (NaN marks missing values)")
    parser.add_argument("--label-column", help="Label column name (index without header)")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging and JSON progress on stderr")
    return parser.parse_args(argv)


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """
    Merge the configuration file (if any) with the flags that were given.

    Flags are appended after the file keys, so they win when both name the
    same field.
    """
    values: Dict[str, Any] = read_config_file(args.config) if args.config else {}
    for flag, key in _FLAG_KEYS.items():
        value = getattr(args, flag)
        if value is not None:
            values.pop(key, None)
            values[key] = value
    return ExperimentConfig.from_mapping(values)


def print_summary(summary) -> None:
    """Print mean±std (in percent) per (method, ratio)"""
    print(f"{'method':<12} {'ratio':>6} {'runs':>5} {'failed':>6} {'ACC':>14} {'NMI':>14} {'Purity':>14}")
    print("-" * 78)
    for row in summary.itertuples(index=False):
        print(
            f"{row.method:<12} {row.ratio:>6.2f} {row.runs:>5d} {row.failed:>6d} "
            f"{format_mean_std(row.acc_mean, row.acc_std):>14} "
            f"{format_mean_std(row.nmi_mean, row.nmi_std):>14} "
            f"{format_mean_std(row.purity_mean, row.purity_std):>14}"
        )


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )

    try:
        config = build_config(args)
    except ConfigurationError as exc:
        logger.error("%s", exc)
        return EXIT_BAD_INPUT

    try:
        result = sweep(config, progress=sys.stderr if args.verbose else None)
    except (DDICError, OSError) as exc:
        logger.error("Cannot run sweep: %s", exc)
        return EXIT_BAD_INPUT

    print_summary(result.summary)
    for name, path in result.paths.items():
        logger.info("Wrote %s table to %s", name, path)

    if result.failed:
        logger.error("%d cells failed; see %s", result.failed, result.paths["runs"])
        return EXIT_CELL_FAILED
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
