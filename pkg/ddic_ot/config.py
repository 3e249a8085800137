"""
Configuration Records

Defines the validated records that drive a clustering run: the network
architecture, the training hyperparameters, per-dataset presets and the
experiment (sweep) description.
"""

import dataclasses
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple

from .exceptions import ConfigurationError
from .utils import parse_float_list, validate_ratios, validate_train_config

logger = logging.getLogger(__name__)


class FillStrategy(Enum):
    """How missing entries are filled before training"""
    MEAN = "mean"
    ZERO = "zero"
    KNN = "knn"


class LossMode(Enum):
    """Which loss terms drive fine-tuning"""
    JOINT = "joint"
    RECONSTRUCTION = "reconstruction"
    CLUSTERING = "clustering"


class Method(Enum):
    """Clustering pipelines the experiment runner can execute"""
    DDIC_OT = "ddic-ot"
    MF_KMEANS = "mf-kmeans"
    ZF_KMEANS = "zf-kmeans"
    KNN_KMEANS = "knn-kmeans"


def _coerce_enum(enum_cls, value, name: str):
    if isinstance(value, enum_cls):
        return value
    try:
        return enum_cls(str(value).strip().lower())
    except ValueError:
        choices = ", ".join(member.value for member in enum_cls)
        raise ConfigurationError(f"Unknown {name} '{value}', expected one of: {choices}")


@dataclass(frozen=True)
class ArchitectureSpec:
    """
    Shape of the autoencoder and the number of clusters.

    The decoder mirrors the encoder: d -> hidden... -> embedding -> reversed hidden... -> d.

    Attributes:
        input_dim (int): Feature dimension d
        hidden_dims (Tuple[int, ...]): Encoder hidden layer widths (may be empty)
        embedding_dim (int): Width of the embedding layer
        cluster_count (int): Number of centroids k
    """

    input_dim: int
    hidden_dims: Tuple[int, ...] = (500, 500, 1000)
    embedding_dim: int = 10
    cluster_count: int = 10

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(dim) for dim in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigurationError(f"input_dim must be at least 1, got {self.input_dim}")
        if any(dim < 1 for dim in self.hidden_dims):
            raise ConfigurationError(f"hidden_dims must all be at least 1, got {list(self.hidden_dims)}")
        if self.embedding_dim < 1:
            raise ConfigurationError(f"embedding_dim must be at least 1, got {self.embedding_dim}")
        if self.cluster_count < 1:
            raise ConfigurationError(f"cluster_count must be at least 1, got {self.cluster_count}")

    @property
    def encoder_dims(self) -> Tuple[int, ...]:
        return (self.input_dim,) + self.hidden_dims + (self.embedding_dim,)

    @property
    def decoder_dims(self) -> Tuple[int, ...]:
        return tuple(reversed(self.encoder_dims))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "hidden_dims": list(self.hidden_dims),
            "embedding_dim": self.embedding_dim,
            "cluster_count": self.cluster_count,
        }


@dataclass(frozen=True)
class TrainConfig:
    """
    Every hyperparameter of a DDIC-OT run.

    Attributes:
        gamma (float): Weight of the clustering loss in L = L_s + gamma * L_c
        eps (float): Sinkhorn entropic regularization
        lr (float): Adam learning rate
        batch_size (int): Minibatch size (the last short batch is kept)
        max_iter (int): Maximum fine-tuning epochs
        delta (float): Stop when the fraction of changed labels falls below delta
        pretrain_epochs (int): Reconstruction-only epochs before fine-tuning
        sinkhorn_unroll (int): Maximum unrolled Sinkhorn iterations per solve
        sinkhorn_tol (Optional[float]): Early exit of unrolled solves (None unrolls fully)
        seed (int): Master seed of the run
        fill (FillStrategy): Initial fill of missing entries
        cluster_count (int): Number of clusters k
        hidden_dims (Tuple[int, ...]): Encoder hidden widths
        embedding_dim (int): Embedding width
        loss_mode (LossMode): Loss terms used during fine-tuning
        knn_k (int): Neighbours used by the kNN fill
        kmeans_restarts (int): k-means++ restarts for centroid initialization
        kmeans_max_iters (int): Lloyd iterations per restart
    """

    gamma: float = 100.0
    eps: float = 0.01
    lr: float = 0.001
    batch_size: int = 256
    max_iter: int = 200
    delta: float = 0.001
    pretrain_epochs: int = 50
    sinkhorn_unroll: int = 200
    sinkhorn_tol: Optional[float] = 1e-6
    seed: int = 0
    fill: FillStrategy = FillStrategy.MEAN
    cluster_count: int = 10
    hidden_dims: Tuple[int, ...] = (500, 500, 1000)
    embedding_dim: int = 10
    loss_mode: LossMode = LossMode.JOINT
    knn_k: int = 5
    kmeans_restarts: int = 10
    kmeans_max_iters: int = 300

    def __post_init__(self):
        """Normalize field types and validate"""
        object.__setattr__(self, "fill", _coerce_enum(FillStrategy, self.fill, "fill"))
        object.__setattr__(self, "loss_mode", _coerce_enum(LossMode, self.loss_mode, "loss_mode"))
        object.__setattr__(self, "hidden_dims", tuple(int(dim) for dim in self.hidden_dims))
        is_valid, errors = validate_train_config(self)
        if not is_valid:
            raise ConfigurationError("Invalid training configuration: " + "; ".join(errors))

    def architecture(self, input_dim: int) -> ArchitectureSpec:
        """Architecture for data with `input_dim` features."""
        return ArchitectureSpec(input_dim, self.hidden_dims, self.embedding_dim, self.cluster_count)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def for_dataset(cls, name: str, **overrides) -> "TrainConfig":
        """
        Build a configuration from the preset of a known dataset.

        Unknown names fall back to gamma=100 and hidden widths 500-500-1000.

        Example:
            >>> TrainConfig.for_dataset("coil20").gamma
            150.0
        """
        preset = DATASET_PRESETS.get(name.strip().lower())
        values: Dict[str, Any] = {}
        if preset is not None:
            values.update(
                gamma=preset.gamma,
                hidden_dims=preset.hidden_dims,
                embedding_dim=preset.embedding_dim,
                cluster_count=preset.classes,
            )
        values.update(overrides)
        return cls(**values)


@dataclass(frozen=True)
class DatasetPreset:
    """Published settings and expected shape of a benchmark dataset"""
    name: str
    samples: int
    dimensions: int
    classes: int
    gamma: float
    hidden_dims: Tuple[int, ...]
    embedding_dim: int = 10


DATASET_PRESETS: Dict[str, DatasetPreset] = {
    "mnist": DatasetPreset("mnist", 70000, 784, 10, 100.0, (500, 500, 1000)),
    "usps": DatasetPreset("usps", 9298, 256, 10, 100.0, (500, 500, 1000)),
    "fmnist": DatasetPreset("fmnist", 70000, 784, 10, 100.0, (500, 500, 1000)),
    "reuters10k": DatasetPreset("reuters10k", 10000, 2000, 4, 150.0, (500, 500, 2000)),
    "coil20": DatasetPreset("coil20", 1440, 1024, 20, 150.0, (500, 500, 2000)),
    "letter": DatasetPreset("letter", 20800, 784, 26, 150.0, (500, 500, 2000)),
}

DEFAULT_MISSING_RATIOS: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)

TRAIN_FIELDS = frozenset(f.name for f in dataclasses.fields(TrainConfig))


def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in ("1", "true", "yes", "on"):
        return True
    if text in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"Expected a boolean, got '{value}'")


def _parse_optional(parser: Callable) -> Callable:
    def parse(value):
        if value is None or (isinstance(value, str) and value.strip().lower() in ("", "none")):
            return None
        return parser(value)
    return parse


def _parse_int_tuple(value) -> Tuple[int, ...]:
    if isinstance(value, str):
        return tuple(int(item) for item in value.split(",") if item.strip())
    return tuple(int(item) for item in value)


def _parse_methods(value) -> Tuple[Method, ...]:
    items = value.split(",") if isinstance(value, str) else value
    return tuple(_coerce_enum(Method, item, "method") for item in items if str(item).strip())


def _text(value) -> str:
    return str(value).strip()


_EXPERIMENT_PARSERS: Dict[str, Callable] = {
    "dataset": _text,
    "methods": _parse_methods,
    "missing_ratios": lambda value: tuple(parse_float_list(value)),
    "runs": int,
    "seed": int,
    "out": _text,
    "images": _parse_optional(_text),
    "labels": _parse_optional(_text),
    "csv": _parse_optional(_text),
    "label_column": _text,
    "csv_header": _parse_bool,
    "normalize": _parse_bool,
    "subset": _parse_optional(int),
    "cluster_count": _parse_optional(int),
    "blob_samples": int,
    "blob_dim": int,
    "blob_clusters": int,
    "blob_separation": float,
    "blob_std": float,
    "workers": int,
    "dump_rows": int,
}

_TRAIN_PARSERS: Dict[str, Callable] = {
    "gamma": float,
    "eps": float,
    "lr": float,
    "batch_size": int,
    "max_iter": int,
    "delta": float,
    "pretrain_epochs": int,
    "sinkhorn_unroll": int,
    "sinkhorn_tol": _parse_optional(float),
    "seed": int,
    "fill": _text,
    "cluster_count": int,
    "hidden_dims": _parse_int_tuple,
    "embedding_dim": int,
    "loss_mode": _text,
    "knn_k": int,
    "kmeans_restarts": int,
    "kmeans_max_iters": int,
}

_ALIASES = {"method": "methods", "ratios": "missing_ratios"}


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Description of a missing-ratio sweep.

    The data source is, in order of precedence: `csv`, the `images`/`labels`
    IDX pair, or synthetic blobs when `dataset` is 'blobs'. When `dataset`
    names a preset, its gamma and architecture seed the training
    configuration; `train_overrides` are applied on top.

    Attributes:
        dataset (str): Dataset name (preset name, 'blobs', or a free label)
        methods (Tuple[Method, ...]): Pipelines to run
        missing_ratios (Tuple[float, ...]): Missing ratios of the sweep
        runs (int): Independent runs per (method, ratio) cell
        seed (int): Base seed; cell seeds are derived from it
        out (str): Path of the per-run CSV
        subset (Optional[int]): Class-stratified sample size drawn before the sweep
        cluster_count (Optional[int]): Clusters to find (defaults to the class count)
        workers (int): Process pool size
        dump_rows (int): Rows of the first ddic-ot cell written as a reconstruction dump
        train_overrides (Dict[str, Any]): TrainConfig fields set explicitly
    """

    dataset: str = "blobs"
    methods: Tuple[Method, ...] = (Method.DDIC_OT,)
    missing_ratios: Tuple[float, ...] = DEFAULT_MISSING_RATIOS
    runs: int = 10
    seed: int = 0
    out: str = "results.csv"
    images: Optional[str] = None
    labels: Optional[str] = None
    csv: Optional[str] = None
    label_column: str = "label"
    csv_header: bool = True
    normalize: bool = True
    subset: Optional[int] = None
    cluster_count: Optional[int] = None
    blob_samples: int = 600
    blob_dim: int = 50
    blob_clusters: int = 3
    blob_separation: float = 10.0
    blob_std: float = 1.0
    workers: int = 1
    dump_rows: int = 0
    train_overrides: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        """Normalize field types and validate"""
        object.__setattr__(self, "methods", _parse_methods(self.methods))
        object.__setattr__(self, "missing_ratios", tuple(parse_float_list(self.missing_ratios)))

        errors = []
        if not self.methods:
            errors.append("At least one method is required")
        _, ratio_errors = validate_ratios(self.missing_ratios)
        errors.extend(ratio_errors)
        if self.runs < 1:
            errors.append(f"runs must be at least 1, got {self.runs}")
        if self.seed < 0:
            errors.append(f"seed cannot be negative, got {self.seed}")
        if self.workers < 1:
            errors.append(f"workers must be at least 1, got {self.workers}")
        if self.dump_rows < 0:
            errors.append(f"dump_rows cannot be negative, got {self.dump_rows}")
        if self.subset is not None and self.subset < 1:
            errors.append(f"subset must be at least 1, got {self.subset}")
        if self.cluster_count is not None and self.cluster_count < 1:
            errors.append(f"cluster_count must be at least 1, got {self.cluster_count}")
        if (self.images is None) != (self.labels is None):
            errors.append("images and labels must be given together")
        if self.csv is None and self.images is None and self.dataset != "blobs":
            errors.append(f"dataset '{self.dataset}' needs --images/--labels or --csv")
        if self.dataset == "blobs" and self.csv is None and self.images is None:
            if self.blob_clusters < 1 or self.blob_samples < self.blob_clusters:
                errors.append("blob_samples must be at least blob_clusters, which must be at least 1")
            if self.blob_dim < 1 or self.blob_separation <= 0 or self.blob_std < 0:
                errors.append("blob_dim must be >= 1, blob_separation > 0 and blob_std >= 0")
        unknown = set(self.train_overrides) - TRAIN_FIELDS
        if unknown:
            errors.append(f"Unknown training keys: {sorted(unknown)}")
        if errors:
            raise ConfigurationError("Invalid experiment configuration: " + "; ".join(errors))

        # Surface training-config errors at construction time
        self.train_config()

    def train_config(self, cluster_count: Optional[int] = None) -> TrainConfig:
        """
        Training configuration of this experiment.

        Args:
            cluster_count: Cluster count to use when neither the experiment nor
                the overrides set one (usually the dataset's class count)
        """
        overrides = dict(self.train_overrides)
        if self.cluster_count is not None:
            overrides["cluster_count"] = self.cluster_count
        elif cluster_count is not None and "cluster_count" not in overrides:
            overrides["cluster_count"] = cluster_count
        overrides.setdefault("seed", self.seed)
        return TrainConfig.for_dataset(self.dataset, **overrides)

    @classmethod
    def from_mapping(cls, values: Dict[str, Any]) -> "ExperimentConfig":
        """
        Build a configuration from flat key/value pairs.

        Keys may name ExperimentConfig or TrainConfig fields; values may be
        strings (config files) or already typed (command-line flags).

        Raises:
            ConfigurationError: For unknown keys or unparsable values
        """
        experiment, train = _split_values(values)
        return cls(train_overrides=train, **experiment)

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        """
        Parse a `key = value` configuration file.

        Blank lines and `#` comments are ignored; lists are comma-separated.

        Example file:
            dataset = blobs
            method = ddic-ot, mf-kmeans
            ratios = 0.1, 0.3
            gamma = 100
        """
        return cls.from_mapping(read_config_file(path))

    def with_overrides(self, **flags) -> "ExperimentConfig":
        """
        Apply command-line style overrides; None values are ignored.

        Example:
            >>> ExperimentConfig().with_overrides(runs=3, gamma=150.0).runs
            3
        """
        experiment, train = _split_values({k: v for k, v in flags.items() if v is not None})
        return dataclasses.replace(self, train_overrides={**self.train_overrides, **train}, **experiment)


def read_config_file(path) -> Dict[str, str]:
    """Raw `key = value` pairs of a configuration file, in file order."""
    values: Dict[str, str] = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"Cannot read configuration file {path}: {exc}")
    for line_number, line in enumerate(text.splitlines(), start=1):
        content = line.split("#", 1)[0].strip()
        if not content:
            continue
        if "=" not in content:
            raise ConfigurationError(f"{path}:{line_number}: expected 'key = value', got '{content}'")
        key, value = content.split("=", 1)
        values[key.strip()] = value.strip()
    logger.debug("Loaded %d configuration keys from %s", len(values), path)
    return values


def _split_values(values: Dict[str, Any]) -> Tuple[Dict[str, Any], Dict[str, Any]]:
    """Route flat keys to ExperimentConfig or TrainConfig fields, parsing each value."""
    experiment: Dict[str, Any] = {}
    train: Dict[str, Any] = {}
    for raw_key, raw_value in values.items():
        key = raw_key.strip().replace("-", "_")
        key = _ALIASES.get(key, key)
        if key in _EXPERIMENT_PARSERS:
            target, parser = experiment, _EXPERIMENT_PARSERS[key]
        elif key in _TRAIN_PARSERS:
            target, parser = train, _TRAIN_PARSERS[key]
        else:
            raise ConfigurationError(f"Unknown configuration key '{raw_key}'")
        try:
            target[key] = parser(raw_value)
        except ConfigurationError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"Invalid value for '{raw_key}': {raw_value!r} ({exc})")
    return experiment, train
