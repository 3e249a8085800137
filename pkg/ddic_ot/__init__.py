"""
DDIC-OT Package

Deep clustering of incomplete data. An autoencoder is trained on mean- (or
zero-, or kNN-) filled data with a Sinkhorn-divergence reconstruction loss,
then fine-tuned jointly with a DEC-style KL clustering loss:

- numerics: reverse-mode autodiff on matrices and log-domain Sinkhorn solvers
- modules: incomplete data, the clustering model, training, evaluation,
  data loading and the experiment runner
- cli: the `ddic-ot` sweep command
"""

from .config import (
    ArchitectureSpec,
    DatasetPreset,
    DATASET_PRESETS,
    ExperimentConfig,
    FillStrategy,
    LossMode,
    Method,
    TrainConfig,
)
from .exceptions import (
    ConfigurationError,
    ConsistencyError,
    ContractError,
    DDICError,
    EvaluationError,
    FormatError,
    ShapeError,
    TrainingError,
)
from .modules.incomplete import MaskedDataset, apply_mask, generate_mask
from .modules.trainer import DDICOTTrainer, FitResult, fit, kmeans
from .modules.evaluation import MetricsReport, evaluate
from .modules.experiment import run_cell, sweep
from .utils import derive_seed, validate_train_config

__version__ = "1.0.0"

__all__ = [
    # Configuration
    "ArchitectureSpec",
    "DatasetPreset",
    "DATASET_PRESETS",
    "ExperimentConfig",
    "FillStrategy",
    "LossMode",
    "Method",
    "TrainConfig",

    # Errors
    "ConfigurationError",
    "ConsistencyError",
    "ContractError",
    "DDICError",
    "EvaluationError",
    "FormatError",
    "ShapeError",
    "TrainingError",

    # Pipeline
    "MaskedDataset",
    "apply_mask",
    "generate_mask",
    "DDICOTTrainer",
    "FitResult",
    "fit",
    "kmeans",
    "MetricsReport",
    "evaluate",
    "run_cell",
    "sweep",

    # Utilities
    "derive_seed",
    "validate_train_config",
]
