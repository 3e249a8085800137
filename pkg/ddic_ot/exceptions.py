"""
Exception hierarchy for the ddic_ot package.

Contract violations derive from ValueError so callers that only care about
"bad input" can keep catching ValueError.
"""

from typing import Optional


class DDICError(Exception):
    """Base class for every error raised by ddic_ot."""


class ShapeError(DDICError, ValueError):
    """Raised when matrix dimensions do not line up or an input is empty."""


class ContractError(DDICError, ValueError):
    """Raised when a documented precondition is violated."""


class EvaluationError(DDICError, ArithmeticError):
    """Raised when a function evaluation produces a non-finite value."""


class FormatError(DDICError, ValueError):
    """Raised when an input file does not follow its declared format."""


class ConsistencyError(FormatError):
    """Raised when two input files disagree with each other."""


class ConfigurationError(DDICError, ValueError):
    """Raised for unknown configuration keys or invalid configuration values."""


class TrainingError(DDICError, RuntimeError):
    """
    Raised when training diverges.

    Attributes:
        phase: 'pretrain' or 'finetune'
        epoch: Epoch index (0-based) at which the failure happened
        batch: Batch index within the epoch, if known
    """

    def __init__(self, message: str, phase: str, epoch: int, batch: Optional[int] = None):
        self.phase = phase
        self.epoch = epoch
        self.batch = batch
        where = f"phase={phase}, epoch={epoch}"
        if batch is not None:
            where += f", batch={batch}"
        super().__init__(f"{message} ({where})")
