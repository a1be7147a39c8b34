"""Exception taxonomy shared across the package.

The CLI maps each class to a category prefix in its exit messages, so
library code should raise the most specific class that applies.
"""


class WaveUNetLabError(Exception):
    """Base class for all package errors."""

    category = "error"


class ConfigurationError(WaveUNetLabError):
    """Invalid architecture/freeze/training configuration."""

    category = "config error"


class ShapeError(WaveUNetLabError):
    """Tensor shape or length contract violated."""

    category = "shape error"


class ContractError(WaveUNetLabError):
    """An operation was called outside its documented contract."""

    category = "contract error"


class DataError(WaveUNetLabError):
    """Dataset ingestion or sampling failure."""

    category = "data error"


class ArgumentError(WaveUNetLabError):
    """Invalid command-line argument combination."""

    category = "argument error"


class TrainingAborted(WaveUNetLabError):
    """Training stopped on a non-recoverable condition (e.g. non-finite loss)."""

    category = "training error"


class EvaluationError(WaveUNetLabError):
    """Metric computation failed (e.g. empty segment pool)."""

    category = "evaluation error"


class ReportError(WaveUNetLabError):
    """Report construction failed (duplicates, missing inputs)."""

    category = "report error"
