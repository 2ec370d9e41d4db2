"""Multi-task ordinal regression: sparse (l2,1-regularized) and deep threshold models."""

from mtor.core import (
    DataError,
    MultiTaskDataset,
    NumericalError,
    RmtorModel,
    Task,
    ThresholdSet,
    Variant,
    validate_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "MultiTaskDataset",
    "NumericalError",
    "RmtorModel",
    "Task",
    "ThresholdSet",
    "Variant",
    "validate_dataset",
    "__version__",
]
