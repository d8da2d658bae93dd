"""Multi-view visual-semantic fusion for image+text fake-news classification.

A self-contained float64 autodiff core, the multi-view fusion model built on
it, a binary feature-fixture format, and training/evaluation/ablation
harnesses driven by a JSON run config.
"""

from .autodiff import Tensor, grad_check
from .errors import (
    CheckpointError,
    ConfigValidationError,
    ConfigurationError,
    DimensionError,
    FixtureFormatError,
    MvirError,
    OptimizerError,
    UsageError,
)

__all__ = [
    "Tensor",
    "grad_check",
    "MvirError",
    "DimensionError",
    "ConfigurationError",
    "UsageError",
    "FixtureFormatError",
    "CheckpointError",
    "ConfigValidationError",
    "OptimizerError",
]
