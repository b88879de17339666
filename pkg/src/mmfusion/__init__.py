"""Multimodal disaster post classifier: transformer text encoder, small
residual CNN vision encoder, early fusion by feature concatenation."""

__version__ = "0.1.0"

from .errors import (
    ConfigError,
    DataError,
    DimensionError,
    DivergenceError,
    MMFusionError,
    UsageError,
)
from .tensor import Tape, Tensor, backward

__all__ = [
    "ConfigError",
    "DataError",
    "DimensionError",
    "DivergenceError",
    "MMFusionError",
    "UsageError",
    "Tape",
    "Tensor",
    "backward",
    "__version__",
]
