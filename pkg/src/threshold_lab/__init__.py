"""Few-body Coulomb threshold lab: stability of three-charge systems near the
two-body dissociation threshold, Green's-function bounds and lattice checks."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    InvalidInputError,
    NumericalError,
    ThresholdLabError,
    ValidationError,
)
from .model import ThreeBodySystem, jacobi_frame, scale_system, threshold_channels  # noqa: E402

__all__ = [
    "__version__",
    "InvalidInputError",
    "NumericalError",
    "ThresholdLabError",
    "ValidationError",
    "ThreeBodySystem",
    "jacobi_frame",
    "scale_system",
    "threshold_channels",
]
