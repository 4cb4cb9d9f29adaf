"""Photoacoustic reconstruction with a k-space wave model and two-level proximal methods."""

from .core import (AcousticState, DivergenceError, Grid, Medium, SensorArray, SensorData,
                   derive_loss_coefficients, make_wavenumbers)
from .wave import ForwardOperator, forward, smooth_source
from .adjoint import AdjointOperator, adjoint

__version__ = "0.1.0"

__all__ = [
    "AcousticState", "AdjointOperator", "DivergenceError", "ForwardOperator", "Grid", "Medium",
    "SensorArray", "SensorData", "adjoint", "derive_loss_coefficients", "forward",
    "make_wavenumbers", "smooth_source",
]
