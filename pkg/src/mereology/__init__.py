"""Subsystem structure from spectra: outer-sum partitions, moment counts, entanglement checks."""

from .pauli import ModelSpec, OperatorSum, PauliString, build_model, free_model
from .spectra import Spectrum, diagonalize, free_spectrum, sample_goe

__version__ = "0.1.0"

__all__ = [
    "ModelSpec",
    "OperatorSum",
    "PauliString",
    "Spectrum",
    "build_model",
    "diagonalize",
    "free_model",
    "free_spectrum",
    "sample_goe",
    "__version__",
]
