"""Unsupervised Bayesian model selection and misspecification testing by data fission."""

__version__ = "0.1.0"

from fissioncv.errors import (
    CalibrationError,
    DimensionError,
    DivergenceError,
    FissionError,
    FormatError,
    InvalidParameterError,
    UnderflowError,
    UnsupportedError,
)
from fissioncv.fission import FissionPair, c_alpha, split, split_with_noise
from fissioncv.tensors import SeedSpec, as_tensor, gaussian_noise, read_pgm, read_tensor, write_pgm, write_tensor

__all__ = [
    "CalibrationError",
    "DimensionError",
    "DivergenceError",
    "FissionError",
    "FissionPair",
    "FormatError",
    "InvalidParameterError",
    "SeedSpec",
    "UnderflowError",
    "UnsupportedError",
    "__version__",
    "as_tensor",
    "c_alpha",
    "gaussian_noise",
    "read_pgm",
    "read_tensor",
    "split",
    "split_with_noise",
    "write_pgm",
    "write_tensor",
]
