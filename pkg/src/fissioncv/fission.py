"""Measurement splitting by Gaussian noise injection.

Given ``y = A x + e`` with ``e ~ N(0, sigma^2 I)`` and injected ``w ~ N(0, sigma^2 I)``::

    y_plus  = y + c * w        Var = sigma^2 / (1 - alpha)
    y_minus = y - w / c        Var = sigma^2 / alpha
    c       = sqrt(alpha / (1 - alpha))

The halves are independent given ``x`` and ``(1 - alpha) y_plus + alpha y_minus == y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fissioncv.errors import DimensionError, InvalidParameterError
from fissioncv.tensors import as_tensor, gaussian_noise


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")


def c_alpha(alpha: float) -> float:
    _check_alpha(alpha)
    return math.sqrt(alpha / (1.0 - alpha))


@dataclass(frozen=True)
class FissionPair:
    y_plus: np.ndarray
    y_minus: np.ndarray
    alpha: float
    w: np.ndarray
    sigma: float

    @property
    def sigma_plus(self) -> float:
        """Noise std of ``y_plus`` given ``x``."""
        return self.sigma / math.sqrt(1.0 - self.alpha)

    @property
    def sigma_minus(self) -> float:
        return self.sigma / math.sqrt(self.alpha)

    def recombine(self) -> np.ndarray:
        return (1.0 - self.alpha) * self.y_plus + self.alpha * self.y_minus


def split_with_noise(y, sigma: float, alpha: float, w) -> FissionPair:
    if not sigma > 0:
        raise InvalidParameterError(f"sigma must be > 0, got {sigma}")
    c = c_alpha(alpha)
    y = np.asarray(y, dtype=np.float64)
    w = as_tensor(w)
    if w.shape != y.shape:
        raise DimensionError(f"noise shape {w.shape} does not match measurement shape {y.shape}")
    y_plus = y + c * w
    y_minus = y - w / c
    y_plus.flags.writeable = False
    y_minus.flags.writeable = False
    return FissionPair(y_plus, y_minus, float(alpha), w, float(sigma))


def split(y, sigma: float, alpha: float, seed) -> FissionPair:
    _check_alpha(alpha)
    y = np.asarray(y, dtype=np.float64)
    return split_with_noise(y, sigma, alpha, gaussian_noise(y.shape, sigma, seed))
