"""Closed forms for the conjugate toy model ``y = x + e``, ``x ~ N(0, sigma_x^2 I)``, ``e ~ N(0, sigma^2 I)``.

Given ``y_minus`` (noise variance ``sigma^2 / alpha``) the posterior is
``N(s * y_minus, v I)`` with::

    s = alpha sigma_x^2 / (alpha sigma_x^2 + sigma^2)
    v = sigma^2 sigma_x^2 / (sigma^2 + alpha sigma_x^2)

and ``y_plus | y_minus ~ N(s * y_minus, (sigma^2 / (1 - alpha) + v) I)``.
:func:`quadrature_predictive` recomputes that density by direct 1-D
integration of ``p(y_plus|x) p(y_minus|x) p(x)`` and is the independent check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from fissioncv import _kernels
from fissioncv.errors import InvalidParameterError, UnsupportedError
from fissioncv.fission import c_alpha, split
from fissioncv.linops import identity
from fissioncv.models import BayesianModel, GaussianLikelihood, IidGaussianPrior
from fissioncv.samplers import sample_exact
from fissioncv.scoring import predictive_log_terms
from fissioncv.tensors import gaussian_noise, resolve_seed

DEFAULT_SIGMA_X_GRID = tuple(round(0.5 + 0.05 * i, 10) for i in range(31))


@dataclass(frozen=True)
class ToyModel:
    m: int
    sigma: float
    sigma_x: float

    def __post_init__(self):
        if self.m < 1:
            raise InvalidParameterError(f"toy dimension m must be >= 1, got {self.m}")
        if not self.sigma > 0 or not self.sigma_x > 0:
            raise InvalidParameterError(f"sigma and sigma_x must be > 0, got {self.sigma}, {self.sigma_x}")

    def bayesian_model(self, label=None) -> BayesianModel:
        return BayesianModel(
            IidGaussianPrior(self.sigma_x),
            GaussianLikelihood(identity((self.m,)), self.sigma),
            label or f"toy(sigma_x={self.sigma_x:g})",
        )

    def draw_measurement(self, seed, sigma_x_data=None) -> np.ndarray:
        """``y = x + e`` with ``x ~ N(0, sigma_x_data^2 I)`` (defaults to the model's own ``sigma_x``)."""
        seed = resolve_seed(seed)
        sx = self.sigma_x if sigma_x_data is None else sigma_x_data
        x = gaussian_noise((self.m,), sx, seed.child(0))
        e = gaussian_noise((self.m,), self.sigma, seed.child(1))
        return x + e


def _check_alpha(alpha):
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}")


def analytic_posterior(toy: ToyModel, y_minus, alpha):
    _check_alpha(alpha)
    a_sx2 = alpha * toy.sigma_x**2
    shrink = a_sx2 / (a_sx2 + toy.sigma**2)
    var = toy.sigma**2 * toy.sigma_x**2 / (toy.sigma**2 + a_sx2)
    return shrink * np.asarray(y_minus, dtype=np.float64), var


def log_predictive(toy: ToyModel, y, w, alpha) -> float:
    """``log p(y_plus | y_minus)`` with ``y_plus = y + c w`` and ``y_minus = y - w / c``."""
    c = c_alpha(alpha)
    y = np.asarray(y, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    y_plus = y + c * w
    mean, var = analytic_posterior(toy, y - w / c, alpha)
    pred_var = toy.sigma**2 / (1.0 - alpha) + var
    r = y_plus - mean
    return float(-0.5 * np.sum(r * r) / pred_var - 0.5 * y.size * math.log(2.0 * math.pi * pred_var))


def log_marginal(toy: ToyModel, y) -> float:
    """``log N(y; 0, (sigma^2 + sigma_x^2) I)``."""
    y = np.asarray(y, dtype=np.float64)
    v = toy.sigma**2 + toy.sigma_x**2
    return float(-0.5 * np.sum(y * y) / v - 0.5 * y.size * math.log(2.0 * math.pi * v))


def _normal_logpdf(v, mean, var):
    return -0.5 * (v - mean) ** 2 / var - 0.5 * np.log(2.0 * np.pi * var)


def _log_trapz(logf, grid):
    top = logf.max()
    return top + math.log(np.trapezoid(np.exp(logf - top), grid))


def quadrature_predictive(toy: ToyModel, y, w, alpha, grid=None, *, nodes=20001) -> float:
    """``log p(y_plus|y_minus)`` as a ratio of two trapezoidal integrals over ``x``.

    By default each integral gets its own grid spanning +-10 standard deviations
    of its integrand (the posterior given both halves for the numerator, given
    ``y_minus`` alone for the denominator). Only the node placement uses
    conjugacy; the integrands are evaluated directly.
    """
    if toy.m != 1:
        raise UnsupportedError(f"quadrature oracle is 1-D only, got m={toy.m}")
    _check_alpha(alpha)
    c = c_alpha(alpha)
    y = float(np.ravel(y)[0])
    w = float(np.ravel(w)[0])
    y_plus, y_minus = y + c * w, y - w / c
    s2 = toy.sigma**2
    sx2 = toy.sigma_x**2

    def span(precision, shift):
        mean, sd = shift / precision, math.sqrt(1.0 / precision)
        return np.linspace(mean - 10.0 * sd, mean + 10.0 * sd, nodes)

    prec_minus = alpha / s2 + 1.0 / sx2
    prec_both = prec_minus + (1.0 - alpha) / s2
    if grid is None:
        grid_num = span(prec_both, (alpha * y_minus + (1.0 - alpha) * y_plus) / s2)
        grid_den = span(prec_minus, alpha * y_minus / s2)
    else:
        grid_num = grid_den = np.asarray(grid, dtype=np.float64)

    def log_minus_prior(x):
        return _normal_logpdf(y_minus, x, s2 / alpha) + _normal_logpdf(x, 0.0, sx2)

    numerator = _log_trapz(_normal_logpdf(y_plus, grid_num, s2 / (1.0 - alpha)) + log_minus_prior(grid_num), grid_num)
    return numerator - _log_trapz(log_minus_prior(grid_den), grid_den)


def discrimination_curve(toy_true: ToyModel, sigma_x_grid=DEFAULT_SIGMA_X_GRID, alpha=0.5, K=250, y_seed=0):
    """Rows ``(sigma_x_prime, mean_log_ratio, stderr)``.

    One ``y`` is drawn from ``toy_true``; each row averages
    ``log p(y+|y-, sigma_x) - log p(y+|y-, sigma_x')`` over ``K`` splits.
    """
    grid = list(sigma_x_grid)
    if not grid:
        raise InvalidParameterError("sigma_x grid is empty")
    if K < 1:
        raise InvalidParameterError(f"K must be >= 1, got {K}")
    _check_alpha(alpha)
    seed = resolve_seed(y_seed)
    y = toy_true.draw_measurement(seed.child(0))
    ws = [gaussian_noise(y.shape, toy_true.sigma, seed.child(1, k)) for k in range(K)]
    ref = np.array([log_predictive(toy_true, y, w, alpha) for w in ws])
    rows = []
    for sx in grid:
        alt = ToyModel(toy_true.m, toy_true.sigma, float(sx))
        if float(sx) == toy_true.sigma_x:
            ratios = np.zeros(K)
        else:
            ratios = ref - np.array([log_predictive(alt, y, w, alpha) for w in ws])
        stderr = float(ratios.std(ddof=1) / math.sqrt(K)) if K > 1 else 0.0
        rows.append((float(sx), float(ratios.mean()), stderr))
    return rows


def default_n_grid(n_max: int):
    grid = [n for n in (10**p for p in range(2, 12)) if n < n_max]
    return grid + [n_max]


def mc_convergence_study(toy: ToyModel, alpha_list, m_list, N_max=50000, K=25, seed=0, n_grid=None):
    """Rows ``(alpha, m, N, K, rel_log_error)``.

    For each ``(alpha, m)`` one ``y`` is drawn, then for every split ``k`` the
    Monte Carlo predictive estimate from the first ``N`` exact posterior samples
    is compared with :func:`log_predictive`; the relative error
    ``|log p_hat - log p| / |log p|`` is averaged over the ``K`` splits.
    """
    if N_max < 100 and n_grid is None:
        raise InvalidParameterError(f"N_max must be >= 100, got {N_max}")
    if K < 1:
        raise InvalidParameterError(f"K must be >= 1, got {K}")
    n_grid = sorted(n_grid) if n_grid is not None else default_n_grid(N_max)
    n_max = n_grid[-1]
    seed = resolve_seed(seed)
    rows = []
    for ai, alpha in enumerate(alpha_list):
        _check_alpha(alpha)
        for mi, m in enumerate(m_list):
            t = ToyModel(int(m), toy.sigma, toy.sigma_x)
            model = t.bayesian_model()
            cell = seed.child(ai, mi)
            y = t.draw_measurement(cell.child(0))
            errors = np.zeros((K, len(n_grid)))
            for k in range(K):
                pair = split(y, t.sigma, alpha, cell.child(1, k))
                xs = sample_exact(model.with_sigma(pair.sigma_minus), pair.y_minus, n_max, cell.child(2, k)).samples
                terms = predictive_log_terms(model.with_sigma(pair.sigma_plus), pair.y_plus, xs)
                exact = log_predictive(t, y, pair.w, alpha)
                for j, n in enumerate(n_grid):
                    estimate = _kernels.log_sum_exp(terms[:n]) - math.log(n)
                    errors[k, j] = abs(estimate - exact) / abs(exact)
            for j, n in enumerate(n_grid):
                rows.append((float(alpha), int(m), int(n), int(K), float(errors[:, j].mean())))
    return rows

