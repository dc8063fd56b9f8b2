"""Gaussian likelihoods, analytic priors, and the Bayesian model pairing them."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from fissioncv import _kernels
from fissioncv.errors import DimensionError, InvalidParameterError, UnsupportedError
from fissioncv.linops import LinearOperator, ValidMask, spectral_norm_sq


@dataclass(frozen=True)
class GaussianLikelihood:
    """``y | x ~ N(A x, sigma^2 I)``; ``valid`` restricts scored residuals to an interior crop."""

    op: LinearOperator
    sigma: float
    valid: ValidMask | None = None

    def __post_init__(self):
        if not self.sigma > 0:
            raise InvalidParameterError(f"noise sigma must be > 0, got {self.sigma}")
        if self.valid is not None and self.valid.shape != self.op.shape:
            raise DimensionError(f"valid mask shape {self.valid.shape} != operator shape {self.op.shape}")

    @property
    def n_scored(self) -> int:
        return self.valid.count if self.valid is not None else self.op.n_out

    def weights(self) -> np.ndarray:
        if self.valid is None:
            return np.ones(self.op.shape)
        return self.valid.weights()


@dataclass(frozen=True)
class IidGaussianPrior:
    sigma_x: float

    kind = "iid_gaussian"
    smooth = True

    def __post_init__(self):
        if not self.sigma_x > 0:
            raise InvalidParameterError(f"prior sigma_x must be > 0, got {self.sigma_x}")

    def log_density(self, x) -> float:
        x = np.asarray(x)
        return float(-0.5 * np.sum(x * x) / self.sigma_x**2 - 0.5 * x.size * math.log(2 * math.pi * self.sigma_x**2))

    def grad_log_density(self, x) -> np.ndarray:
        return -np.asarray(x) / self.sigma_x**2

    def lipschitz(self) -> float:
        return 1.0 / self.sigma_x**2


@dataclass(frozen=True)
class CharbonnierTVPrior:
    """``log p(x) = -lam * sum sqrt(|grad x|^2 + eps^2) + const`` with periodic forward differences."""

    lam: float = 10.0
    eps: float = 0.01

    kind = "charbonnier_tv"
    smooth = True

    def __post_init__(self):
        if not self.lam > 0 or not self.eps > 0:
            raise InvalidParameterError(f"lambda and epsilon must be > 0, got {self.lam}, {self.eps}")

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise DimensionError(f"Charbonnier TV prior needs a 2-D image, got shape {x.shape}")
        return x

    def log_density(self, x) -> float:
        value, _ = _kernels.tv_value_and_grad(self._check(x), self.eps)
        return -self.lam * value

    def grad_log_density(self, x) -> np.ndarray:
        _, grad = _kernels.tv_value_and_grad(self._check(x), self.eps)
        return -self.lam * grad

    def lipschitz(self) -> float:
        # ||D||^2 <= 8 for periodic forward differences; Charbonnier curvature <= 1/eps
        return 8.0 * self.lam / self.eps


@dataclass(frozen=True)
class BayesianModel:
    prior: IidGaussianPrior | CharbonnierTVPrior
    likelihood: GaussianLikelihood
    label: str = "model"

    @property
    def op(self) -> LinearOperator:
        return self.likelihood.op

    @property
    def sigma(self) -> float:
        return self.likelihood.sigma

    def with_sigma(self, sigma: float) -> BayesianModel:
        """Same model with measurement noise std replaced (used for the fission halves)."""
        return replace(self, likelihood=replace(self.likelihood, sigma=float(sigma)))

    @property
    def conjugate(self) -> bool:
        return isinstance(self.prior, IidGaussianPrior) and self.op.fourier_diagonal


def _check_pair(model, y, x):
    y = np.asarray(y, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    if y.shape != model.op.shape:
        raise DimensionError(f"measurement shape {y.shape} != operator shape {model.op.shape}")
    if x.shape[x.ndim - len(model.op.shape):] != model.op.shape:
        raise DimensionError(f"image shape {x.shape} != operator shape {model.op.shape}")
    return y, x


def squared_residuals(model: BayesianModel, y, xs) -> np.ndarray:
    """``||y - A x_n||^2`` over the valid region for a batch ``xs`` of shape (N, *shape)."""
    y, xs = _check_pair(model, y, xs)
    ax = model.op.apply(xs).reshape(-1, y.size)
    return _kernels.sq_residual_norms(y.ravel(), ax, model.likelihood.weights().ravel())


def log_likelihood(model: BayesianModel, y, x, *, normalized=True) -> float:
    """Gaussian log-density of ``y`` given ``x``.

    With ``normalized=False`` returns the bare squared residual ``||y - A x||^2``
    instead (the quantity averaged by the likelihood score).
    """
    x = np.asarray(x, dtype=np.float64)
    sq = float(squared_residuals(model, y, x[None])[0])
    if not normalized:
        return sq
    s2 = model.sigma**2
    return -0.5 * sq / s2 - 0.5 * model.likelihood.n_scored * math.log(2.0 * math.pi * s2)


def log_likelihood_batch(model: BayesianModel, y, xs) -> np.ndarray:
    s2 = model.sigma**2
    sq = squared_residuals(model, y, xs)
    return -0.5 * sq / s2 - 0.5 * model.likelihood.n_scored * math.log(2.0 * math.pi * s2)


def log_posterior(model: BayesianModel, y, x) -> float:
    """Unnormalized posterior log-density over the full (uncropped) likelihood.

    The sampler target: the valid crop only enters scoring, never the posterior.
    """
    y, x = _check_pair(model, y, x)
    r = y - model.op.apply(x)
    return float(-0.5 * np.sum(r * r) / model.sigma**2 + model.prior.log_density(x))


def grad_log_posterior(model: BayesianModel, y, x) -> np.ndarray:
    if not getattr(model.prior, "smooth", False):
        raise UnsupportedError(f"prior {model.prior!r} has no gradient")
    y, x = _check_pair(model, y, x)
    r = y - model.op.apply(x)
    return model.op.apply_adjoint(r) / model.sigma**2 + model.prior.grad_log_density(x)


def posterior_lipschitz_bound(model: BayesianModel) -> float:
    if not model.op.fourier_diagonal:
        raise UnsupportedError("Lipschitz bound needs a Fourier-diagonal operator")
    if not getattr(model.prior, "smooth", False):
        raise UnsupportedError(f"prior {model.prior!r} is not smooth")
    return spectral_norm_sq(model.op) / model.sigma**2 + model.prior.lipschitz()


def make_prior(kind: str, *, sigma_x=1.0, lam=10.0, eps=0.01):
    if kind == "iid_gaussian":
        return IidGaussianPrior(float(sigma_x))
    if kind == "charbonnier_tv":
        return CharbonnierTVPrior(float(lam), float(eps))
    raise InvalidParameterError(f"unknown prior kind {kind!r}; expected iid_gaussian or charbonnier_tv")
