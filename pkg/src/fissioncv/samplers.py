"""Posterior samplers.

``exact_conjugate`` draws i.i.d. samples for an i.i.d. Gaussian prior and a
Fourier-diagonal operator. Per unitary-DFT coefficient ``i`` with gain ``d_i``::

    v_i = (|d_i|^2 / sigma^2 + 1 / sigma_x^2)^-1
    m_i = v_i * conj(d_i) * yhat_i / sigma^2

Samples are ``F*(m + sqrt(v) * F xi)`` with real white ``xi``; because ``v`` is
Hermitian-symmetric the result is real up to rounding.

``ula`` runs the unadjusted Langevin algorithm
``x <- x + gamma * grad log p(x|y) + sqrt(2 gamma) * xi`` with
``gamma = step_scale / L``, started at ``A^T y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fissioncv.errors import DivergenceError, InvalidParameterError, UnsupportedError
from fissioncv.linops import fft_unitary, ifft_unitary
from fissioncv.models import BayesianModel, IidGaussianPrior, grad_log_posterior, posterior_lipschitz_bound
from fissioncv.tensors import SeedSpec, resolve_seed

SAMPLER_KINDS = ("exact_conjugate", "ula")


@dataclass(frozen=True)
class SamplerConfig:
    kind: str = "exact_conjugate"
    burn_in: int = 200
    thinning: int = 20
    step_scale: float = 0.9
    chain_seed: SeedSpec = field(default_factory=lambda: SeedSpec(0))

    def __post_init__(self):
        if self.kind not in SAMPLER_KINDS:
            raise InvalidParameterError(f"unknown sampler kind {self.kind!r}; expected one of {SAMPLER_KINDS}")
        if self.burn_in < 0:
            raise InvalidParameterError(f"burn_in must be >= 0, got {self.burn_in}")
        if self.thinning < 1:
            raise InvalidParameterError(f"thinning must be >= 1, got {self.thinning}")
        if not 0 < self.step_scale <= 1:
            raise InvalidParameterError(f"step_scale must be in (0, 1], got {self.step_scale}")


@dataclass(frozen=True)
class SampleSet:
    samples: np.ndarray  # (N, *shape)
    label: str
    measurement_id: str = ""
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return self.samples.shape[0]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)

    def var(self) -> np.ndarray:
        return self.samples.var(axis=0, ddof=1) if len(self) > 1 else np.zeros(self.samples.shape[1:])


def _moment_diagnostics(samples):
    return {
        "mean": samples.mean(axis=0),
        "var": samples.var(axis=0, ddof=1) if samples.shape[0] > 1 else np.zeros(samples.shape[1:]),
    }


def conjugate_moments(model: BayesianModel, y):
    """Fourier-domain posterior mean (pixel domain) and per-frequency variance ``v``."""
    if not isinstance(model.prior, IidGaussianPrior) or not model.op.fourier_diagonal:
        raise UnsupportedError(
            f"exact sampling needs an iid_gaussian prior and a Fourier-diagonal operator, got {model.prior!r}"
        )
    ndim = len(model.op.shape)
    d2 = np.abs(model.op.spectrum()) ** 2
    s2 = model.sigma**2
    v = 1.0 / (d2 / s2 + 1.0 / model.prior.sigma_x**2)
    mean_hat = v * fft_unitary(model.op.apply_adjoint(y), ndim) / s2
    mean = ifft_unitary(mean_hat, ndim).real
    return mean, v


def sample_exact(model: BayesianModel, y, n: int, seed, *, chunk: int = 4096) -> SampleSet:
    if n < 1:
        raise InvalidParameterError(f"sample count must be >= 1, got {n}")
    y = np.asarray(y, dtype=np.float64)
    mean, v = conjugate_moments(model, y)
    ndim = len(model.op.shape)
    sqrt_v = np.sqrt(v)
    rng = resolve_seed(seed).generator()
    out = np.empty((n,) + model.op.shape)
    flat = bool(np.all(v == v.flat[0]))
    imag_residue = 0.0
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        xi = rng.standard_normal((stop - start,) + model.op.shape)
        if flat:
            # flat spectrum: F* sqrt(v) F xi == sqrt(v) xi
            out[start:stop] = mean + sqrt_v.flat[0] * xi
            continue
        z = ifft_unitary(sqrt_v * fft_unitary(xi, ndim), ndim)
        imag_residue = max(imag_residue, float(np.abs(z.imag).max()))
        out[start:stop] = mean + z.real
    diagnostics = {"sampler": "exact_conjugate", "imag_residue": imag_residue, **_moment_diagnostics(out)}
    return SampleSet(out, model.label, diagnostics=diagnostics)


def sample_ula(model: BayesianModel, y, n: int, config: SamplerConfig) -> SampleSet:
    if n < 1:
        raise InvalidParameterError(f"sample count must be >= 1, got {n}")
    y = np.asarray(y, dtype=np.float64)
    lip = posterior_lipschitz_bound(model)
    gamma = config.step_scale / lip
    noise_scale = math.sqrt(2.0 * gamma)
    rng = config.chain_seed.generator()
    x = model.op.apply_adjoint(y)
    limit = 1e6 * float(np.linalg.norm(x)) + 1e6
    out = np.empty((n,) + model.op.shape)
    total_steps = config.burn_in + n * config.thinning
    kept = 0
    for step in range(1, total_steps + 1):
        x = x + gamma * grad_log_posterior(model, y, x) + noise_scale * rng.standard_normal(x.shape)
        if not np.linalg.norm(x) <= limit:
            raise DivergenceError(f"ULA diverged at step {step} (gamma={gamma:.3g}, L={lip:.3g})")
        if step > config.burn_in and (step - config.burn_in) % config.thinning == 0:
            out[kept] = x
            kept += 1
    diagnostics = {
        "sampler": "ula",
        "gamma": gamma,
        "lipschitz": lip,
        "step_bound_ok": gamma * lip <= 1.0,
        "steps": total_steps,
        **_moment_diagnostics(out),
    }
    return SampleSet(out, model.label, diagnostics=diagnostics)


def sample_posterior(model: BayesianModel, y, n: int, config: SamplerConfig) -> SampleSet:
    if config.kind == "exact_conjugate":
        return sample_exact(model, y, n, config.chain_seed)
    if config.kind == "ula":
        return sample_ula(model, y, n, config)
    raise UnsupportedError(f"sampler kind {config.kind!r} not available")
