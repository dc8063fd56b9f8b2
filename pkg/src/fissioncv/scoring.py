"""Fission scoring estimators over posterior samples.

For each of ``K`` injected-noise realizations ``w_k`` the measurement is split
into ``(y_plus, y_minus)``; posterior samples are drawn given one half and
scored against the other:

* ``phi1``     mean of ``||y_plus - A x||^2`` over ``x ~ p(x | y_minus)`` (lower is better)
* ``phi2``     mean of ``||rho(x) - rho(x')||`` over ``x ~ p(x | y_minus)``, ``x' ~ p(x | y_plus)``
* ``phi3_log`` ``log mean p(y_plus | x)`` over ``x ~ p(x | y_minus)`` (higher is better)

Random streams: realization ``k`` draws its noise from ``seed.child(k)`` and
its chains from ``seed.child(k, 1)`` (given ``y_minus``) and
``seed.child(k, 2)`` (given ``y_plus``). Per-``k`` partial sums are reduced in
index order, so results do not depend on the thread count. ``noises`` replaces
the drawn ``w_k`` with caller-supplied arrays.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from fissioncv import _kernels
from fissioncv.errors import FissionError, InvalidParameterError, UnderflowError
from fissioncv.fission import split, split_with_noise
from fissioncv.reporting import write_rows_csv
from fissioncv.models import BayesianModel, log_likelihood_batch, squared_residuals
from fissioncv.samplers import SamplerConfig, sample_posterior
from fissioncv.tensors import SeedSpec, read_tensor, resolve_seed

METRICS = ("phi1", "phi2", "phi3")


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------

class Embedding:
    """Feature map used by ``phi2``. Subclasses implement ``__call__(x, index)``."""

    kind = "identity"

    def __call__(self, x, index=None) -> np.ndarray:
        return np.asarray(x, dtype=np.float64).ravel()

    def batch(self, xs, indices) -> np.ndarray:
        return np.stack([self(x, i) for x, i in zip(xs, indices)])


class IdentityEmbedding(Embedding):
    def batch(self, xs, indices) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        return xs.reshape(xs.shape[0], -1)


class PyramidEmbedding(Embedding):
    """Concatenated block means at scales ``1, 2, ..., 2**(levels-1)``, each divided by its scale.

    Trailing rows/columns that do not fill a whole block are dropped at that level.
    """

    kind = "pyramid"

    def __init__(self, levels: int = 3):
        if levels < 1:
            raise InvalidParameterError(f"pyramid levels must be >= 1, got {levels}")
        self.levels = int(levels)

    def _features(self, xs):
        feats = []
        for level in range(self.levels):
            s = 2**level
            h = (xs.shape[-2] // s) * s
            w = (xs.shape[-1] // s) * s
            if h == 0 or w == 0:
                raise InvalidParameterError(f"image {xs.shape[-2:]} too small for {self.levels} pyramid levels")
            block = xs[..., :h, :w].reshape(xs.shape[:-2] + (h // s, s, w // s, s)).mean(axis=(-3, -1))
            feats.append(block.reshape(xs.shape[:-2] + (-1,)) / s)
        return np.concatenate(feats, axis=-1)

    def __call__(self, x, index=None):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        return self._features(x)

    def batch(self, xs, indices):
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim == 2:
            xs = xs[:, None, :]
        return self._features(xs)


class ExternalEmbedding(Embedding):
    """Precomputed features from an FT64 stack whose leading index is the sample key.

    ``phi2`` keys realization ``k`` as ``k * (N + L) + n`` for the ``y_minus``
    samples and ``k * (N + L) + N + l`` for the ``y_plus`` samples.
    """

    kind = "external"

    def __init__(self, path):
        self.path = Path(path)
        if not self.path.exists():
            raise FileNotFoundError(f"external embedding file not found: {self.path}")
        table = read_tensor(self.path)
        self.table = table.reshape(table.shape[0], -1)

    def __call__(self, x, index=None):
        if index is None or not 0 <= index < self.table.shape[0]:
            raise KeyError(f"no external embedding for sample key {index} in {self.path}")
        return self.table[index]

    def batch(self, xs, indices):
        return np.stack([self(None, i) for i in indices])


def make_embedding(kind: str = "identity", levels: int = 3, path=None) -> Embedding:
    if kind == "identity":
        return IdentityEmbedding()
    if kind == "pyramid":
        return PyramidEmbedding(levels)
    if kind == "external":
        return ExternalEmbedding(path)
    raise InvalidParameterError(f"unknown embedding {kind!r}; expected identity, pyramid or external")


def embed(embedding: Embedding, x, index=None) -> np.ndarray:
    return embedding(x, index)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScoreReport:
    label: str
    metric: str
    value: float
    alpha: float
    K: int
    N: int
    L: int
    master_seed: int
    partials: tuple[float, ...] = field(default=())

    @property
    def phi1(self):
        return self.value if self.metric == "phi1" else None

    @property
    def phi2(self):
        return self.value if self.metric == "phi2" else None

    @property
    def phi3_log(self):
        return self.value if self.metric == "phi3" else None

    def csv_row(self):
        return [self.label, self.metric, float(self.value), float(self.alpha), self.K, self.N, self.L, self.master_seed]


REPORT_HEADER = ["model", "metric", "value", "alpha", "K", "N", "L", "master_seed"]


def write_reports_csv(path, reports, master_seed) -> None:
    write_rows_csv(path, REPORT_HEADER, [r.csv_row() for r in reports], master_seed)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------

def _check_counts(**counts):
    for name, value in counts.items():
        if int(value) < 1:
            raise InvalidParameterError(f"{name} must be >= 1, got {value}")


def _map_ordered(fn, ks, threads, known=None, on_partial=None):
    """Evaluate ``fn(k)`` for each ``k`` (reusing ``known[k]`` when given), returning results in ``ks`` order."""
    known = known or {}
    todo = [k for k in ks if k not in known]
    results = dict(known)

    def run(k):
        try:
            return fn(k)
        except FissionError as exc:
            raise type(exc)(f"realization k={k}: {exc}") from exc

    if threads is None or threads <= 1 or len(todo) <= 1:
        for k in todo:
            results[k] = run(k)
            if on_partial is not None:
                on_partial(k, results[k])
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for k, value in zip(todo, pool.map(run, todo)):
                results[k] = value
                if on_partial is not None:
                    on_partial(k, value)
    return [results[k] for k in ks]


def _chain(config: SamplerConfig, seed: SeedSpec, k: int, side: int) -> SamplerConfig:
    return replace(config, chain_seed=seed.child(k, side))


def _split_k(y, model, alpha, seed, k, noises):
    if noises is not None:
        return split_with_noise(y, model.sigma, alpha, noises[k])
    return split(y, model.sigma, alpha, seed.child(k))


def predictive_log_terms(model: BayesianModel, y_plus, samples) -> np.ndarray:
    """Normalized ``log p(y_plus | x_n)`` per sample, under the ``y_plus`` noise level already set on ``model``."""
    return log_likelihood_batch(model, y_plus, samples)


def log_mean_exp(values) -> float:
    values = np.asarray(values, dtype=np.float64)
    return _kernels.log_sum_exp(values) - math.log(values.size)


def phi1(model: BayesianModel, y, alpha, K=10, N=100, sampler_config=None, seed=0, *,
         threads=1, known=None, on_partial=None, noises=None) -> ScoreReport:
    _check_counts(K=K, N=N)
    seed = resolve_seed(seed)
    config = sampler_config or SamplerConfig()
    y = np.asarray(y, dtype=np.float64)

    def partial(k):
        pair = _split_k(y, model, alpha, seed, k, noises)
        post = model.with_sigma(pair.sigma_minus)
        xs = sample_posterior(post, pair.y_minus, N, _chain(config, seed, k, 1)).samples
        return float(squared_residuals(model, pair.y_plus, xs).sum())

    partials = _map_ordered(partial, range(K), threads, known, on_partial)
    value = math.fsum(partials) / (K * N)
    return ScoreReport(model.label, "phi1", value, float(alpha), K, N, 0, seed.master_seed, tuple(partials))


def phi2(model: BayesianModel, y, alpha, K=10, N=20, L=20, embedding=None, sampler_config=None, seed=0, *,
         threads=1, known=None, on_partial=None, noises=None) -> ScoreReport:
    _check_counts(K=K, N=N, L=L)
    seed = resolve_seed(seed)
    config = sampler_config or SamplerConfig()
    embedding = embedding or IdentityEmbedding()
    y = np.asarray(y, dtype=np.float64)

    def partial(k):
        pair = _split_k(y, model, alpha, seed, k, noises)
        minus = sample_posterior(model.with_sigma(pair.sigma_minus), pair.y_minus, N, _chain(config, seed, k, 1))
        plus = sample_posterior(model.with_sigma(pair.sigma_plus), pair.y_plus, L, _chain(config, seed, k, 2))
        base = k * (N + L)
        em = embedding.batch(minus.samples, range(base, base + N))
        ep = embedding.batch(plus.samples, range(base + N, base + N + L))
        return _kernels.mean_pairwise_distance(em, ep) * (N * L)

    partials = _map_ordered(partial, range(K), threads, known, on_partial)
    value = math.fsum(partials) / (K * N * L)
    return ScoreReport(model.label, "phi2", value, float(alpha), K, N, L, seed.master_seed, tuple(partials))


def phi3_log(model: BayesianModel, y, alpha, K=10, N=100, sampler_config=None, seed=0, *,
             threads=1, known=None, on_partial=None, noises=None) -> ScoreReport:
    """``log (1/KN) sum_k sum_n p(y + c w_k | x_kn)``; per-``k`` partials are log-sum-exp values."""
    _check_counts(K=K, N=N)
    seed = resolve_seed(seed)
    config = sampler_config or SamplerConfig()
    y = np.asarray(y, dtype=np.float64)

    def partial(k):
        pair = _split_k(y, model, alpha, seed, k, noises)
        xs = sample_posterior(model.with_sigma(pair.sigma_minus), pair.y_minus, N, _chain(config, seed, k, 1)).samples
        terms = predictive_log_terms(model.with_sigma(pair.sigma_plus), pair.y_plus, xs)
        return _kernels.log_sum_exp(terms)

    partials = _map_ordered(partial, range(K), threads, known, on_partial)
    total = _kernels.log_sum_exp(np.array(partials))
    if not np.isfinite(total):
        raise UnderflowError("every predictive log term is -inf")
    value = total - math.log(K * N)
    return ScoreReport(model.label, "phi3", value, float(alpha), K, N, 0, seed.master_seed, tuple(partials))


def score(metric: str, model: BayesianModel, y, alpha, *, K=10, N=100, L=20, embedding=None,
          sampler_config=None, seed=0, threads=1, known=None, on_partial=None, noises=None) -> ScoreReport:
    common = dict(sampler_config=sampler_config, seed=seed, threads=threads, known=known, on_partial=on_partial)
    if metric == "phi1":
        return phi1(model, y, alpha, K, N, **common)
    if metric == "phi2":
        return phi2(model, y, alpha, K, N, L, embedding, **common)
    if metric == "phi3":
        return phi3_log(model, y, alpha, K, N, **common)
    raise InvalidParameterError(f"unknown metric {metric!r}; expected one of {METRICS}")
