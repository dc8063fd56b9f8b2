"""Experiment drivers: model selection by fission scores and percentile-threshold OOD tests."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from fissioncv.errors import CalibrationError, DimensionError, InvalidParameterError
from fissioncv.gaussian_oracle import ToyModel
from fissioncv.linops import BlurKernel, ValidMask, circulant, make_kernel, parse_kernel_spec
from fissioncv.models import BayesianModel, GaussianLikelihood, IidGaussianPrior
from fissioncv.reporting import read_rows_csv, write_rows_csv
from fissioncv.samplers import SamplerConfig
from fissioncv.scoring import Embedding, score
from fissioncv.tensors import gaussian_noise, resolve_seed

DESK_CANDIDATES = ("gaussian:2", "gaussian:2.5", "uniform:3", "laplace:0.4", "moffat:0.5,1")


@dataclass(frozen=True)
class ScoreParams:
    """Estimator settings shared by every candidate or population item."""

    alpha: float = 0.5
    K: int = 10
    N: int = 100
    L: int = 20
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    embedding: Embedding | None = None
    master_seed: int = 0
    threads: int = 1

    def run(self, metric, model, y, seed):
        return score(metric, model, y, self.alpha, K=self.K, N=self.N, L=self.L, embedding=self.embedding,
                     sampler_config=self.sampler, seed=seed, threads=self.threads)


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RankedCandidate:
    label: str
    score: float
    rank: int
    tie: bool
    index: int


def rank_scores(labels, scores, metric) -> list[RankedCandidate]:
    """Ascending for phi1/phi2, descending for phi3; stable on candidate order; ties flagged."""
    sign = -1.0 if metric == "phi3" else 1.0
    order = sorted(range(len(scores)), key=lambda i: (sign * scores[i], i))
    counts = {}
    for s in scores:
        counts[s] = counts.get(s, 0) + 1
    return [
        RankedCandidate(labels[i], float(scores[i]), r + 1, counts[scores[i]] > 1, i)
        for r, i in enumerate(order)
    ]


def _check_candidates(candidates):
    if len(candidates) < 2:
        raise InvalidParameterError(f"need at least 2 candidates, got {len(candidates)}")
    shape = candidates[0].op.shape
    for c in candidates[1:]:
        if c.op.shape != shape:
            raise DimensionError(f"candidate {c.label!r} has shape {c.op.shape}, expected {shape}")
    return shape


def few_shot_select(candidates, measurements, metric, params: ScoreParams) -> list[RankedCandidate]:
    """Rank candidates by their score averaged over ``measurements``.

    Measurement ``j`` uses seed path ``(j,)`` for every candidate, so all
    candidates see the same injected noise and chain streams.
    """
    shape = _check_candidates(candidates)
    measurements = list(measurements)
    if not measurements:
        raise InvalidParameterError("need at least one measurement")
    root = resolve_seed(params.master_seed)
    totals = np.zeros(len(candidates))
    for j, y in enumerate(measurements):
        y = np.asarray(y, dtype=np.float64)
        if y.shape != shape:
            raise DimensionError(f"measurement {j} has shape {y.shape}, expected {shape}")
        for i, model in enumerate(candidates):
            totals[i] += params.run(metric, model, y, root.child(j)).value
    means = [float(t / len(measurements)) for t in totals]
    return rank_scores([c.label for c in candidates], means, metric)


def select_model(candidates, y, metric, params: ScoreParams) -> list[RankedCandidate]:
    return few_shot_select(candidates, [y], metric, params)


def kernel_candidates(kernels, shape, sigma, prior, *, border=None) -> list[BayesianModel]:
    """One model per kernel sharing ``prior``; the valid crop spans the widest kernel's half-support."""
    kernels = [make_kernel(*k) if not isinstance(k, BlurKernel) else k for k in kernels]
    valid = ValidMask(max(k.half_support for k in kernels) if border is None else border, shape)
    return [BayesianModel(prior, GaussianLikelihood(circulant(k, shape), sigma, valid), k.label) for k in kernels]


def synthetic_image(shape=(64, 64), seed=0, *, n_shapes=6) -> np.ndarray:
    """Smooth test image in [0, 1]: a low-pass random field plus soft-edged disks."""
    rng = resolve_seed(seed).generator()
    h, w = shape
    noise = rng.standard_normal(shape)
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.fftfreq(w)[None, :]
    field_ = np.fft.ifft2(np.fft.fft2(noise) * np.exp(-(fx**2 + fy**2) / (2 * 0.04**2))).real
    field_ = (field_ - field_.min()) / (np.ptp(field_) + 1e-12)
    img = 0.5 * field_
    yy, xx = np.mgrid[0:h, 0:w]
    for _ in range(n_shapes):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        radius = rng.uniform(0.06, 0.2) * min(h, w)
        level = rng.uniform(-0.4, 0.4)
        dist = np.hypot(yy - cy, xx - cx)
        img += level / (1.0 + np.exp((dist - radius) / 1.0))
    img -= img.min()
    return img / (img.max() + 1e-12)


def blurred_measurement(image, kernel: BlurKernel, sigma, seed) -> np.ndarray:
    op = circulant(kernel, image.shape)
    return op.apply(image) + gaussian_noise(image.shape, sigma, seed)


DESK_SIGMA = 0.1
DESK_SIGMA_X = 0.15


def desk_measurements(seed, n_shots=1, truth="gaussian:2", *, shape=(64, 64), sigma=DESK_SIGMA):
    """Zero-mean synthetic images blurred by ``truth``; shot ``j`` uses seed paths ``(0, j)`` and ``(1, j)``.

    Shot 0 is the same for every ``n_shots``, so few-shot runs extend the single-shot one.
    """
    root = resolve_seed(seed)
    kernel = parse_kernel_spec(truth) if isinstance(truth, str) else truth
    out = []
    for j in range(n_shots):
        img = synthetic_image(shape, root.child(0, j))
        out.append(blurred_measurement(img - img.mean(), kernel, sigma, root.child(1, j)))
    return out


def kernel_selection_trial(seed, n_shots=1, candidates=DESK_CANDIDATES, *, metric="phi1", params=None,
                           shape=(64, 64), sigma=DESK_SIGMA, sigma_x=DESK_SIGMA_X):
    """Rank ``candidates`` on ``n_shots`` measurements generated with ``candidates[0]``.

    Uses the i.i.d. Gaussian prior and the exact sampler.
    """
    kernels = [parse_kernel_spec(c) if isinstance(c, str) else c for c in candidates]
    models = kernel_candidates(kernels, shape, sigma, IidGaussianPrior(sigma_x))
    params = params or ScoreParams(master_seed=int(resolve_seed(seed).master_seed))
    return few_shot_select(models, desk_measurements(seed, n_shots, kernels[0], shape=shape, sigma=sigma),
                           metric, params)


# ---------------------------------------------------------------------------
# OOD testing
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OodTestSpec:
    statistic: str
    reference_scores: tuple[float, ...]
    percentile: float
    threshold: float


@dataclass(frozen=True)
class ErrorRates:
    type1: float
    power: float
    n_id: int
    n_ood: int
    n_id_rejected: int
    n_ood_rejected: int


def nearest_rank(scores, percentile) -> float:
    ordered = sorted(float(s) for s in scores)
    rank = math.ceil(Fraction(str(percentile)) * len(ordered) / 100)
    return ordered[max(rank, 1) - 1]


def calibrate_threshold(reference_scores, percentile=95.0, statistic="phi2") -> OodTestSpec:
    """Nearest-rank percentile threshold; needs at least ``100 / (100 - p)`` references."""
    scores = tuple(float(s) for s in reference_scores)
    if not 0 < percentile < 100:
        raise CalibrationError(f"percentile must be in (0, 100), got {percentile}")
    needed = math.ceil(100 / (100 - Fraction(str(percentile))))
    if len(scores) < needed:
        raise CalibrationError(f"{len(scores)} reference scores; percentile {percentile} needs at least {needed}")
    if not all(math.isfinite(s) for s in scores):
        raise CalibrationError("reference scores must be finite")
    return OodTestSpec(statistic, scores, float(percentile), nearest_rank(scores, percentile))


def ood_decide(spec: OodTestSpec, score_value: float) -> str:
    return "reject" if score_value > spec.threshold else "accept"


def error_rates(spec: OodTestSpec, labeled_scores) -> ErrorRates:
    labeled = [(float(s), bool(is_ood)) for s, is_ood in labeled_scores]
    n_id = sum(1 for _, o in labeled if not o)
    n_ood = len(labeled) - n_id
    if n_id == 0 or n_ood == 0:
        raise CalibrationError(f"error rates need both classes, got {n_id} ID and {n_ood} OOD items")
    rej_id = sum(1 for s, o in labeled if not o and ood_decide(spec, s) == "reject")
    rej_ood = sum(1 for s, o in labeled if o and ood_decide(spec, s) == "reject")
    return ErrorRates(rej_id / n_id, rej_ood / n_ood, n_id, n_ood, rej_id, rej_ood)


ITEM_HEADER = ["item_id", "label", "metric", "value"]
RATES_HEADER = ["alpha", "type1", "power", "n_id", "n_ood"]
RANKING_HEADER = ["candidate", "score", "rank"]


def write_item_scores(path, items, metric, master_seed) -> None:
    """``items`` are ``(item_id, label, value)`` with label ``reference``, ``id`` or ``ood``."""
    write_rows_csv(path, ITEM_HEADER, [(i, lab, metric, float(v)) for i, lab, v in items], master_seed)


def error_rates_from_csv(path, percentile=95.0) -> ErrorRates:
    rows = read_rows_csv(path)
    ref = [float(r["value"]) for r in rows if r["label"] == "reference"]
    spec = calibrate_threshold(ref, percentile, rows[0]["metric"] if rows else "phi2")
    labeled = [(float(r["value"]), r["label"] == "ood") for r in rows if r["label"] in ("id", "ood")]
    return error_rates(spec, labeled)


@dataclass(frozen=True)
class OodPopulations:
    """A fixed model plus reference measurements and labeled test measurements."""

    model: BayesianModel
    reference: tuple
    test: tuple  # (y, is_ood) pairs


def score_population(model, measurements, metric, params: ScoreParams, offset=0):
    """Per-item scores; item ``i`` uses seed path ``(offset + i,)``."""
    root = resolve_seed(params.master_seed)
    return [params.run(metric, model, y, root.child(offset + i)).value for i, y in enumerate(measurements)]


def run_ood_test(populations: OodPopulations, metric, params: ScoreParams, percentile=95.0):
    """Returns ``(spec, rates, items)``; items are ``(item_id, label, value)`` rows."""
    n_ref = len(populations.reference)
    ref_scores = score_population(populations.model, populations.reference, metric, params)
    test_ys = [y for y, _ in populations.test]
    test_scores = score_population(populations.model, test_ys, metric, params, offset=n_ref)
    spec = calibrate_threshold(ref_scores, percentile, metric)
    labels = [bool(o) for _, o in populations.test]
    rates = error_rates(spec, list(zip(test_scores, labels)))
    items = [(i, "reference", s) for i, s in enumerate(ref_scores)]
    items += [(n_ref + i, "ood" if o else "id", s) for i, (s, o) in enumerate(zip(test_scores, labels))]
    return spec, rates, items


def alpha_sweep(metric, alphas, populations: OodPopulations, params: ScoreParams, percentile=95.0):
    """Rows ``(alpha, type1, power, n_id, n_ood)``, recalibrating at each ``alpha``."""
    alphas = list(alphas)
    if not alphas:
        raise InvalidParameterError("alpha list is empty")
    rows = []
    for a in alphas:
        if not 0 < a < 1:
            raise InvalidParameterError(f"alpha must lie in (0, 1), got {a}")
        p = ScoreParams(a, params.K, params.N, params.L, params.sampler, params.embedding, params.master_seed,
                        params.threads)
        _, rates, _ = run_ood_test(populations, metric, p, percentile)
        rows.append((float(a), rates.type1, rates.power, rates.n_id, rates.n_ood))
    return rows


def toy_populations(toy: ToyModel, n_reference, n_id, n_ood, ood_sigma_x, seed) -> OodPopulations:
    """Toy measurements: reference and ID drawn with ``toy.sigma_x``, OOD with ``ood_sigma_x``."""
    root = resolve_seed(seed)
    ref = tuple(toy.draw_measurement(root.child(0, i)) for i in range(n_reference))
    test = [(toy.draw_measurement(root.child(1, i)), False) for i in range(n_id)]
    test += [(toy.draw_measurement(root.child(2, i), sigma_x_data=ood_sigma_x), True) for i in range(n_ood)]
    return OodPopulations(toy.bayesian_model(), ref, tuple(test))
