"""Linear forward operators diagonal in the unitary DFT, blur kernels, and valid crops.

Every operator here satisfies ``A = F* diag(gains) F`` with ``F`` the unitary
DFT over the image axes, so ``A^T A`` has eigenvalues ``|gains|^2``. That
factorization is what the exact conjugate sampler relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from fissioncv.errors import DimensionError, InvalidParameterError, UnsupportedError
from fissioncv.tensors import resolve_seed

DEFAULT_SUPPORT = 25
KERNEL_FAMILIES = ("gaussian", "moffat", "laplace", "uniform")


def fft_unitary(x, ndim):
    axes = tuple(range(-ndim, 0))
    return np.fft.fftn(x, axes=axes, norm="ortho")


def ifft_unitary(x, ndim):
    axes = tuple(range(-ndim, 0))
    return np.fft.ifftn(x, axes=axes, norm="ortho")


# ---------------------------------------------------------------------------
# Kernels
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlurKernel:
    family: str
    params: tuple[float, ...]
    support: int
    values: np.ndarray = field(repr=False, compare=False)

    @property
    def half_support(self) -> int:
        return self.support // 2

    @property
    def label(self) -> str:
        return f"{self.family}({','.join(f'{p:g}' for p in self.params)})"


def kernel_profile(family, params, xx, yy, *, literal_laplace=False):
    """Unnormalized kernel formula evaluated on integer offsets ``(xx, yy)``."""
    if family == "gaussian":
        (sigma,) = params
        return np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
    if family == "moffat":
        sigma, mu = params
        return (sigma**2 * (xx**2 + yy**2) / mu + 1.0) ** (-(mu / 2.0 + 1.0))
    if family == "laplace":
        (sigma,) = params
        if literal_laplace:
            # as tabulated: grows with |y|
            return np.exp(sigma * (-np.abs(xx) + np.abs(yy)))
        return np.exp(-sigma * (np.abs(xx) + np.abs(yy)))
    if family == "uniform":
        (s,) = params
        return ((np.abs(xx) <= s) & (np.abs(yy) <= s)).astype(np.float64)
    raise InvalidParameterError(f"unknown kernel family {family!r}; expected one of {KERNEL_FAMILIES}")


def _check_kernel_params(family, params):
    expected = {"gaussian": 1, "moffat": 2, "laplace": 1, "uniform": 1}
    if family not in expected:
        raise InvalidParameterError(f"unknown kernel family {family!r}; expected one of {KERNEL_FAMILIES}")
    if len(params) != expected[family]:
        raise InvalidParameterError(f"{family} kernel takes {expected[family]} parameter(s), got {len(params)}")
    if family == "uniform":
        if params[0] < 1:
            raise InvalidParameterError(f"uniform half-width s must be >= 1, got {params[0]}")
    elif any(not p > 0 for p in params):
        raise InvalidParameterError(f"{family} kernel parameters must be > 0, got {params}")


def make_kernel(family: str, params, support: int = DEFAULT_SUPPORT, *, literal_laplace=False) -> BlurKernel:
    """Evaluate a kernel family on a ``support x support`` grid centred at 0 and normalize to unit sum."""
    params = tuple(float(p) for p in np.atleast_1d(params))
    _check_kernel_params(family, params)
    if support < 1 or support % 2 == 0:
        raise InvalidParameterError(f"kernel support must be a positive odd integer, got {support}")
    r = support // 2
    offsets = np.arange(-r, r + 1, dtype=np.float64)
    # x indexes columns, y indexes rows
    yy, xx = np.meshgrid(offsets, offsets, indexing="ij")
    raw = kernel_profile(family, params, xx, yy, literal_laplace=literal_laplace)
    total = raw.sum()
    if not (np.isfinite(total) and total > 0):
        raise InvalidParameterError(f"{family}{params} kernel does not normalize on support {support}")
    values = raw / total
    values.flags.writeable = False
    return BlurKernel(family, params, int(support), values)


def parse_kernel_spec(spec: str, support: int = DEFAULT_SUPPORT) -> BlurKernel:
    """Parse ``"gaussian:2"`` / ``"moffat:0.5,1"`` style strings."""
    family, _, rest = spec.partition(":")
    if not rest:
        raise InvalidParameterError(f"kernel spec {spec!r} must look like family:p1[,p2]")
    try:
        params = [float(v) for v in rest.split(",")]
    except ValueError:
        raise InvalidParameterError(f"non-numeric kernel parameters in {spec!r}") from None
    return make_kernel(family.strip().lower(), params, support)


def delta_kernel() -> BlurKernel:
    values = np.ones((1, 1))
    values.flags.writeable = False
    return BlurKernel("delta", (), 1, values)


# ---------------------------------------------------------------------------
# Operators
# ---------------------------------------------------------------------------

class LinearOperator:
    """Fourier-diagonal operator ``A = F* diag(gains) F`` on arrays of ``shape``.

    ``kind`` is ``"identity"``, ``"circulant"`` or ``"masked_fourier"``.
    Input and output shapes coincide. For ``masked_fourier`` the output is the
    zero-filled image ``F* M F x``: a unitary change of coordinates of the
    sampled coefficients ``M F x``, kept real by a Hermitian-symmetric mask.
    """

    def __init__(self, kind, shape, gains=None, *, kernel=None, mask=None):
        self.kind = kind
        self.shape = tuple(int(d) for d in shape)
        self.kernel = kernel
        self.mask = mask
        if gains is not None:
            gains = np.asarray(gains)
            gains.flags.writeable = False
        self.gains = gains

    @property
    def n_in(self) -> int:
        return math.prod(self.shape)

    n_out = n_in

    @property
    def fourier_diagonal(self) -> bool:
        return True

    def spectrum(self) -> np.ndarray:
        """Per-frequency complex gains in unshifted FFT order."""
        if self.gains is None:
            return np.ones(self.shape, dtype=np.complex128)
        return self.gains

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[x.ndim - len(self.shape):] != self.shape:
            raise DimensionError(f"operator expects trailing shape {self.shape}, got {x.shape}")
        return x

    def apply(self, x) -> np.ndarray:
        x = self._check(x)
        if self.kind == "identity":
            return x.copy()
        out = ifft_unitary(self.gains * fft_unitary(x, len(self.shape)), len(self.shape))
        return out.real

    def apply_adjoint(self, y) -> np.ndarray:
        y = self._check(y)
        if self.kind == "identity":
            return y.copy()
        out = ifft_unitary(np.conj(self.gains) * fft_unitary(y, len(self.shape)), len(self.shape))
        return out.real

    def __repr__(self):
        extra = f", kernel={self.kernel.label}" if self.kernel is not None else ""
        return f"LinearOperator({self.kind!r}, shape={self.shape}{extra})"


def identity(shape) -> LinearOperator:
    shape = tuple(int(d) for d in np.atleast_1d(shape))
    return LinearOperator("identity", shape)


def embed_kernel(kernel: np.ndarray, shape) -> np.ndarray:
    """Place a centred odd kernel on a periodic grid of ``shape`` with its centre at the origin.

    Entries that fall outside the grid wrap around (periodic aliasing).
    """
    kh, kw = kernel.shape
    out = np.zeros(shape)
    rows = (np.arange(kh) - kh // 2) % shape[0]
    cols = (np.arange(kw) - kw // 2) % shape[1]
    np.add.at(out, (rows[:, None], cols[None, :]), kernel)
    return out


def circulant(kernel: BlurKernel, shape) -> LinearOperator:
    """Periodic convolution with ``kernel``; gains are the DFT of the centred, wrapped kernel."""
    shape = tuple(int(d) for d in shape)
    if len(shape) != 2:
        raise DimensionError(f"circulant blur needs a 2-D image shape, got {shape}")
    # unnormalized DFT: these are the convolution eigenvalues (delta kernel -> all ones)
    gains = np.fft.fft2(embed_kernel(kernel.values, shape))
    return LinearOperator("circulant", shape, gains, kernel=kernel)


def masked_fourier(mask) -> LinearOperator:
    """Fourier sub-sampling with a 0/1 mask in unshifted FFT order."""
    mask = np.asarray(mask, dtype=np.float64)
    if not np.all((mask == 0) | (mask == 1)):
        raise InvalidParameterError("Fourier mask entries must be 0 or 1")
    flipped = np.roll(np.flip(mask, axis=tuple(range(mask.ndim))), 1, axis=tuple(range(mask.ndim)))
    if not np.array_equal(mask, flipped):
        raise InvalidParameterError("Fourier mask must be Hermitian-symmetric so outputs stay real")
    mask = mask.copy()
    mask.flags.writeable = False
    return LinearOperator("masked_fourier", mask.shape, mask.astype(np.complex128), mask=mask)


def spectral_norm_sq(op: LinearOperator) -> float:
    """Largest eigenvalue of ``A^T A``."""
    if not getattr(op, "fourier_diagonal", False):
        raise UnsupportedError(f"spectral norm only available for Fourier-diagonal operators, got {op!r}")
    if op.kind == "identity":
        return 1.0
    return float(np.max(np.abs(op.gains) ** 2))


def make_mri_mask(shape, acceleration: float, center_fraction: float, seed) -> LinearOperator:
    """Row (phase-encode) sub-sampling mask.

    Keeps every row with ``|f| <= floor(center_fraction * H / 2)`` and then draws
    symmetric row pairs ``(f, -f)`` without replacement with Gaussian weights
    in ``f`` until ``round(H / R)`` rows are kept. The Nyquist row fills an odd
    remainder.
    """
    shape = tuple(int(d) for d in shape)
    if len(shape) != 2:
        raise DimensionError(f"MRI mask needs a 2-D shape, got {shape}")
    if not acceleration >= 1:
        raise InvalidParameterError(f"acceleration R must be >= 1, got {acceleration}")
    if not 0 < center_fraction <= 1:
        raise InvalidParameterError(f"center_fraction must be in (0, 1], got {center_fraction}")
    h, w = shape
    target = int(round(h / acceleration))
    freqs = np.fft.fftfreq(h, d=1.0 / h).astype(int)
    half_band = int(math.floor(center_fraction * h / 2))
    keep = np.abs(freqs) <= half_band
    n_center = int(keep.sum())
    if n_center > target:
        raise InvalidParameterError(
            f"centre band keeps {n_center} rows, more than the {target} allowed by R={acceleration}"
        )
    remaining = target - n_center
    nyquist = h // 2 if h % 2 == 0 else None
    # candidate pairs are identified by their positive frequency
    pair_freqs = np.array([f for f in range(1, (h + 1) // 2) if f > half_band], dtype=int)
    n_pairs = min(remaining // 2, len(pair_freqs))
    rng = resolve_seed(seed).generator()
    if n_pairs > 0:
        width = h / 4.0
        weights = np.exp(-(pair_freqs.astype(float) ** 2) / (2.0 * width**2))
        chosen = rng.choice(pair_freqs, size=n_pairs, replace=False, p=weights / weights.sum())
        for f in chosen:
            keep[f % h] = True
            keep[(-f) % h] = True
    if remaining - 2 * n_pairs >= 1 and nyquist is not None and not keep[nyquist]:
        keep[nyquist] = True
    mask = np.repeat(keep[:, None], w, axis=1).astype(np.float64)
    return masked_fourier(mask)


# ---------------------------------------------------------------------------
# Valid crop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidMask:
    border: int
    shape: tuple[int, ...]

    def __post_init__(self):
        if self.border < 0:
            raise InvalidParameterError(f"border must be nonnegative, got {self.border}")
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if any(2 * self.border >= d for d in self.shape):
            raise DimensionError(f"border {self.border} leaves no interior in shape {self.shape}")

    @classmethod
    def for_kernels(cls, kernels, shape) -> ValidMask:
        return cls(max(k.half_support for k in kernels), shape)

    def weights(self) -> np.ndarray:
        """0/1 array over ``shape`` selecting the interior."""
        w = np.zeros(self.shape)
        w[tuple(slice(self.border, d - self.border) for d in self.shape)] = 1.0
        return w

    @property
    def count(self) -> int:
        return math.prod(d - 2 * self.border for d in self.shape)


def valid_crop(x, mask: ValidMask) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    nd = len(mask.shape)
    if x.shape[x.ndim - nd:] != mask.shape:
        raise DimensionError(f"crop expects trailing shape {mask.shape}, got {x.shape}")
    b = mask.border
    index = (Ellipsis,) + tuple(slice(b, d - b) for d in mask.shape)
    return x[index]


__all__ = [
    "BlurKernel",
    "DEFAULT_SUPPORT",
    "LinearOperator",
    "ValidMask",
    "circulant",
    "delta_kernel",
    "embed_kernel",
    "identity",
    "make_kernel",
    "make_mri_mask",
    "masked_fourier",
    "parse_kernel_spec",
    "spectral_norm_sq",
    "valid_crop",
]
