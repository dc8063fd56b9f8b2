"""Hot numeric kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports and ``FISSIONCV_DISABLE_NUMBA`` is
unset (or ``0``). Setting the variable to ``1`` before import forces the numpy
path everywhere. Both paths take and return float64 arrays; results agree to
floating-point reassociation error, not bit-for-bit.

Public names resolve to the selected implementation:

    sq_residual_norms(target, batch, weights)   -> (N,)
    log_sum_exp(values)                          -> float
    tv_value_and_grad(x, eps)                    -> (float, ndarray)
    mean_pairwise_distance(a, b)                 -> float
"""

import os

import numpy as np

_DISABLED = os.environ.get("FISSIONCV_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError("numba disabled by FISSIONCV_DISABLE_NUMBA")
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:
    NUMBA_AVAILABLE = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


# ---------------------------------------------------------------------------
# numpy reference path
# ---------------------------------------------------------------------------

def sq_residual_norms_numpy(target, batch, weights):
    """Per-row ``sum(weights * (target - batch[n])**2)`` for a (N, d) batch."""
    diff = batch - target[None, :]
    return np.einsum("nd,nd,d->n", diff, diff, weights)


def log_sum_exp_numpy(values):
    values = np.asarray(values, dtype=np.float64)
    top = values.max()
    if not np.isfinite(top):
        return float(top)
    return float(top + np.log(np.exp(values - top).sum()))


def tv_value_and_grad_numpy(x, eps):
    """Charbonnier TV ``sum sqrt(dx^2 + dy^2 + eps^2)`` on a periodic 2-D grid, and its gradient."""
    dx = np.roll(x, -1, axis=1) - x
    dy = np.roll(x, -1, axis=0) - x
    mag = np.sqrt(dx * dx + dy * dy + eps * eps)
    px = dx / mag
    py = dy / mag
    grad = np.roll(px, 1, axis=1) - px + np.roll(py, 1, axis=0) - py
    return float(mag.sum()), grad


def mean_pairwise_distance_numpy(a, b, block=256):
    """Mean Euclidean distance over all (row of a, row of b) pairs, computed blockwise."""
    total = 0.0
    for start in range(0, a.shape[0], block):
        chunk = a[start:start + block]
        diff = chunk[:, None, :] - b[None, :, :]
        total += np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)).sum()
    return total / (a.shape[0] * b.shape[0])


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

@njit(cache=True)
def _sq_residual_norms_jit(target, batch, weights):
    n, d = batch.shape
    out = np.empty(n)
    for i in range(n):
        acc = 0.0
        for j in range(d):
            r = target[j] - batch[i, j]
            acc += weights[j] * r * r
        out[i] = acc
    return out


@njit(cache=True)
def _log_sum_exp_jit(values):
    top = -np.inf
    for v in values:
        if v > top:
            top = v
    if not np.isfinite(top):
        return top
    acc = 0.0
    for v in values:
        acc += np.exp(v - top)
    return top + np.log(acc)


@njit(cache=True)
def _tv_value_and_grad_jit(x, eps):
    h, w = x.shape
    grad = np.zeros_like(x)
    eps2 = eps * eps
    value = 0.0
    for i in range(h):
        ip = i + 1 if i + 1 < h else 0
        for j in range(w):
            jp = j + 1 if j + 1 < w else 0
            dx = x[i, jp] - x[i, j]
            dy = x[ip, j] - x[i, j]
            mag = np.sqrt(dx * dx + dy * dy + eps2)
            value += mag
            px = dx / mag
            py = dy / mag
            grad[i, j] -= px + py
            grad[i, jp] += px
            grad[ip, j] += py
    return value, grad


@njit(cache=True)
def _mean_pairwise_distance_jit(a, b):
    n, d = a.shape
    m = b.shape[0]
    total = 0.0
    for i in range(n):
        for j in range(m):
            acc = 0.0
            for k in range(d):
                r = a[i, k] - b[j, k]
                acc += r * r
            total += np.sqrt(acc)
    return total / (n * m)


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


if NUMBA_AVAILABLE:
    def sq_residual_norms(target, batch, weights):
        return _sq_residual_norms_jit(_c(target), _c(batch), _c(weights))

    def log_sum_exp(values):
        return float(_log_sum_exp_jit(np.ascontiguousarray(values, dtype=np.float64)))

    def tv_value_and_grad(x, eps):
        value, grad = _tv_value_and_grad_jit(np.ascontiguousarray(x, dtype=np.float64), float(eps))
        return float(value), grad

    def mean_pairwise_distance(a, b):
        return float(_mean_pairwise_distance_jit(_c(a), _c(b)))
else:
    sq_residual_norms = sq_residual_norms_numpy
    log_sum_exp = log_sum_exp_numpy
    tv_value_and_grad = tv_value_and_grad_numpy
    mean_pairwise_distance = mean_pairwise_distance_numpy

BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"
