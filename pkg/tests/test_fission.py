import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fissioncv.errors import DimensionError, InvalidParameterError
from fissioncv.fission import c_alpha, split, split_with_noise
from fissioncv.tensors import SeedSpec, gaussian_noise


@pytest.mark.parametrize("alpha, expected", [(0.5, 1.0), (0.1, 1 / 3), (0.9, 3.0)])
def test_c_alpha_values(alpha, expected):
    assert c_alpha(alpha) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.2, 1.5, float("nan")])
def test_c_alpha_rejects(alpha):
    with pytest.raises(InvalidParameterError):
        c_alpha(alpha)


def test_split_symmetric_example():
    pair = split_with_noise([0.0, 0.0], 1.0, 0.5, [1.0, -1.0])
    np.testing.assert_array_equal(pair.y_plus, [1.0, -1.0])
    np.testing.assert_array_equal(pair.y_minus, [-1.0, 1.0])


vectors = arrays(np.float64, st.integers(1, 20), elements=st.floats(-1e3, 1e3))


@settings(max_examples=100, deadline=None)
@given(y=vectors, alpha=st.floats(1e-3, 1 - 1e-3), seed=st.integers(0, 2**32))
def test_reconstruction_identity(y, alpha, seed):
    pair = split(y, 0.7, alpha, SeedSpec(seed))
    scale = max(1.0, float(np.abs(y).max()), float(np.abs(pair.w).max()))
    np.testing.assert_allclose(pair.recombine(), y, rtol=0, atol=1e-12 * scale * max(1 / alpha, 1 / (1 - alpha)))


def test_zero_noise_and_reuse():
    y = np.array([1.0, 2.0, 3.0])
    pair = split_with_noise(y, 1.0, 0.3, np.zeros(3))
    np.testing.assert_array_equal(pair.y_plus, y)
    np.testing.assert_array_equal(pair.y_minus, y)
    a = split(y, 1.0, 0.3, SeedSpec(4))
    b = split_with_noise(y, 1.0, 0.3, a.w)
    assert a.y_plus.tobytes() == b.y_plus.tobytes()
    assert a.y_minus.tobytes() == b.y_minus.tobytes()


def test_small_alpha_norms():
    y = np.ones(50)
    w = gaussian_noise([50], 1.0, SeedSpec(2))
    alpha = 1e-3
    c = c_alpha(alpha)
    pair = split_with_noise(y, 1.0, alpha, w)
    assert np.linalg.norm(pair.y_plus - y) <= c * np.linalg.norm(w) * (1 + 1e-12)
    assert np.linalg.norm(pair.y_minus - y) == pytest.approx(np.linalg.norm(w) / c, rel=1e-12)
    assert np.linalg.norm(pair.y_plus - y) < 1.0 < 100.0 < np.linalg.norm(pair.y_minus - y)


def test_split_validation():
    with pytest.raises(InvalidParameterError):
        split([1.0], 0.0, 0.5, SeedSpec(0))
    with pytest.raises(InvalidParameterError):
        split([1.0], 1.0, 1.0, SeedSpec(0))
    with pytest.raises(DimensionError):
        split_with_noise([1.0, 2.0], 1.0, 0.5, [1.0])


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
def test_half_variances_and_independence(alpha):
    s = 10**5
    sigma = 0.5
    x_star = np.zeros(s)
    y = x_star + gaussian_noise([s], sigma, SeedSpec(1, (0,)))
    pair = split(y, sigma, alpha, SeedSpec(1, (1,)))
    var_plus = np.var(pair.y_plus - x_star)
    var_minus = np.var(pair.y_minus - x_star)
    assert var_plus == pytest.approx(sigma**2 / (1 - alpha), rel=0.02)
    assert var_minus == pytest.approx(sigma**2 / alpha, rel=0.02)
    assert pair.sigma_plus**2 == pytest.approx(sigma**2 / (1 - alpha))
    assert pair.sigma_minus**2 == pytest.approx(sigma**2 / alpha)
    r = np.corrcoef(pair.y_plus - x_star, pair.y_minus - x_star)[0, 1]
    assert abs(r) < 5 / np.sqrt(s)


def test_injected_variance_at_half():
    s = 10**5
    pair = split(np.zeros(s), 1.0, 0.5, SeedSpec(8))
    assert 0.98 <= np.var(pair.y_plus) <= 1.02
