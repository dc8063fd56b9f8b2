import json
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import logsumexp

from fissioncv import _kernels as kern

needs_numba = pytest.mark.skipif(not kern.NUMBA_AVAILABLE, reason="numba path not active")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 20), d=st.integers(1, 50))
def test_sq_residual_norms_paths_agree(seed, n, d):
    rng = np.random.default_rng(seed)
    t, b, w = rng.standard_normal(d), rng.standard_normal((n, d)), rng.random(d)
    ref = np.array([np.sum(w * (t - row) ** 2) for row in b])
    np.testing.assert_allclose(kern.sq_residual_norms_numpy(t, b, w), ref, rtol=1e-12)
    np.testing.assert_allclose(kern.sq_residual_norms(t, b, w), ref, rtol=1e-12)


@settings(max_examples=30, deadline=None)
@given(values=st.lists(st.floats(-1e5, 1e5), min_size=1, max_size=100))
def test_log_sum_exp_paths_agree(values):
    ref = float(logsumexp(values))
    assert kern.log_sum_exp_numpy(values) == pytest.approx(ref, rel=1e-12, abs=1e-12)
    assert kern.log_sum_exp(values) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_log_sum_exp_infinities():
    for impl in (kern.log_sum_exp, kern.log_sum_exp_numpy):
        assert impl([-np.inf, -np.inf]) == -np.inf
        assert impl([0.0, np.inf]) == np.inf


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), h=st.integers(2, 12), w=st.integers(2, 12), eps=st.floats(1e-3, 1.0))
def test_tv_paths_agree(seed, h, w, eps):
    x = np.random.default_rng(seed).standard_normal((h, w))
    v0, g0 = kern.tv_value_and_grad_numpy(x, eps)
    v1, g1 = kern.tv_value_and_grad(x, eps)
    assert v1 == pytest.approx(v0, rel=1e-12)
    np.testing.assert_allclose(g1, g0, rtol=1e-10, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 300), m=st.integers(1, 10), d=st.integers(1, 8))
def test_mean_pairwise_distance_paths_agree(seed, n, m, d):
    rng = np.random.default_rng(seed)
    a, b = rng.standard_normal((n, d)), rng.standard_normal((m, d))
    ref = np.mean(np.linalg.norm(a[:, None, :] - b[None, :, :], axis=-1))
    assert kern.mean_pairwise_distance_numpy(a, b) == pytest.approx(ref, rel=1e-12)
    assert kern.mean_pairwise_distance(a, b) == pytest.approx(ref, rel=1e-12)


@needs_numba
def test_default_backend_is_numba():
    assert kern.BACKEND == "numba"


@pytest.mark.parametrize("flag,expected", [("1", "numpy"), ("0", "numba")])
def test_env_flag_selects_backend(flag, expected):
    if expected == "numba" and not kern.NUMBA_AVAILABLE:
        pytest.skip("numba not installed")
    code = (
        "import json, numpy as np\n"
        "from fissioncv import _kernels as k\n"
        "from fissioncv.gaussian_oracle import ToyModel\n"
        "from fissioncv.scoring import phi1\n"
        "r = phi1(ToyModel(4, 1.0, 1.0).bayesian_model(), np.ones(4), 0.5, K=2, N=5, seed=1)\n"
        "print(json.dumps([k.BACKEND, r.value]))\n"
    )
    env = dict(os.environ, FISSIONCV_DISABLE_NUMBA=flag)
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    backend, value = json.loads(out.stdout)
    assert backend == expected
    from fissioncv.gaussian_oracle import ToyModel
    from fissioncv.scoring import phi1

    here = phi1(ToyModel(4, 1.0, 1.0).bayesian_model(), np.ones(4), 0.5, K=2, N=5, seed=1).value
    assert value == pytest.approx(here, rel=1e-12)
