import os
import subprocess
import sys
import textwrap

import numpy as np
import pytest

from oracles import lif_unroll
from spikerpe import _kernels as K

numba_only = pytest.mark.skipif(not K.NUMBA_AVAILABLE, reason="numba not installed")


def _pair(name):
    return getattr(K, f"{name}_numpy"), getattr(K, f"{name}_numba")


def _as_tuple(x):
    return x if isinstance(x, tuple) else (x,)


@numba_only
@pytest.mark.parametrize("name", ["xnor_counts", "dot_counts"])
def test_count_kernels_agree_exactly(rng, name):
    np_fn, nb_fn = _pair(name)
    q = rng.integers(0, 2, (3, 7, 13), dtype=np.int8)
    k = rng.integers(0, 2, (3, 9, 13), dtype=np.int8)
    np.testing.assert_array_equal(np_fn(q, k), nb_fn(q, k))


@numba_only
def test_hamming_table_agrees(rng):
    np_fn, nb_fn = _pair("hamming_table")
    codes = rng.integers(0, 1 << 20, 40).astype(np.int64)
    np.testing.assert_array_equal(np_fn(codes), nb_fn(codes))


@numba_only
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_lif_kernels_agree(rng, dtype):
    f = np.dtype(dtype).type
    cur = rng.normal(0.8, 1.0, (5, 40)).astype(dtype)
    fwd_np, fwd_nb = _pair("lif_forward")
    s_np, h_np = fwd_np(cur, f(2.0), f(1.0), f(0.0))
    s_nb, h_nb = fwd_nb(cur, f(2.0), f(1.0), f(0.0))
    np.testing.assert_array_equal(s_np, s_nb)
    np.testing.assert_allclose(h_np, h_nb, rtol=1e-6)
    assert h_nb.dtype == dtype
    g = rng.normal(size=cur.shape).astype(dtype)
    bwd_np, bwd_nb = _pair("lif_backward")
    args = (g, h_np, s_np, f(2.0), f(1.0), f(0.0), f(2.0))
    np.testing.assert_allclose(bwd_np(*args), bwd_nb(*args), rtol=1e-5, atol=1e-6)


@numba_only
@pytest.mark.parametrize("training", [True, False])
def test_bn_kernels_agree(rng, training):
    x = rng.normal(2.0, 3.0, (64, 6))
    gamma, beta = rng.normal(size=6), rng.normal(size=6)
    fwd_np, fwd_nb = _pair("bn_forward")
    a, b = fwd_np(x, gamma, beta, 1e-5), fwd_nb(x, gamma, beta, 1e-5)
    for u, v in zip(_as_tuple(a), _as_tuple(b)):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-12)
    _, xhat, _, _, inv_std = a
    g = rng.normal(size=x.shape)
    bwd_np, bwd_nb = _pair("bn_backward")
    for u, v in zip(_as_tuple(bwd_np(g, xhat, gamma, inv_std, training)), _as_tuple(bwd_nb(g, xhat, gamma, inv_std, training))):
        np.testing.assert_allclose(u, v, rtol=1e-10, atol=1e-12)


def test_lif_forward_matches_scalar_loop(rng):
    cur = rng.normal(0.8, 1.0, (7, 5))
    spikes, _ = K.lif_forward(cur, 2.0, 1.0, 0.0)
    for n in range(5):
        assert spikes[:, n].tolist() == lif_unroll(cur[:, n].tolist())


def test_dispatch_casts_inputs():
    out = K.xnor_counts(np.array([[[1, 0, 1]]], dtype=np.int64), np.array([[[1, 1, 1]]], dtype=bool))
    assert out.tolist() == [[[2]]]
    s, h = K.lif_forward(np.full((2, 3), 3, dtype=np.int32), 2.0, 1.0, 0.0)
    assert h.dtype == np.float64 and s[0].tolist() == [1.0, 1.0, 1.0]


def test_env_switch_selects_numpy_backend():
    code = textwrap.dedent(
        """
        import numpy as np
        from spikerpe import _kernels as K
        from spikerpe.attention import xnor_map
        q = np.array([[1, 0, 1, 1]], dtype=np.int8)
        print(K.backend(), int(xnor_map(q, q)[0, 0]))
        """
    )
    env = dict(os.environ, SPIKERPE_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "4"]


@numba_only
def test_default_backend_is_numba():
    if os.environ.get("SPIKERPE_NO_NUMBA"):
        pytest.skip("numpy path forced by environment")
    assert K.backend() == "numba"
