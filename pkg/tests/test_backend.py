"""The numba kernels and their numpy twins agree."""

import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from schauderlab import _kernels as K

pytestmark = pytest.mark.skipif(not K.HAVE_NUMBA, reason="numba not installed")

shapes2 = st.tuples(st.integers(3, 14), st.integers(3, 14))


def _arr(seed, shape):
    return np.random.default_rng(seed).standard_normal(shape)


@given(st.integers(0, 2 ** 31), st.integers(5, 14), st.integers(1, 3))
def test_box_means_bitwise(seed, m, k):
    if 2 * k + 1 > m:
        k = (m - 1) // 2
    a = _arr(seed, (m, m))
    x = K.box_means(a, k, backend="numba")
    y = K.box_means(a, k, backend="numpy")
    assert np.array_equal(x, y)
    # direct oracle
    w = 2 * k + 1
    ref = np.array([[a[i:i + w, j:j + w].mean() for j in range(m - w + 1)] for i in range(m - w + 1)])
    assert np.allclose(x, ref, atol=1e-13)


def test_box_means_3d():
    a = _arr(1, (7, 7, 7))
    assert np.array_equal(K.box_means(a, 2, backend="numba"), K.box_means(a, 2, backend="numpy"))


@given(st.integers(0, 2 ** 31), st.integers(1, 3))
def test_box_stats_agree(seed, k):
    a = _arr(seed, (11, 11, 2))
    o1, s1 = K.box_stats(a, 2, k, backend="numba")
    o2, s2 = K.box_stats(a, 2, k, backend="numpy")
    assert np.allclose(o1, o2, rtol=1e-12, atol=1e-14)
    assert np.allclose(s1, s2, rtol=1e-12, atol=1e-14)


@given(st.integers(0, 2 ** 31), st.sampled_from([1, 3, 5]))
def test_convolve_agree(seed, w):
    from scipy import signal
    a = _arr(seed, (12, 12))
    ker = _arr(seed + 1, (w, w))
    x = K.convolve_direct(a, ker, backend="numba")
    y = K.convolve_direct(a, ker, backend="numpy")
    assert np.allclose(x, y, rtol=1e-12, atol=1e-13)
    assert np.allclose(x, signal.convolve(a, ker, mode="same"), atol=1e-12)


@given(st.integers(0, 2 ** 31), st.floats(0.1, 0.9))
def test_holder_offsets_agree(seed, alpha):
    v = _arr(seed, (9, 9, 2))
    offs = K.half_space_offsets((9, 9))
    x = K.holder_over_offsets(v, 2, 0.125, alpha, offs, backend="numba")
    y = K.holder_over_offsets(v, 2, 0.125, alpha, offs, backend="numpy")
    assert x == pytest.approx(y, rel=1e-13)


def test_half_space_offsets_cover_each_pair_once():
    offs = K.half_space_offsets((4, 4))
    assert len(offs) == (7 * 7 - 1) // 2
    s = {tuple(o) for o in offs}
    assert not any(tuple(-np.array(o)) in s for o in s)


@pytest.mark.parametrize("value,expect", [("numpy", "numpy"), ("NUMBA", "numba"), ("bogus", "numba")])
def test_env_var_selects_backend(value, expect):
    env = dict(os.environ, SCHAUDERLAB_BACKEND=value)
    r = subprocess.run([sys.executable, "-c", "from schauderlab import _kernels; print(_kernels.BACKEND)"],
                       capture_output=True, text=True, env=env)
    assert r.stdout.strip() == expect
