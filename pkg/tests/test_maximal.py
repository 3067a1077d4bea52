import numpy as np
import pytest
from hypothesis import given, strategies as st

from schauderlab import _kernels
from schauderlab.acceptance import hl_brute_force
from schauderlab.errors import InvalidArgument, UnderResolvedError
from schauderlab.field import GridField, sample
from schauderlab.grid import Cube, GridSpec
from schauderlab.maximal import (BumpDictionary, default_dictionary, eta, eta_derivative, eta_integral,
                                 grand_maximal, hl_maximal, hl_radii, mollifier, mollifier_constant,
                                 radius_ladder, smooth_maximal, standard_dictionary)

SPEC = GridSpec(Cube.unit(2), 33)
seeds = st.integers(0, 2 ** 31)


def _rand(seed, spec=SPEC):
    return GridField(spec, np.random.default_rng(seed).standard_normal(spec.shape))


def test_eta_integral_oracle():
    # 30-digit adaptive quadrature of exp(-1/(1-t^2)) on (-1, 1)
    assert eta_integral() == pytest.approx(0.443993816168079437823, rel=1e-13)
    assert mollifier_constant(2) == pytest.approx(0.443993816168079437823 ** -2, rel=1e-12)


def test_eta_derivatives_finite_difference():
    t = np.linspace(-0.9, 0.9, 37)
    d = 1e-5
    for k in range(3):
        fd = (eta_derivative(t + d, k) - eta_derivative(t - d, k)) / (2 * d)
        assert np.allclose(eta_derivative(t, k + 1), fd, rtol=1e-5, atol=1e-7)
    assert np.all(eta(np.array([-1.0, 1.0, 2.0])) == 0)


def test_mollifier_mass_and_resolution():
    k = mollifier(0.25, SPEC.h, 2)
    assert k.mass == pytest.approx(1.0, abs=1e-14)
    assert k.values.shape == (15, 15)  # 7 h < s, 8 h = s is outside the open support
    with pytest.raises(UnderResolvedError):
        mollifier(SPEC.h, SPEC.h, 2)


def test_radius_ladder():
    assert radius_ladder(0.5, 1 / 32) == [0.25, 0.125, 0.0625]
    with pytest.raises(UnderResolvedError):
        radius_ladder(0.1, 1 / 32)


def test_hl_examples():
    one = GridField(SPEC, np.ones(SPEC.shape))
    assert np.allclose(hl_maximal(one).values, 1.0)
    spec = GridSpec(Cube.unit(2), 17)
    half = sample(spec, lambda x: (x[..., 0] < 0.5).astype(float))
    M = hl_maximal(half).values
    ref = hl_brute_force(half.values)
    assert np.max(np.abs(M - ref)) <= 1e-12
    near = np.abs(spec.points()[..., 0] - 0.5) <= 2 * spec.h
    assert np.all(M[near] >= 0.5)


@given(seeds)
def test_hl_matches_brute_force(seed):
    spec = GridSpec(Cube.unit(2), 9)
    f = _rand(seed, spec)
    assert np.max(np.abs(hl_maximal(f).values - hl_brute_force(f.values))) <= 1e-12


@given(seeds, st.floats(-3, 3))
def test_hl_sublinear_and_homogeneous(seed, c):
    f, g = _rand(seed), _rand(seed + 1)
    Mf, Mg = hl_maximal(f).values, hl_maximal(g).values
    assert np.all(hl_maximal(f + g).values <= Mf + Mg + 1e-12)
    assert np.allclose(hl_maximal(c * f).values, abs(c) * Mf, atol=1e-12)
    # the 33-node cube covers the grid, so M f dominates the global mean
    assert np.all(Mf >= np.abs(f.values).mean() - 1e-12)


@given(seeds)
def test_hl_monotone(seed):
    f = _rand(seed)
    g = GridField(SPEC, np.abs(f.values) + np.random.default_rng(seed).random(SPEC.shape))
    assert np.all(hl_maximal(f).values <= hl_maximal(g).values + 1e-12)


@given(seeds, st.floats(0.2, 3.0))
def test_hl_weak_type(seed, t):
    f = _rand(seed)
    M = hl_maximal(f).values
    # uncentred cubes are covered by centred ones of twice the size
    assert np.sum(M > t) <= 36.0 / t * np.sum(np.abs(f.values))


def test_hl_radii():
    assert hl_radii(17) == [1, 2, 4, 8]
    assert hl_radii(2) == []


def test_smooth_maximal_constant():
    c = GridField(SPEC, np.full(SPEC.shape, -2.0))
    s = 0.25
    M = smooth_maximal(c, s).values
    inner = np.max(np.abs(SPEC.points() - 0.5), axis=-1) < 0.5 - s / 2
    assert np.allclose(M[inner], 2.0, atol=1e-12)


@given(seeds)
def test_smooth_maximal_sublinear(seed):
    f, g = _rand(seed), _rand(seed + 7)
    s = 0.25
    assert np.all(smooth_maximal(f + g, s).values
                  <= smooth_maximal(f, s).values + smooth_maximal(g, s).values + 1e-12)


def test_grand_single_bump_is_scaled_smooth():
    D = standard_dictionary(2)
    f = _rand(4)
    s = 0.25
    factor = D.bumps[0].amplitude * mollifier_constant(2)
    assert np.allclose(grand_maximal(f, s, D).values, factor * smooth_maximal(f, s).values, rtol=1e-12)


def test_dictionary_basics():
    D = default_dictionary(2)
    assert len(D) == 21  # full-width offsets collapse to one bump
    assert max(D.certificate()) <= 1.05
    with pytest.raises(InvalidArgument):
        BumpDictionary((), 2, 2)
    with pytest.raises(InvalidArgument):
        grand_maximal(_rand(0), 0.25, None)


def test_hl_weak_type_constant_small():
    worst = 0.0
    for seed in range(10):
        f = _rand(seed)
        M = hl_maximal(f).values
        for t in np.geomspace(0.05, 3.0, 20):
            worst = max(worst, np.sum(M > t) * t / np.sum(np.abs(f.values)))
    assert worst <= 10.0


@given(seeds)
def test_smooth_maximal_monotone_in_s(seed):
    # the ladder for 2s contains the ladder for s
    f = _rand(seed)
    assert np.all(smooth_maximal(f, 0.5).values >= smooth_maximal(f, 0.25).values)


def test_smooth_maximal_dilation_covariance():
    f = _rand(11)
    far = GridSpec(Cube((3.0, -1.0), 2.0), SPEC.m)
    a = smooth_maximal(f, 0.25).values
    b = smooth_maximal(GridField(far, f.values), 1.0).values
    assert np.max(np.abs(a - b)) <= 1e-8


def test_mollifier_symmetric():
    k = mollifier(0.25, SPEC.h, 2).values
    assert np.array_equal(k, k[::-1]) and np.array_equal(k, k.T)


def test_grand_maximal_grows_with_dictionary():
    f = _rand(5)
    D = default_dictionary(2, widths=3, offsets=3)
    bigger = BumpDictionary(D.bumps + default_dictionary(2, widths=4, offsets=5).bumps, D.N0, 2)
    assert np.all(grand_maximal(f, 0.25, bigger).values >= grand_maximal(f, 0.25, D).values)
