import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from schauderlab.acceptance import split_instance
from schauderlab.errors import InvalidArgument, TooCoarseError
from schauderlab.field import CoefficientField, GridField, sample
from schauderlab.grid import Cube, GridSpec, dilate
from schauderlab.instances import band_limited, uniform_continuous_model
from schauderlab.iterate import (calibrate_delta, gradient_bounds_from_duality, meyers_scan, pairing_split,
                                 run_iteration, smooth_bump)
from schauderlab.solver import EllipticProblem, solve_dirichlet

Q = Cube((0.5, 0.5), 1 / 6)
ENC = dilate(Q, 3.0)


def _affine(spec, xi=(0.7, -1.2)):
    return sample(spec, lambda x: xi[0] * x[..., 0] + xi[1] * x[..., 1])


def test_smooth_bump_profile():
    spec = GridSpec(ENC, 49)
    pts = spec.points()
    b = smooth_bump(pts, Q)
    d = np.max(np.abs(pts - 0.5), axis=-1)
    assert np.all(b[d <= Q.half_side] == 1.0)
    assert np.all(b[d >= 2 * Q.half_side] == 0.0)
    assert np.all((b >= 0) & (b <= 1))


def test_split_zero_g():
    spec = GridSpec(ENC, 81)
    A = CoefficientField.constant(spec, np.eye(2))
    u = _affine(spec)
    res = pairing_split(A, u, None, GridField(spec, np.zeros(spec.shape + (2,))), Q, "lq")
    assert res.term_I == 0 and res.term_II == 0 and res.direct == 0


def test_split_constant_coefficients_has_no_projection_part():
    spec = GridSpec(ENC, 81)
    A = CoefficientField.constant(spec, np.array([[2.0, 0.4], [0.4, 1.0]]))
    u = _affine(spec)
    g = sample(spec, band_limited(2, 1, ENC))
    res = pairing_split(A, u, None, g, Q, "lq")
    assert abs(res.term_II) <= 1e-14 * max(1.0, abs(res.direct))
    assert res.error <= 1e-10


def test_split_identity_variable_coefficients():
    res = split_instance(0, "lq", 81)
    assert res.error <= 1e-6
    assert res.to_json()["cubes"] == 64


def test_split_rejects():
    spec = GridSpec(ENC, 81)
    A = CoefficientField.constant(spec, np.eye(2))
    u = _affine(spec)
    g = GridField(spec, np.zeros(spec.shape + (2,)))
    with pytest.raises(InvalidArgument):
        pairing_split(A, u, None, g, Q, "sobolev")
    with pytest.raises(InvalidArgument):
        pairing_split(A, u, None, g, Q, "holder")  # needs the 4Q grid
    with pytest.raises(TooCoarseError):
        small = GridSpec(ENC, 25)
        pairing_split(CoefficientField.constant(small, np.eye(2)), _affine(small), None,
                      sample(small, band_limited(2, 0, ENC)), Q, "lq")


def _trace(model, variant="lq", K=2, keep_chain=False, m=49):
    spec = GridSpec(ENC, m)
    if callable(model) and not isinstance(model, CoefficientField):
        from schauderlab.field import from_model
        A = from_model(spec, model, 0.5, 2.0)
    else:
        A = model
    bc = sample(spec, lambda x: np.sin(2 * x[..., 0]) + x[..., 1])
    u = solve_dirichlet(EllipticProblem(A, bc=bc)).u
    return run_iteration(model, u, band_limited(2, 0, ENC), Q, K=K, variant=variant, q_or_p=4.0 if variant == "lq" else 0.8,
                         m_local=9, budget=4, seed=0, keep_chain=keep_chain)


@pytest.mark.parametrize("variant", ["lq", "holder"])
def test_constant_coefficients_only_level_zero(variant):
    spec = GridSpec(ENC, 49)
    A = CoefficientField.constant(spec, np.array([[1.5, 0.2], [0.2, 1.0]]))
    tr = _trace(A, variant)
    assert tr.levels[0].term_sum > 0
    assert all(lv.term_sum == 0 and lv.remainder == 0 for lv in tr.levels[1:])
    assert tr.decay_ratio == 0


def test_iteration_trace_and_chain():
    tr = _trace(uniform_continuous_model(2, 0), keep_chain=True)
    assert [lv.k for lv in tr.levels] == [0, 1, 2]
    assert tr.levels[1].cube_count == 64 and tr.levels[2].cube_count == 64 ** 2
    assert all(lv.sampled <= 4 for lv in tr.levels[1:])
    anc = tr.chain.ancestry(2, 0)
    assert len(anc) == 3 and anc[0] == Q
    assert anc[1].contains_cube(anc[2], tol=1e-9)
    assert tr.chain.field_of(1, 0).kind == "vector"
    js = tr.to_json()
    assert js["variant"] == "lq" and len(js["levels"]) == 3


def test_iteration_rejects():
    spec = GridSpec(ENC, 33)
    A = CoefficientField.constant(spec, np.eye(2))
    u = _affine(spec)
    g = band_limited(2, 0, ENC)
    with pytest.raises(TooCoarseError):
        run_iteration(A, u, g, Q, m_local=5)
    with pytest.raises(InvalidArgument):
        run_iteration(A, u, g, Q, variant="lq", q_or_p=2.0)
    with pytest.raises(InvalidArgument):
        run_iteration(A, u, g, Q, variant="holder", q_or_p=0.5)
    with pytest.raises(InvalidArgument):
        run_iteration(A, u, g, Q, K=-1)


def test_calibrate_delta_bisection():
    calls = []

    def make(side):
        calls.append(side)
        return SimpleNamespace(decay_ratio=side)  # decay grows with the cube

    out = calibrate_delta(make, 1.0, threshold=0.3, steps=12)
    assert out["bracketed"] and out["delta"] < 0.3
    assert out["delta"] == pytest.approx(0.3, rel=0.01)
    assert calibrate_delta(lambda s: SimpleNamespace(decay_ratio=0.1), 1.0)["delta"] == 1.0
    none = calibrate_delta(lambda s: SimpleNamespace(decay_ratio=1.0), 1.0)
    assert none["delta"] is None and not none["bracketed"]


def test_gradient_bounds_affine():
    spec = GridSpec(Cube.unit(2), 33)
    xi = np.array([0.7, -1.2])
    gb = gradient_bounds_from_duality(None, _affine(spec, xi), Cube((0.5, 0.5), 0.125), 0.5)
    assert gb.holder_quotient == pytest.approx(0.0, abs=1e-12)
    assert gb.sup_norm == pytest.approx(np.linalg.norm(xi), rel=1e-12)
    assert gb.l2_avg == pytest.approx(np.linalg.norm(xi), rel=1e-12)
    assert not gb.flagged


def test_meyers_scan_constant_gradient():
    spec = GridSpec(Cube.unit(2), 33)
    g = GridField(spec, np.broadcast_to([3.0, 4.0], spec.shape + (2,)))
    out = meyers_scan(g, Cube((0.5, 0.5), 0.125), [2.0, 2.5, 3.0])
    assert all(v == pytest.approx(1.0, abs=1e-12) for v in out.values())


@given(st.integers(0, 2 ** 31))
def test_meyers_scan_power_mean_monotone(seed):
    spec = GridSpec(Cube.unit(2), 17)
    g = GridField(spec, np.random.default_rng(seed).standard_normal(spec.shape + (2,)))
    out = meyers_scan(g, Cube((0.5, 0.5), 0.25), [2.0, 2.25, 2.5, 3.0, 4.0])
    vals = list(out.values())
    assert all(b >= a * (1 - 1e-12) for a, b in zip(vals, vals[1:]))
    assert all(math.isfinite(v) for v in vals)
