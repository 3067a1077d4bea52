import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from schauderlab.acceptance import manufactured_error
from schauderlab.errors import ConvergenceFailure, InvalidArgument, TooCoarseError
from schauderlab.field import CoefficientField, GridField, holder_seminorm, mean_over, sample
from schauderlab.grid import Cube, GridSpec, dilate
from schauderlab.solver import (EllipticProblem, project_T, projection_residual, q1_space, solve_dirichlet,
                                solve_local_frozen, solve_projection)

UNIT = Cube.unit(2)


def _const(spec, M):
    return CoefficientField.constant(spec, np.asarray(M, float))


def test_zero_problem_gives_zero():
    spec = GridSpec(UNIT, 17)
    rep = solve_dirichlet(EllipticProblem(_const(spec, np.eye(2))))
    assert np.all(rep.u.values == 0)


@pytest.mark.parametrize("method", ["direct", "bicgstab"])
def test_affine_is_discrete_solution(method):
    spec = GridSpec(UNIT, 17)
    bc = sample(spec, lambda x: x[..., 0])
    rep = solve_dirichlet(EllipticProblem(_const(spec, np.diag([1.0, 4.0])), bc=bc), method=method)
    assert np.max(np.abs(rep.u.values - bc.values)) < 1e-9
    assert np.allclose(rep.grad_u.values[..., 0], 1.0) and np.allclose(rep.grad_u.values[..., 1], 0.0, atol=1e-9)


def test_manufactured_rate():
    e17, _ = manufactured_error(17)
    e33, _ = manufactured_error(33)
    assert math.log2(e17 / e33) > 1.8


def test_bicgstab_matches_direct():
    spec = GridSpec(UNIT, 17)
    A = _const(spec, [[2.0, 0.3], [0.1, 1.0]])
    F = sample(spec, lambda x: np.stack([np.sin(3 * x[..., 0]), x[..., 0] * x[..., 1] ** 2], axis=-1))
    a = solve_dirichlet(EllipticProblem(A, F), method="direct").u.values
    b = solve_dirichlet(EllipticProblem(A, F), method="bicgstab").u.values
    assert np.max(np.abs(a - b)) < 1e-8 * max(1.0, np.max(np.abs(a)))


def test_solver_errors():
    spec = GridSpec(UNIT, 17)
    A = _const(spec, np.eye(2))
    F = sample(spec, lambda x: np.stack([x[..., 0] ** 2, x[..., 1] ** 3], axis=-1))
    with pytest.raises(ConvergenceFailure) as ei:
        solve_dirichlet(EllipticProblem(A, F), tol=1e-30)
    assert len(ei.value.history) > 0
    with pytest.raises(InvalidArgument):
        solve_dirichlet(EllipticProblem(A, F), tol=1e-2)
    with pytest.raises(TooCoarseError):
        solve_dirichlet(EllipticProblem(_const(GridSpec(UNIT, 3), np.eye(2))))
    with pytest.raises(InvalidArgument):
        solve_dirichlet(EllipticProblem(A, F), method="gmres")


def test_energy_form_matches_stiffness():
    spec = GridSpec(UNIT, 9)
    space = q1_space(spec)
    rng = np.random.default_rng(1)
    cells = rng.standard_normal((space.ncell, 2, 2))
    u, v = rng.standard_normal(spec.size), rng.standard_normal(spec.size)
    K = space.stiffness(cells)
    assert space.energy_form(cells, u, v) == pytest.approx(v @ (K @ u), rel=1e-12)


@given(st.integers(0, 2 ** 31))
def test_energy_form_positive_for_elliptic(seed):
    spec = GridSpec(UNIT, 7)
    space = q1_space(spec)
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((space.ncell, 2, 2))
    cells = np.einsum("cij,ckj->cik", B, B) + 0.1 * np.eye(2)
    u = rng.standard_normal(spec.size)
    assert space.energy_form(cells, u, u) > 0


def _potential_gap(m):
    spec = GridSpec(UNIT, m)
    space = q1_space(spec)
    hfun = sample(spec, lambda x: np.sin(np.pi * x[..., 0]) * x[..., 1] * (1 - x[..., 1]))
    hv = hfun.values.ravel()
    G = space.cell_gradient(hv)
    rep = solve_projection(_const(spec, np.eye(2)), G)
    return np.max(np.abs(rep.u.values.ravel() - hv))


def test_projection_of_gradient_recovers_potential():
    # centroid gradients feed the load, so T = h only up to O(h^2)
    a, b = _potential_gap(17), _potential_gap(33)
    assert a < 5e-3
    assert a / b > 3.0


def test_projection_of_constant_is_zero():
    spec = GridSpec(UNIT, 17)
    g = GridField(spec, np.broadcast_to([1.5, -2.0], spec.shape + (2,)))
    gT = project_T(UNIT, _const(spec, np.eye(2)), g)
    assert np.max(np.abs(gT.values)) < 1e-12


def test_projection_residual_small():
    spec = GridSpec(UNIT, 17)
    A = _const(spec, [[2.0, 0.5], [-0.3, 1.0]])
    g = sample(spec, lambda x: np.stack([np.cos(5 * x[..., 0]), x[..., 0] * x[..., 1]], axis=-1))
    T = solve_projection(A, g).u
    eta = np.random.default_rng(0).standard_normal(spec.size)
    eta[q1_space(spec).bnodes] = 0.0
    num, scale = projection_residual(A, g, T, eta)
    assert abs(num) <= 1e-10 * scale


@pytest.mark.parametrize("fn", [lambda x: 2 * x[..., 0] - x[..., 1] + 1,
                                lambda x: x[..., 0] ** 2 - x[..., 1] ** 2])
def test_local_frozen_keeps_solutions(fn):
    spec = GridSpec(UNIT, 33)
    u = sample(spec, fn)
    P3 = Cube((0.5, 0.5), 0.25)
    w = solve_local_frozen(P3, np.eye(2), u)
    ref = u.restrict(P3).values
    assert np.max(np.abs(w.values - ref)) < 1e-10
    w2 = solve_local_frozen(P3, np.eye(2), u, m=9)
    assert w2.spec.m == 9


def test_local_frozen_rejects():
    spec = GridSpec(UNIT, 33)
    u = sample(spec, lambda x: x[..., 0])
    with pytest.raises(InvalidArgument):
        solve_local_frozen(UNIT, -np.eye(2), u)
    with pytest.raises(TooCoarseError):
        solve_local_frozen(Cube((0.5, 0.5), 0.05), np.eye(2), u)


def _interior_quotient(m, alpha=0.5):
    spec = GridSpec(UNIT, m)
    A = _const(spec, [[1.0, 0.3], [0.3, 2.0]])
    bc = sample(spec, lambda x: np.sin(2 * x[..., 0]) * np.cosh(x[..., 1]) + x[..., 0] * x[..., 1])
    g = solve_dirichlet(EllipticProblem(A, bc=bc)).grad_u
    Q = Cube((0.5, 0.5), 1 / 6)
    hq = holder_seminorm(g, alpha, Q) * Q.side ** alpha
    avg = math.sqrt(mean_over(GridField(spec, np.sum(g.values ** 2, -1)), dilate(Q, 2)))
    return hq / avg


def test_interior_holder_stable_under_refinement():
    a, b = _interior_quotient(49), _interior_quotient(97)
    assert max(a, b) / min(a, b) <= 1.3


def test_bicgstab_breakdown_falls_back():
    # divergence-free F gives a load at round-off level
    spec = GridSpec(UNIT, 17)
    F = sample(spec, lambda x: np.stack([np.sin(3 * x[..., 1]), x[..., 0] ** 2], axis=-1))
    rep = solve_dirichlet(EllipticProblem(_const(spec, np.eye(2)), F), method="bicgstab")
    assert np.max(np.abs(rep.u.values)) < 1e-12


def _rough_problem(m, seed=0):
    spec = GridSpec(UNIT, m)
    rng = np.random.default_rng(seed)
    X = spec.points()
    F = GridField(spec, np.stack([np.sin(3 * X[..., 0] + rng.random()) * X[..., 1],
                                  np.cos(2 * X[..., 1]) + X[..., 0] ** 2], axis=-1))
    A = _const(spec, [[2.0, 0.5], [0.5, 1.5]])
    return spec, A, F


def test_galerkin_orthogonality():
    spec, A, F = _rough_problem(33)
    rep = solve_dirichlet(EllipticProblem(A, F), tol=1e-10)
    space = q1_space(spec)
    load = -space.div_load(space.cell_average(F.values))
    r = space.stiffness(A.cell_values()) @ rep.u.values.ravel() - load
    I = space.interior
    assert np.linalg.norm(r[I]) <= 1e-10 * np.linalg.norm(load[I])


def test_energy_stability():
    spec, A, F = _rough_problem(33, 3)
    lam = float(np.linalg.eigvalsh(np.array([[2.0, 0.5], [0.5, 1.5]]))[0])
    rep = solve_dirichlet(EllipticProblem(A, F))
    space = q1_space(spec)
    u = rep.u.values.ravel()
    eye = np.broadcast_to(np.eye(2), (space.ncell, 2, 2))
    grad_l2 = math.sqrt(space.energy_form(eye, u, u))
    Fc = space.cell_average(F.values)
    osc = math.sqrt(np.sum((Fc - Fc.mean(axis=0)) ** 2) * spec.cell_volume)
    assert grad_l2 <= 1.05 * osc / lam
