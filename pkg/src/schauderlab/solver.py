"""Conforming Q1 finite elements for ``-div A grad u = div F`` on cubes.

A and F are constant on each cell (centroid samples), so the bilinear form is
integrated exactly on the Q1 space.  The weak form is

    int A grad u . grad eta = - int F . grad eta     for all eta in V_0,

which makes ``F = -A grad u*`` reproduce ``u*``.  The projection ``T_{P,A}`` solves
``int A^T grad T . grad eta = int g . grad eta`` with zero boundary values, so that
``g - A^T grad T`` is discretely divergence-free.
"""

from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ConvergenceFailure, InvalidArgument, TooCoarseError
from .field import CoefficientField, GridField, interpolate
from .grid import Cube, GridSpec

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
MIN_NODES = 5


class Q1Space:
    """Index bookkeeping and reference integrals for one grid."""

    def __init__(self, spec: GridSpec):
        self.spec = spec
        n, m, h = spec.n, spec.m, spec.h
        self.n = n
        corners = np.array(list(itertools.product((0, 1), repeat=n)), dtype=np.int64)
        self.corners = corners
        strides = np.array([m ** (n - 1 - i) for i in range(n)], dtype=np.int64)
        cell_idx = np.indices((m - 1,) * n).reshape(n, -1).T
        self.conn = (cell_idx @ strides)[:, None] + (corners @ strides)[None, :]
        self.ncell = self.conn.shape[0]

        sgn = np.array([-1.0, 1.0])
        mass1 = h * np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
        stiff1 = np.array([[1.0, -1.0], [-1.0, 1.0]]) / h
        mixed1 = np.array([[sgn[a] / 2 for _b in range(2)] for a in range(2)])  # int L_a' L_b
        nc = len(corners)
        M = np.ones((n, n, nc, nc))
        G = np.ones((n, nc))
        for k in range(n):
            for l in range(n):
                for a in range(nc):
                    for b in range(nc):
                        val = 1.0
                        for t in range(n):
                            at, bt = corners[a, t], corners[b, t]
                            if t == k and t == l:
                                val *= stiff1[at, bt]
                            elif t == k:
                                val *= mixed1[at, bt]
                            elif t == l:
                                val *= mixed1[bt, at]
                            else:
                                val *= mass1[at, bt]
                        M[k, l, a, b] = val
            for a in range(nc):
                val = 1.0
                for t in range(n):
                    val *= sgn[corners[a, t]] if t == k else h / 2
                G[k, a] = val
        self.Mref = M  # int d_k phi_a d_l phi_b over one cell
        self.Gref = G  # int d_k phi_a over one cell
        self.grad_c = G / h ** n  # gradient of phi_a at the centroid

        idx = np.indices(spec.shape).reshape(n, -1).T
        self.boundary = np.any((idx == 0) | (idx == m - 1), axis=1)
        self.interior = np.nonzero(~self.boundary)[0]
        self.bnodes = np.nonzero(self.boundary)[0]
        counts = np.bincount(self.conn.ravel(), minlength=spec.size)
        self.cells_per_node = counts

    def stiffness(self, A_cells: np.ndarray) -> sp.csr_matrix:
        """K[a, b] = int A grad phi_b . grad phi_a."""
        A_cells = np.asarray(A_cells, float).reshape(self.ncell, self.n, self.n)
        loc = np.einsum("ckl,klab->cab", A_cells, self.Mref)
        nc = self.conn.shape[1]
        rows = np.repeat(self.conn, nc, axis=1).ravel()
        cols = np.tile(self.conn, (1, nc)).ravel()
        N = self.spec.size
        return sp.csr_matrix((loc.ravel(), (rows, cols)), shape=(N, N))

    def div_load(self, G_cells: np.ndarray) -> np.ndarray:
        """Vector of ``int G . grad phi_a`` for cellwise-constant G."""
        G_cells = np.asarray(G_cells, float).reshape(self.ncell, self.n)
        loc = G_cells @ self.Gref
        return np.bincount(self.conn.ravel(), weights=loc.ravel(), minlength=self.spec.size)

    def cell_average(self, nodal: np.ndarray) -> np.ndarray:
        flat = np.asarray(nodal, float).reshape(self.spec.size, -1)
        return flat[self.conn].mean(axis=1)

    def cell_gradient(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, float).ravel()
        return u[self.conn] @ self.grad_c.T

    def nodal_gradient(self, u: np.ndarray) -> np.ndarray:
        cg = self.cell_gradient(u)
        out = np.zeros((self.spec.size, self.n))
        for k in range(self.n):
            out[:, k] = np.bincount(
                self.conn.ravel(), weights=np.repeat(cg[:, k], self.conn.shape[1]), minlength=self.spec.size
            )
        return (out / self.cells_per_node[:, None]).reshape(self.spec.shape + (self.n,))

    def pairing(self, G_cells: np.ndarray, v: np.ndarray) -> float:
        """int G . grad v with G constant per cell."""
        G = np.asarray(G_cells, float).reshape(self.ncell, self.n)
        return float(np.sum(G * self.cell_gradient(v)) * self.spec.cell_volume)

    def energy_form(self, A_cells: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
        """a_A(u, v) = int A grad u . grad v."""
        A = np.asarray(A_cells, float).reshape(self.ncell, self.n, self.n)
        ul = np.asarray(u, float).ravel()[self.conn]
        vl = np.asarray(v, float).ravel()[self.conn]
        return float(np.einsum("ckl,klab,cb,ca->", A, self.Mref, ul, vl))


@lru_cache(maxsize=64)
def q1_space(spec: GridSpec) -> Q1Space:
    return Q1Space(spec)


@dataclass(frozen=True)
class EllipticProblem:
    A: CoefficientField
    F: Optional[GridField] = None
    bc: Optional[GridField] = None  # None means zero Dirichlet data

    @property
    def domain(self) -> Cube:
        return self.A.spec.domain

    @property
    def spec(self) -> GridSpec:
        return self.A.spec

    def __post_init__(self):
        if self.F is not None:
            if self.F.spec != self.A.spec:
                raise InvalidArgument("A and F must share the grid")
            if self.F.kind != "vector":
                raise InvalidArgument("F must be a vector field")


@dataclass(frozen=True, eq=False)
class SolveReport:
    u: GridField
    grad_u: GridField
    residual: float
    iterations: int
    assembly_time: float
    solve_time: float
    history: list = field(default_factory=list, repr=False)

    def to_json(self) -> dict:
        return {
            "m": self.u.spec.m,
            "n": self.u.spec.n,
            "residual": self.residual,
            "iterations": self.iterations,
            "assembly_time": self.assembly_time,
            "solve_time": self.solve_time,
        }


def _check_tol(tol):
    if not (0 < tol <= 1e-4):
        raise InvalidArgument(f"tol must lie in (0, 1e-4], got {tol!r}")


def _boundary_values(spec: GridSpec, space: Q1Space, bc: Optional[GridField]) -> np.ndarray:
    ub = np.zeros(spec.size)
    if bc is None:
        return ub
    if bc.kind != "scalar":
        raise InvalidArgument("boundary data must be a scalar field")
    if bc.spec == spec:
        ub[space.bnodes] = bc.values.ravel()[space.bnodes]
        return ub
    dom = bc.spec.domain
    if not dom.contains_cube(spec.domain, tol=1e-9):
        raise InvalidArgument("boundary field does not cover the domain")
    pts = spec.points().reshape(-1, spec.n)[space.bnodes]
    ub[space.bnodes] = interpolate(bc, pts)
    return ub


def _linear_solve(K, rhs, tol, method, m):
    history = []
    if rhs.size == 0:
        return rhs.copy(), 0.0, 0, history
    bnorm = float(np.linalg.norm(rhs))
    if bnorm == 0.0:
        return np.zeros_like(rhs), 0.0, 0, history
    if method == "direct":
        lu = spla.splu(K.tocsc())
        x = lu.solve(rhs)
        res = float(np.linalg.norm(K @ x - rhs)) / bnorm
        history.append(res)
        it = 1
        while res > tol and it < 4:  # iterative refinement
            x = x + lu.solve(rhs - K @ x)
            res = float(np.linalg.norm(K @ x - rhs)) / bnorm
            history.append(res)
            it += 1
        return x, res, it, history
    if method == "bicgstab":
        d = K.diagonal()
        Minv = spla.LinearOperator(K.shape, matvec=lambda v: v / d)
        count = [0]

        def cb(xk):
            count[0] += 1
            history.append(float(np.linalg.norm(K @ xk - rhs)) / bnorm)

        x, info = spla.bicgstab(K, rhs, rtol=tol * 0.5, atol=0.0, maxiter=50 * m, M=Minv, callback=cb)
        if info < 0:
            # breakdown (seen for loads at round-off level); the direct path is always available
            log.warning("bicgstab breakdown (info=%d), falling back to a direct solve", info)
            x, res, it, hist = _linear_solve(K, rhs, tol, "direct", m)
            return x, res, count[0] + it, history + hist
        res = float(np.linalg.norm(K @ x - rhs)) / bnorm
        return x, res, count[0], history
    raise InvalidArgument(f"unknown linear solver {method!r}")


def solve_system(spec: GridSpec, A_cells, load: np.ndarray, ub: np.ndarray, tol=DEFAULT_TOL,
                 method="direct") -> SolveReport:
    """Solve K u = load on interior nodes with u = ub on the boundary."""
    _check_tol(tol)
    if spec.m < MIN_NODES:
        raise TooCoarseError(f"grid with m={spec.m} < {MIN_NODES} nodes per axis")
    t0 = time.perf_counter()
    space = q1_space(spec)
    K = space.stiffness(A_cells)
    I, B = space.interior, space.bnodes
    K_II = K[I][:, I]
    rhs = load[I] - K[I][:, B] @ ub[B]
    t1 = time.perf_counter()
    x, res, it, hist = _linear_solve(K_II, rhs, tol, method, spec.m)
    t2 = time.perf_counter()
    if not res <= tol:
        raise ConvergenceFailure(f"relative residual {res:.3e} exceeds tol {tol:.1e}", hist)
    u = ub.copy()
    u[I] = x
    grad = space.nodal_gradient(u)
    return SolveReport(
        GridField(spec, u.reshape(spec.shape)), GridField(spec, grad), res, it, t1 - t0, t2 - t1, hist
    )


def solve_dirichlet(prob: EllipticProblem, tol: float = DEFAULT_TOL, method: str = "direct") -> SolveReport:
    spec = prob.spec
    _check_tol(tol)
    if spec.m < MIN_NODES:
        raise TooCoarseError(f"grid with m={spec.m} < {MIN_NODES} nodes per axis")
    space = q1_space(spec)
    load = np.zeros(spec.size)
    if prob.F is not None:
        load = -space.div_load(space.cell_average(prob.F.values))
    ub = _boundary_values(spec, space, prob.bc)
    return solve_system(spec, prob.A.cell_values(), load, ub, tol, method)


def _as_cells(space: Q1Space, g) -> np.ndarray:
    if isinstance(g, GridField):
        return space.cell_average(g.values)
    return np.asarray(g, float).reshape(space.ncell, space.n)


def solve_projection(A: CoefficientField, g, tol: float = DEFAULT_TOL, method: str = "direct") -> SolveReport:
    """Zero-boundary T with int A^T grad T . grad eta = int g . grad eta.

    ``g`` is a nodal vector field (averaged to cells) or an array of cell values.
    """
    spec = A.spec
    space = q1_space(spec)
    G = _as_cells(space, g)
    At = np.swapaxes(A.cell_values(), -1, -2)
    return solve_system(spec, At, space.div_load(G), np.zeros(spec.size), tol, method)


def project_T(P: Cube, A: CoefficientField, g: GridField, tol: float = DEFAULT_TOL) -> GridField:
    """Nodal gradient of T_{P,A}(g) on the grid of ``g``, which must cover P exactly."""
    if g.kind != "vector":
        raise InvalidArgument("g must be a vector field")
    if not _same_cube(g.spec.domain, P):
        g = g.restrict(P)
    A = A.on(g.spec) if A.spec != g.spec else A
    return solve_projection(A, g, tol).grad_u


def _same_cube(a: Cube, b: Cube, rel=1e-9) -> bool:
    return np.allclose(a.center, b.center, atol=rel * a.side) and abs(a.half_side - b.half_side) <= rel * a.side


def solve_local_frozen(P3: Cube, A_P, u: GridField, m: Optional[int] = None,
                       tol: float = DEFAULT_TOL) -> GridField:
    """Solve -div A_P grad w = 0 in P3 with w = u on the boundary of P3.

    Without ``m`` the nodes of ``u`` inside P3 are used; otherwise a fresh grid
    with ``m`` nodes per axis is built and boundary values are interpolated.
    """
    A_P = np.asarray(A_P, float)
    ev = np.linalg.eigvalsh(0.5 * (A_P + A_P.T))
    if ev.min() <= 0:
        raise InvalidArgument("frozen coefficient matrix is not elliptic")
    if m is None:
        sl = u.spec.node_box(P3, closed=True)
        spec = u.spec.sub_spec(sl)
        bc = GridField(spec, u.values[sl])
    else:
        spec = GridSpec(P3, m)
        bc = u
    if spec.m < MIN_NODES:
        raise TooCoarseError(f"local grid with m={spec.m} < {MIN_NODES}")
    space = q1_space(spec)
    ub = _boundary_values(spec, space, bc)
    cells = np.broadcast_to(A_P, (space.ncell,) + A_P.shape)
    return solve_system(spec, cells, np.zeros(spec.size), ub, tol).u


def projection_residual(A: CoefficientField, g, T: GridField, eta: np.ndarray) -> tuple:
    """Return ``(int (g - A^T grad T) . grad eta, ||g - A^T grad T||_2 ||grad eta||_2)``."""
    space = q1_space(A.spec)
    G = _as_cells(space, g)
    At = np.swapaxes(A.cell_values(), -1, -2)
    flux = G - np.einsum("ckl,cl->ck", At, space.cell_gradient(T.values))
    ge = space.cell_gradient(eta)
    vol = A.spec.cell_volume
    # exact cell integrals, matching the assembled stiffness
    num = float(np.sum(G * ge) * vol) - space.energy_form(At, T.values, eta)
    scale = float(np.sqrt(np.sum(flux * flux) * vol) * np.sqrt(np.sum(ge * ge) * vol))
    scale = max(scale, float(np.sqrt(np.sum(G * G) * vol) * np.sqrt(np.sum(ge * ge) * vol)))
    return num, scale
