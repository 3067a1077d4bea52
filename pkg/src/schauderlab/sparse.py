"""Sparse families, the stopping-cube construction and both sides of the sparse bound."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DomainMarginError, InvalidArgument, InvalidWhitneyError, StoppingFailure
from .field import GridField, mean_over, sample
from .grid import (
    Cube,
    GridSpec,
    WhitneyDecomposition,
    dilate,
    dyadic_subcubes,
    neighbour_ratio,
    whitney_decompose,
)
from .maximal import eta_derivative
from .norms import _smooth_cutoff, check_p, hardy_r_norm

C0_MAX = 2.0 ** 40
NEIGHBOUR_RATIO_CAP = 16.0


# ---------------------------------------------------------------- sparse families


def _runs(mask: np.ndarray) -> list:
    flat = np.asarray(mask, bool).ravel().astype(np.int8)
    d = np.diff(np.concatenate([[0], flat, [0]]))
    starts = np.nonzero(d == 1)[0]
    ends = np.nonzero(d == -1)[0]
    return [[int(s), int(e - s)] for s, e in zip(starts, ends)]


def _from_runs(runs, shape) -> np.ndarray:
    flat = np.zeros(int(np.prod(shape)), dtype=bool)
    for s, L in runs:
        flat[s: s + L] = True
    return flat.reshape(shape)


@dataclass
class SparseFamily:
    """Cubes P with chosen node sets E_P on a common grid."""

    cubes: list
    chosen_sets: list  # boolean masks on ``spec``
    epsilon: float
    spec: GridSpec

    def __post_init__(self):
        if len(self.cubes) != len(self.chosen_sets):
            raise InvalidArgument("one chosen set per cube is required")
        if not (0 < self.epsilon <= 1):
            raise InvalidArgument("epsilon must lie in (0, 1]")

    def __len__(self):
        return len(self.cubes)

    def to_json(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "grid": self.spec.to_json(),
            "cubes": [c.to_json() for c in self.cubes],
            "chosen_sets": [_runs(E) for E in self.chosen_sets],
        }

    @classmethod
    def from_json(cls, obj) -> "SparseFamily":
        spec = GridSpec.from_json(obj["grid"])
        cubes = [Cube.from_json(c) for c in obj["cubes"]]
        sets = [_from_runs(r, spec.shape) for r in obj["chosen_sets"]]
        return cls(cubes, sets, float(obj["epsilon"]), spec)


def cube_nodes(spec: GridSpec, P: Cube) -> np.ndarray:
    """Node mask of the half-open cube P."""
    return spec.inside_mask(P, closed=False)


@dataclass
class SparseCheck:
    ok: bool
    ok_literal: bool
    worst_cube: int
    worst_fraction: float
    worst_node: tuple
    max_overlap: int
    max_cube_overlap: int
    subset_ok: bool
    mode: str = "default"

    def __bool__(self):
        return self.ok

    def to_json(self) -> dict:
        d = dict(self.__dict__)
        d["worst_node"] = list(d["worst_node"])
        return d


def verify_sparse(S: SparseFamily, mode: str = "default") -> SparseCheck:
    """Check |E_P| >= eps |P| and bounded overlap by node counting.

    ``mode="default"`` requires sum 1_{E_P} <= 1; ``mode="literal"`` requires
    sum 1_P <= 1.  Both quantities are always reported.
    """
    if mode not in ("default", "literal"):
        raise InvalidArgument("mode must be 'default' or 'literal'")
    spec = S.spec
    h_n = spec.cell_volume
    cnt_E = np.zeros(spec.shape, dtype=np.int64)
    cnt_P = np.zeros(spec.shape, dtype=np.int64)
    worst = (math.inf, -1)
    subset_ok = True
    for i, (P, E) in enumerate(zip(S.cubes, S.chosen_sets)):
        Pm = cube_nodes(spec, P)
        cnt_E += E
        cnt_P += Pm
        if np.any(E & ~Pm):
            subset_ok = False
        size_P = Pm.sum() * h_n
        frac = (E.sum() * h_n / size_P) if size_P > 0 else math.inf
        if frac < worst[0]:
            worst = (frac, i)
    if S.cubes:
        wn = tuple(int(x) for x in np.unravel_index(int(np.argmax(cnt_E)), spec.shape))
        max_E, max_P = int(cnt_E.max()), int(cnt_P.max())
    else:
        wn, max_E, max_P = (), 0, 0
    frac_ok = (worst[0] >= S.epsilon - 1e-12) if S.cubes else True
    ok_default = bool(frac_ok and max_E <= 1 and subset_ok)
    ok_literal = bool(frac_ok and max_P <= 1 and subset_ok)
    ok = ok_default if mode == "default" else ok_literal
    return SparseCheck(ok, ok_literal, worst[1], float(worst[0]) if S.cubes else 1.0, wn, max_E, max_P,
                       subset_ok, mode)


# ---------------------------------------------------------------- bumps


def bump_amplitude(N: float, n: int, N0: int = 2, samples: int = 2001) -> float:
    """Largest a with a * prod eta((x - c)/l) in A_{Q,1}(N) (support 2Q, side l).

    The normalisation is |d^g phi| <= (N l(2Q))^{-|g|} for |g| <= N0.
    """
    t = np.linspace(-1, 1, samples)
    m1 = [float(np.max(np.abs(eta_derivative(t, k)))) for k in range(N0 + 1)]
    best = math.inf
    for gamma in np.ndindex(*(N0 + 1,) * n):
        if sum(gamma) > N0:
            continue
        prod = 1.0
        for g in gamma:
            prod *= m1[g]
        # d^g phi = a l^{-|g|} prod eta^{(g_i)}; need <= (2 N l)^{-|g|}
        best = min(best, (2.0 * N) ** (-sum(gamma)) / prod)
    return best


def bump_field(spec: GridSpec, Q: Cube, N: float = 1.0, N0: int = 2) -> GridField:
    """Standard profile supported in 2Q, scaled into A_{Q,1}(N)."""
    a = bump_amplitude(N, spec.n, N0)
    from .maximal import eta

    x = spec.points()
    val = a * np.ones(spec.shape)
    for i in range(spec.n):
        val = val * eta((x[..., i] - Q.center[i]) / Q.side)
    return GridField(spec, val)


# ---------------------------------------------------------------- stopping cubes


@dataclass
class StoppingResult:
    whitney: WhitneyDecomposition
    E1_mask: np.ndarray
    E2_mask: np.ndarray
    C0: float
    S1: np.ndarray = field(repr=False, default=None)
    S2: np.ndarray = field(repr=False, default=None)
    a1: float = 0.0
    a2: float = 0.0
    spec: GridSpec = field(repr=False, default=None)

    def level_set(self, C: float) -> np.ndarray:
        """E_1 union E_2 for threshold C."""
        return _level_set(self.S1, self.S2, self.a1, self.a2, C)

    def to_json(self) -> dict:
        return {
            "C0": self.C0,
            "E1_nodes": int(self.E1_mask.sum()),
            "E2_nodes": int(self.E2_mask.sum()),
            "whitney": self.whitney.to_json(),
        }


def _level_set(S1, S2, a1, a2, C):
    E1 = S1 > C * a1 if a1 > 0 else np.zeros(S1.shape, bool)
    E2 = S2 > C * a2 if a2 > 0 else np.zeros(S2.shape, bool)
    return E1 | E2


def _tile_index(spec3: GridSpec, ambient: Cube, depth: int) -> np.ndarray:
    """Per node and axis, the index of the dyadic tile of ``ambient`` containing it."""
    s = ambient.side / 2 ** depth
    out = []
    for i in range(spec3.n):
        t = np.floor((spec3.axis(i) - ambient.lower[i]) / s + 1e-9).astype(int)
        out.append(np.clip(t, 0, 2 ** depth - 1))
    return out


def max_depth_for(Q: Cube, h: float, min_nodes: int = 9) -> int:
    """Deepest dyadic level of 3Q whose doubles 2P still carry ``min_nodes`` nodes per axis."""
    d = 0
    while (2 * 3 * Q.side / 2 ** (d + 1)) / h + 1 >= min_nodes - 1e-9:
        d += 1
    return d


def _box_sum_table(w: np.ndarray) -> np.ndarray:
    c = w
    for ax in range(w.ndim):
        c = np.cumsum(c, axis=ax)
    return np.pad(c, [(1, 0)] * w.ndim)


def _box_sum(table, sl) -> float:
    n = table.ndim
    total = 0.0
    for corner in np.ndindex(*(2,) * n):
        idx = tuple(s.stop if c else s.start for s, c in zip(sl, corner))
        sign = (-1) ** (n - sum(corner))
        total += sign * table[idx]
    return total


def stopping_cubes(u_grad: GridField, g: GridField, Q: Cube, phi_Q: GridField, eps: float, p: float,
                   max_depth: Optional[int] = None) -> StoppingResult:
    """Stopping sets E1, E2 in 3Q and the Whitney decomposition of their union.

    S1 and S2 are dyadic maximal functions over the dyadic subcubes P of 3Q
    containing each node.  C0 is the smallest threshold in [1, 2^40] leaving at
    most eps |Q| of node measure in E1 union E2.
    """
    if not (0 < eps < 1):
        raise InvalidArgument("eps must lie in (0, 1)")
    spec = u_grad.spec
    n = spec.n
    check_p(p, n)
    if g.spec != spec or phi_Q.spec != spec:
        raise InvalidArgument("u_grad, g and phi_Q must share the grid")
    if not spec.domain.contains_cube(dilate(Q, 6.0), tol=1e-9):
        raise DomainMarginError("fields must cover 6Q")
    h = spec.h
    three = dilate(Q, 3.0)
    sl3 = spec.node_box(three, closed=True)
    spec3 = spec.sub_spec(sl3)
    if max_depth is None:
        max_depth = max_depth_for(Q, h)

    grad2 = np.sum(u_grad.values ** 2, axis=-1)
    a1 = float(mean_over(GridField(spec, grad2), dilate(Q, 6.0)))
    w = phi_Q.values * grad2 * spec.cell_volume
    table = _box_sum_table(w)
    a2 = hardy_r_norm(g, dilate(Q, 4.0), p).value if np.any(g.values) else 0.0

    S1 = np.zeros(spec3.shape)
    S2 = np.zeros(spec3.shape)
    for d in range(max_depth + 1):
        cubes = dyadic_subcubes(three, d)
        k = 2 ** d
        v1 = np.zeros((k,) * n)
        v2 = np.zeros((k,) * n)
        for idx, P in zip(np.ndindex(*(k,) * n), cubes):
            P3 = dilate(P, 3.0)
            box = spec.node_box(P3, closed=False)
            v1[idx] = _box_sum(table, box) / P3.volume if spec.box_count(box) else 0.0
            if a2 > 0:
                v2[idx] = hardy_r_norm(g, dilate(P, 2.0), p).value
        tiles = _tile_index(spec3, three, d)
        grids = np.meshgrid(*tiles, indexing="ij")
        S1 = np.maximum(S1, v1[tuple(grids)])
        S2 = np.maximum(S2, v2[tuple(grids)])

    t = np.zeros(spec3.shape)
    if a1 > 0:
        t = np.maximum(t, S1 / a1)
    if a2 > 0:
        t = np.maximum(t, S2 / a2)
    K = int(math.floor(eps * Q.volume / spec.cell_volume + 1e-9))
    vals = np.sort(t.ravel())[::-1]
    C0 = 1.0
    if K < vals.size and vals[K] > C0:
        C0 = float(vals[K])
    if C0 > C0_MAX:
        curve = [(2.0 ** j, int(np.sum(t > 2.0 ** j))) for j in range(0, 41, 4)]
        raise StoppingFailure(f"no threshold up to 2^40 meets the measure budget ({K} nodes)", curve)
    E1 = (S1 > C0 * a1) if a1 > 0 else np.zeros(spec3.shape, bool)
    E2 = (S2 > C0 * a2) if a2 > 0 else np.zeros(spec3.shape, bool)
    W = whitney_decompose(E1 | E2, Q, spec3)
    return StoppingResult(W, E1, E2, C0, S1, S2, a1, a2, spec3)


# ---------------------------------------------------------------- partition of unity


def _bump_tilde(spec: GridSpec, P: Cube):
    """1 on closed P, smooth decay to 0 at the boundary of 2P."""
    big = dilate(P, 2.0)
    sl = spec.node_box(big, closed=True)
    val = None
    for i, s in enumerate(sl):
        x = spec.axis(i)[s]
        t = (np.abs(x - P.center[i]) - P.half_side) / P.half_side
        v = _smooth_cutoff(t)
        val = v if val is None else np.multiply.outer(val, v)
    return sl, val


@dataclass
class PartitionOfUnity:
    cubes: list
    slices: list
    values: list  # psi_P on its node box
    spec: GridSpec
    certificates: list = field(default_factory=list)

    def total(self) -> np.ndarray:
        out = np.zeros(self.spec.shape)
        for sl, v in zip(self.slices, self.values):
            out[sl] += v
        return out

    def field_of(self, i: int) -> np.ndarray:
        out = np.zeros(self.spec.shape)
        out[self.slices[i]] = self.values[i]
        return out


def partition_of_unity(W: WhitneyDecomposition, check_neighbours: bool = True) -> PartitionOfUnity:
    """psi_P = psi~_P chi(S) / S with S = sum psi~ and chi a smooth step equal to 1 for S >= 1."""
    if not W.cubes:
        raise InvalidArgument("empty Whitney decomposition")
    if check_neighbours:
        r = neighbour_ratio(W.cubes)
        if r > NEIGHBOUR_RATIO_CAP:
            raise InvalidWhitneyError(f"neighbouring cubes differ in side by a factor {r:g}")
    spec = W.spec
    parts = [_bump_tilde(spec, P) for P in W.cubes]
    S = np.zeros(spec.shape)
    for sl, v in parts:
        S[sl] += v
    chi = 1.0 - _smooth_cutoff(S)
    factor = np.zeros(spec.shape)
    pos = S > 0
    factor[pos] = chi[pos] / S[pos]
    slices, values, certs = [], [], []
    for P, (sl, v) in zip(W.cubes, parts):
        psi = v * factor[sl]
        slices.append(sl)
        values.append(psi)
        certs.append(_certificate(psi, spec.h, P))
    return PartitionOfUnity(list(W.cubes), slices, values, spec, certs)


def _certificate(psi: np.ndarray, h: float, P: Cube):
    """Sampled max |d^g psi| l(P)^{|g|}, |g| <= 2; None when P spans under four cells."""
    if P.side < 4 * h or min(psi.shape) < 3:
        return None
    out = {"0": float(np.max(np.abs(psi)))}
    grads = np.gradient(psi, h)
    if psi.ndim == 1:
        grads = [grads]
    out["1"] = float(max(np.max(np.abs(g)) for g in grads)) * P.side
    sec = 0.0
    for g in grads:
        for gg in np.gradient(g, h) if psi.ndim > 1 else [np.gradient(g, h)]:
            sec = max(sec, float(np.max(np.abs(gg))))
    out["2"] = sec * P.side ** 2
    return out


# ---------------------------------------------------------------- bound sides


def pairing_lhs(phi_Q: GridField, u_grad: GridField, g: GridField, Q: Cube) -> float:
    """|int_{2Q} phi_Q grad u . g| by nodal trapezoid quadrature."""
    spec = phi_Q.spec
    if u_grad.spec != spec or g.spec != spec:
        raise InvalidArgument("fields must share the grid")
    two = dilate(Q, 2.0)
    if not spec.domain.contains_cube(two, tol=1e-9):
        raise DomainMarginError("fields must cover 2Q")
    prod = phi_Q.values * np.sum(u_grad.values * g.values, axis=-1)
    val = mean_over(GridField(spec, prod), two) * two.volume
    return abs(float(val))


def _field_on(fld, spec: GridSpec, domain: Optional[Cube]):
    if callable(fld) and not isinstance(fld, GridField):
        if domain is not None and not domain.contains_cube(spec.domain, tol=1e-9):
            raise DomainMarginError("cube dilate leaves the data domain")
        return sample(spec, fld)
    if not fld.spec.domain.contains_cube(spec.domain, tol=1e-9):
        raise DomainMarginError("cube dilate leaves the field's domain")
    return fld.resample(spec)


def oscillation(F, P6: Cube, m_local: int = 33, domain: Optional[Cube] = None) -> float:
    """(mean_{P6} |F - <F>|^2)^{1/2} on a fresh grid over P6."""
    spec = GridSpec(P6, m_local)
    Ff = _field_on(F, spec, domain)
    mean = np.asarray(mean_over(Ff, P6))
    dev = np.sum((Ff.values - mean) ** 2, axis=-1) if Ff.kind == "vector" else (Ff.values - mean) ** 2
    return math.sqrt(max(float(mean_over(GridField(spec, dev), P6)), 0.0))


def sparse_rhs(S: SparseFamily, F, g, p: float, m_local: int = 33, domain: Optional[Cube] = None,
               terms: Optional[list] = None) -> float:
    """sum_P |P| osc_{6P}(F) ||g||_{h_r^p(4P)} with Hardy norms as extension upper bounds.

    ``F`` and ``g`` are callables or fields; each cube gets a fresh grid on 6P.
    """
    total = 0.0
    for P in S.cubes:
        osc = oscillation(F, dilate(P, 6.0), m_local, domain)
        if osc == 0.0:
            hn = 0.0
        else:
            spec = GridSpec(dilate(P, 6.0), m_local)
            gf = _field_on(g, spec, domain)
            hn = hardy_r_norm(gf, dilate(P, 4.0), p).value
        term = P.volume * osc * hn
        if terms is not None:
            terms.append(term)
        total += term
    return total


def family_from_stopping(res: StoppingResult, Q: Cube, eps: float) -> SparseFamily:
    """{Q} with E_Q = Q minus the stopping cubes, plus each stopping cube with E_P = P."""
    spec = res.spec
    covered = np.zeros(spec.shape, bool)
    cubes = [Q]
    sets = [None]
    for P in res.whitney.cubes:
        Pm = cube_nodes(spec, P)
        covered |= Pm
        cubes.append(P)
        sets.append(Pm)
    sets[0] = cube_nodes(spec, Q) & ~covered
    return SparseFamily(cubes, sets, eps, spec)


@dataclass
class SparseBoundResult:
    lhs: float
    rhs: float
    C_emp: float
    family_size: int
    epsilon: float
    valid: bool
    C0: float
    check: SparseCheck = field(repr=False, default=None)
    family: SparseFamily = field(repr=False, default=None)
    s2_transfer: float = 0.0

    def to_json(self) -> dict:
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "C_emp": self.C_emp,
            "family_size": self.family_size,
            "epsilon": self.epsilon,
            "verify_sparse": self.valid,
            "C0": self.C0,
            "s2_transfer": self.s2_transfer,
        }


def sparse_bound(A_model: Callable, F: Callable, g: Callable, Q: Cube, m: int, lam: float, Lam: float,
                 eps: float = 0.5, p: float = 0.8, m_local: int = 33, N: float = 1.0) -> SparseBoundResult:
    """Evaluate both sides of the sparse bound on one instance.

    u solves -div A grad u = div F on 6Q with zero boundary data.  The family
    is Q plus the Whitney cubes of the stopping set.
    """
    from .field import from_model
    from .solver import EllipticProblem, solve_dirichlet

    six = dilate(Q, 6.0)
    spec = GridSpec(six, m)
    A = from_model(spec, A_model, lam, Lam)
    Ff = sample(spec, F)
    rep = solve_dirichlet(EllipticProblem(A, Ff))
    gf = sample(spec, g)
    phi = bump_field(spec, Q, N)
    lhs = pairing_lhs(phi, rep.grad_u, gf, Q)
    res = stopping_cubes(rep.grad_u, gf, Q, phi, eps, p)
    fam = family_from_stopping(res, Q, eps)
    chk = verify_sparse(fam)
    rhs = sparse_rhs(fam, F, g, p, m_local, domain=six)
    C = lhs / rhs if rhs > 0 else (0.0 if lhs == 0 else math.inf)
    transfer = 0.0
    if res.a2 > 0 and len(res.whitney):
        for P in res.whitney.cubes:
            if res.spec.h * 4 <= dilate(P, 2.0).half_side:
                v = hardy_r_norm(gf, dilate(P, 2.0), p).value
                transfer = max(transfer, v / res.a2)
    return SparseBoundResult(lhs, rhs, C, len(fam), eps, bool(chk), res.C0, chk, fam, transfer)
