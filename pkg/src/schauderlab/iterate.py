"""Frozen-coefficient recursion: one-step pairing split and the iterated bound.

Two variants share the machinery.  ``holder`` splits 3Q into F(3Q) (side
ratio 1/27) with a smooth partition of unity and measures the level sums in
h_z^p; ``lq`` splits Q into F(Q) (side ratio 1/8) with indicators and measures
them in L^{q'}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidArgument, TooCoarseError
from .field import CoefficientField, GridField, holder_seminorm, interpolate, mean_over
from .grid import Cube, GridSpec, dilate, subdivide_F
from .norms import _smooth_cutoff, check_p, hardy_z_norm
from .solver import DEFAULT_TOL, q1_space, solve_system

VARIANTS = ("holder", "lq")
RATIO = {"holder": 27, "lq": 8}
MIN_LOCAL_NODES = 9


def _check_variant(variant):
    if variant not in VARIANTS:
        raise InvalidArgument(f"variant must be one of {VARIANTS}, got {variant!r}")


def smooth_bump(points: np.ndarray, P: Cube, inner: float = 1.0, outer: float = 2.0) -> np.ndarray:
    """Tensor bump equal to 1 on (inner)P and vanishing outside (outer)P."""
    val = np.ones(points.shape[:-1])
    r = P.half_side
    for i in range(P.n):
        t = (np.abs(points[..., i] - P.center[i]) - inner * r) / ((outer - inner) * r)
        val = val * _smooth_cutoff(t)
    return val


def _fixed_box(spec: GridSpec, cube: Cube) -> tuple:
    """Nearest-node rendering of a closed cube with a fixed node count per axis."""
    k = int(round(cube.side / spec.h)) + 1
    sl = []
    for i in range(spec.n):
        lo = int(math.floor((cube.lower[i] - spec.domain.lower[i]) / spec.h + 0.5 + 1e-9))
        if lo < 0 or lo + k > spec.m:
            raise InvalidArgument("rendered subcube leaves the enclosing grid")
        sl.append(slice(lo, lo + k))
    return tuple(sl)


def _frozen_mean(cells: np.ndarray) -> np.ndarray:
    # exact for constant coefficients, so A - A_P vanishes identically
    if np.all(cells == cells[0]):
        return cells[0].copy()
    return cells.mean(axis=0)


def _cell_slices(sl):
    return tuple(slice(s.start, s.stop - 1) for s in sl)


def _boundary_nonzero(arr: np.ndarray, n: int) -> bool:
    for ax in range(n):
        for idx in (0, -1):
            if np.any(np.take(arr, idx, axis=ax) != 0):
                return True
    return False


@dataclass
class CubeTerm:
    cube: Cube
    A_P: np.ndarray
    term_I: float
    term_II: float
    box: tuple = field(repr=False, default=None)
    flux: np.ndarray = field(repr=False, default=None)  # (A - A_P) grad u per cell
    grad_T: np.ndarray = field(repr=False, default=None)  # nodal grad T_{3P, A_P}


@dataclass
class PairingSplit:
    term_I: float
    term_II: float
    direct: float
    error: float
    variant: str
    term_II_cubes: list = field(repr=False, default_factory=list)

    @property
    def recombined(self) -> float:
        return self.term_I + self.term_II

    def to_json(self) -> dict:
        return {
            "term_I": self.term_I,
            "term_II": self.term_II,
            "direct": self.direct,
            "relative_error": self.error,
            "variant": self.variant,
            "cubes": len(self.term_II_cubes),
        }


def pairing_split(A: CoefficientField, u: GridField, B: Optional[GridField], g: GridField, Q: Cube,
                  variant: str = "holder", tol: float = DEFAULT_TOL, keep_fields: bool = True) -> PairingSplit:
    """Split int B grad u . g into frozen-solution and projection parts.

    ``u`` must be a discrete solution of the homogeneous equation on the
    enclosing grid (4Q for ``holder``, 3Q for ``lq``).  Subcubes are rendered
    to the enclosing grid's nodes, so the identity direct = I + II holds up to
    solver tolerance.
    """
    _check_variant(variant)
    spec = u.spec
    n = spec.n
    if A.spec != spec or g.spec != spec or (B is not None and B.spec != spec):
        raise InvalidArgument("A, u, B and g must share the enclosing grid")
    if g.kind != "vector":
        raise InvalidArgument("g must be a vector field")
    enclosing = dilate(Q, 4.0 if variant == "holder" else 3.0)
    if not spec.domain.contains_cube(enclosing, tol=1e-9):
        raise InvalidArgument("u must live on the enclosing cube")
    space = q1_space(spec)
    pts = spec.points()
    Bt_g = g.values if B is None else np.einsum("...lk,...l->...k", B.values, g.values)
    A_cells = A.cell_values().reshape(tuple(s - 1 for s in spec.shape) + (n, n))
    uval = u.values

    if variant == "holder":
        region = dilate(Q, 3.0)
        cubes = subdivide_F(region, 27)
        ind = np.zeros(spec.shape)
        ind[spec.render_box(region, closed=True)] = 1.0
        S = np.zeros(spec.shape)
        tilde = []
        for P in cubes:
            box = _fixed_box(spec, dilate(P, 3.0))
            v = smooth_bump(pts[box], P)
            tilde.append((box, v))
            S[box] += v
        weights = []
        for box, v in tilde:
            w = np.zeros_like(v)
            pos = S[box] > 0
            w[pos] = v[pos] / S[box][pos]
            weights.append(w)
    else:
        region = Q
        cubes = subdivide_F(region, 8)
        ind = np.zeros(spec.shape)
        ind[spec.render_box(region, closed=False)] = 1.0
        weights = []
        tilde = []
        for P in cubes:
            box = _fixed_box(spec, dilate(P, 3.0))
            w = np.zeros(tuple(s.stop - s.start for s in box))
            inner = spec.render_box(P, closed=False)
            rel = tuple(slice(i.start - b.start, i.stop - b.start) for i, b in zip(inner, box))
            w[rel] = 1.0
            tilde.append((box, None))
            weights.append(w)

    f_total = ind[..., None] * Bt_g
    direct = space.pairing(space.cell_average(f_total), uval)

    total_I = 0.0
    total_II = 0.0
    records = []
    for P, (box, _), w in zip(cubes, tilde, weights):
        k = box[0].stop - box[0].start
        if k < MIN_LOCAL_NODES:
            raise TooCoarseError(f"subcube grid has {k} < {MIN_LOCAL_NODES} nodes per axis")
        f_P = (w * ind[box])[..., None] * Bt_g[box]
        if _boundary_nonzero(np.any(f_P != 0, axis=-1), n):
            raise TooCoarseError("cut-off support touches the rendered 3P boundary; refine the grid")
        sub = spec.sub_spec(box)
        sp_ = q1_space(sub)
        Ac = A_cells[_cell_slices(box)].reshape(-1, n, n)
        A_P = _frozen_mean(Ac)
        if not np.any(f_P):
            records.append(CubeTerm(P, A_P, 0.0, 0.0, box))
            continue
        ub = np.zeros(sub.size)
        ub[sp_.bnodes] = uval[box].ravel()[sp_.bnodes]
        frozen = np.broadcast_to(A_P, Ac.shape)
        uP = solve_system(sub, frozen, np.zeros(sub.size), ub, tol).u.values
        fc = sp_.cell_average(f_P)
        T = solve_system(sub, np.swapaxes(frozen, -1, -2), sp_.div_load(fc), np.zeros(sub.size), tol)
        I_P = sp_.pairing(fc, uP)
        gu = sp_.cell_gradient(uval[box])
        flux = np.einsum("ckl,cl->ck", frozen - Ac, gu)
        II_P = sp_.energy_form(frozen - Ac, uval[box], T.u.values)
        total_I += I_P
        total_II += II_P
        records.append(CubeTerm(P, A_P, I_P, II_P, box, flux if keep_fields else None,
                                T.grad_u.values if keep_fields else None))
    denom = max(abs(direct), abs(total_I), abs(total_II), 1e-300)
    err = abs(direct - (total_I + total_II)) / denom
    return PairingSplit(total_I, total_II, direct, err, variant, records)


# ---------------------------------------------------------------- iteration


@dataclass
class Level:
    k: int
    cube_count: int
    sampled: int
    term_sum: float
    remainder: float
    interpolation_error: float = 0.0

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class IterationTrace:
    levels: list
    K: int
    variant: str
    decay_ratio: float
    lhs: float
    truncated: bool = False
    Q0: Cube = None
    chain: Optional[FrozenOperatorChain] = field(default=None, repr=False)

    def to_json(self) -> dict:
        return {
            "variant": self.variant,
            "K": self.K,
            "decay_ratio": self.decay_ratio,
            "lhs": self.lhs,
            "truncated": self.truncated,
            "Q0": None if self.Q0 is None else self.Q0.to_json(),
            "levels": [lv.to_json() for lv in self.levels],
        }


@dataclass
class _Node:
    cube: Cube
    spec: GridSpec
    O: np.ndarray
    A_P: np.ndarray
    parent: int = -1


@dataclass
class FrozenOperatorChain:
    """Iterated fields O_{P,j} g for every sampled cube, level by level.

    ``levels[j]`` lists (cube, parent index in level j-1, grid, nodal field).
    Level 0 holds the input cut-off field on 3Q0.
    """

    levels: list = field(default_factory=list)

    def field_of(self, j: int, i: int) -> GridField:
        _cube, _parent, spec, O = self.levels[j][i]
        return GridField(spec, O)

    def ancestry(self, j: int, i: int) -> list:
        out = []
        while j >= 0:
            cube, parent, _s, _O = self.levels[j][i]
            out.append(cube)
            i, j = parent, j - 1
        return out[::-1]


def _coeff_sampler(A) -> Callable:
    if isinstance(A, CoefficientField):
        if A.model is not None:
            return A.model
        base = A.base
        return lambda x: interpolate(base, x)
    if callable(A):
        return A
    raise InvalidArgument("A must be a CoefficientField or a callable")


def _lp_norm(vals: np.ndarray, spec: GridSpec, r: float) -> float:
    mag = np.sqrt(np.sum(vals ** 2, axis=-1))
    integral = float(mean_over(GridField(spec, mag ** r), spec.domain)) * spec.domain.volume
    return integral ** (1.0 / r)


def _level_children(parent: Cube, variant: str) -> list:
    if variant == "holder":
        return subdivide_F(dilate(parent, 3.0), 27)
    return subdivide_F(parent, 8)


def _sample_children(parents: list, variant: str, budget: int, rng) -> list:
    pairs = []
    for i, node in enumerate(parents):
        for c in _level_children(node.cube, variant):
            pairs.append((i, c))
    if len(pairs) <= budget:
        return pairs
    pick = np.sort(rng.choice(len(pairs), size=budget, replace=False))
    return [pairs[j] for j in pick]


def run_iteration(A, u: GridField, g, Q0: Cube, K: int = 3, variant: str = "lq", q_or_p: float = 4.0,
                  m_local: int = 17, budget: int = 16, seed: int = 0, tol: float = DEFAULT_TOL,
                  psi0: Optional[Callable] = None, keep_chain: bool = False) -> IterationTrace:
    """Level sums of the frozen-coefficient recursion on fresh per-cube grids.

    Each level samples at most ``budget`` cubes among the children of the
    previously sampled cubes (uniform, seeded) and reweights by the true count.
    ``q_or_p`` is q for ``lq`` and p for ``holder``.

    Level k >= 1 carries the multiplier norm sup_{3P}|A - A_P| of the pairing
    it bounds, so constant coefficients give identically zero higher levels.
    """
    _check_variant(variant)
    if K < 0:
        raise InvalidArgument("depth must be non-negative")
    if m_local < MIN_LOCAL_NODES:
        raise TooCoarseError(f"m_local must be at least {MIN_LOCAL_NODES}")
    n = Q0.n
    if variant == "lq":
        q = float(q_or_p)
        if not q > 2:
            raise InvalidArgument("q must exceed 2")
        qp = q / (q - 1)
    else:
        p = float(q_or_p)
        check_p(p, n)
        alpha = n * (1 / p - 1)
    Amodel = _coeff_sampler(A)
    grad_u = GridField(u.spec, q1_space(u.spec).nodal_gradient(u.values))
    rng = np.random.default_rng(seed)
    gfun = (lambda x: interpolate(g, x)) if isinstance(g, GridField) else g
    if psi0 is None:
        psi0 = lambda x: smooth_bump(x, Q0, 2.0, 3.0)  # noqa: E731

    def grad_sq_mean(spec):
        gu = interpolate(grad_u, spec.points())
        return float(mean_over(GridField(spec, np.sum(gu ** 2, axis=-1)), spec.domain))

    # level 0
    spec0 = GridSpec(dilate(Q0, 3.0), m_local if variant == "holder" else 2 * m_local - 1)
    pts0 = spec0.points()
    g0 = np.asarray(gfun(pts0), float)
    if variant == "holder":
        g0 = g0 * psi0(pts0)[..., None]
        norm0 = hardy_z_norm(GridField(spec0, g0), spec0.domain, p).value
        term0 = math.sqrt(grad_sq_mean(spec0)) * norm0
        lhs = abs(float(mean_over(GridField(spec0, np.sum(interpolate(grad_u, pts0) * g0, -1)), spec0.domain))
                  * spec0.domain.volume)
    else:
        norm0 = _lp_norm(g0, spec0, qp)
        term0 = Q0.volume ** (1 / q) * math.sqrt(grad_sq_mean(spec0)) * norm0
        ind = np.all(np.abs(pts0 - np.asarray(Q0.center)) <= Q0.half_side + 1e-12, axis=-1)
        lhs = abs(float(mean_over(GridField(spec0, ind * np.sum(interpolate(grad_u, pts0) * g0, -1)),
                                  spec0.domain)) * spec0.domain.volume)
    levels = [Level(0, 1, 1, term0, lhs)]
    parents = [_Node(Q0, spec0, g0, np.eye(n))]
    chain = FrozenOperatorChain([[(Q0, -1, spec0, g0)]]) if keep_chain else None
    truncated = False
    ratio = RATIO[variant]
    for k in range(1, K + 1):
        chosen = _sample_children(parents, variant, budget, rng)
        total = ratio ** (n * k)
        weight = total / max(len(chosen), 1)
        term = 0.0
        rem = 0.0
        interp_err = 0.0
        new = []
        try:
            for j, (pi, P) in enumerate(chosen):
                pa = parents[pi]
                P3 = dilate(P, 3.0)
                spec = GridSpec(P3, m_local)
                pts = spec.points()
                space = q1_space(spec)
                Anod = np.asarray(Amodel(pts), float)
                Acell = np.asarray(Amodel(spec.cell_centroids()), float).reshape(-1, n, n)
                A_P = _frozen_mean(Acell)
                O_in = _resample_nodal(pa.spec, pa.O, pts)
                if j == 0:
                    interp_err = max(interp_err, _interp_error(pa.spec, pa.O, spec))
                if k == 1:
                    mult = O_in
                else:
                    mult = np.einsum("...lk,...l->...k", Anod - pa.A_P, O_in)
                if variant == "holder":
                    cut = smooth_bump(pts, P)
                else:
                    cut = np.all(np.abs(pts - np.asarray(P.center)) < P.half_side + 1e-12 * P.side, axis=-1)
                f = cut[..., None] * mult
                frozen_t = np.broadcast_to(A_P.T, Acell.shape)
                T = solve_system(spec, frozen_t, space.div_load(space.cell_average(f)), np.zeros(spec.size), tol)
                O = T.grad_u.values
                dev = Anod - A_P
                D = float(np.max(np.sqrt(np.sum(dev ** 2, axis=(-1, -2)))))
                gu = interpolate(grad_u, pts)
                l2 = math.sqrt(float(mean_over(GridField(spec, np.sum(gu ** 2, -1)), P3)))
                if variant == "holder":
                    hn = hardy_z_norm(GridField(spec, O), P3, p).value if np.any(O) else 0.0
                    term += weight * 27.0 ** (-k * (alpha + n)) * D * l2 * hn
                else:
                    term += weight * P.volume ** (1 / q) * D * l2 * _lp_norm(O, spec, qp)
                pair = np.sum(np.einsum("...kl,...l->...k", dev, gu) * O, axis=-1)
                rem += weight * float(mean_over(GridField(spec, pair), P3)) * P3.volume
                new.append(_Node(P, spec, O, A_P, pi))
        except TooCoarseError:
            truncated = True
            break
        levels.append(Level(k, total, len(chosen), term, abs(rem), interp_err))
        if chain is not None:
            chain.levels.append([(nd.cube, nd.parent, nd.spec, nd.O) for nd in new])
        parents = new
        if not new:
            break
    decay = 0.0
    for a, b in zip(levels[1:], levels[2:]):
        if a.term_sum > 0:
            decay = max(decay, b.term_sum / a.term_sum)
        elif b.term_sum > 0:
            decay = math.inf
    return IterationTrace(levels, K, variant, decay, lhs, truncated, Q0, chain)


def _resample_nodal(spec: GridSpec, vals: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return interpolate(GridField(spec, vals), pts, fill=0.0)


def _interp_error(spec: GridSpec, vals: np.ndarray, target: GridSpec) -> float:
    """Relative L2 gap on a 2m-1 grid between direct resampling and the m-node reconstruction."""
    fine = GridSpec(target.domain, 2 * target.m - 1)
    direct = _resample_nodal(spec, vals, fine.points())
    coarse = _resample_nodal(spec, vals, target.points())
    recon = _resample_nodal(target, coarse, fine.points())
    scale = float(np.sqrt(np.sum(direct ** 2)))
    if scale == 0.0:
        return 0.0
    return float(np.sqrt(np.sum((direct - recon) ** 2))) / scale


def calibrate_delta(make_trace: Callable[[float], IterationTrace], side_max: float, threshold: float = 0.5,
                    steps: int = 8, min_side: Optional[float] = None) -> dict:
    """Largest cube side (by geometric bisection) with decay_ratio below ``threshold``.

    ``make_trace(side)`` runs the iteration on a cube of that side.
    """
    lo = side_max / 2 ** 10 if min_side is None else min_side
    hi = side_max
    history = []
    t = make_trace(hi)
    history.append((hi, t.decay_ratio))
    if t.decay_ratio < threshold:
        return {"delta": hi, "decay_ratio": t.decay_ratio, "history": history, "bracketed": True}
    tl = make_trace(lo)
    history.append((lo, tl.decay_ratio))
    if not tl.decay_ratio < threshold:
        return {"delta": None, "decay_ratio": tl.decay_ratio, "history": history, "bracketed": False}
    best = (lo, tl.decay_ratio)
    for _ in range(steps):
        mid = math.sqrt(lo * hi)
        tm = make_trace(mid)
        history.append((mid, tm.decay_ratio))
        if tm.decay_ratio < threshold:
            lo = mid
            best = (mid, tm.decay_ratio)
        else:
            hi = mid
    return {"delta": best[0], "decay_ratio": best[1], "history": history, "bracketed": True}


# ---------------------------------------------------------------- gradient bounds and integrability


@dataclass
class GradientBounds:
    holder_quotient: float
    sup_norm: float
    l2_avg: float
    flagged: bool = False

    def to_json(self) -> dict:
        return dict(self.__dict__)


def gradient_bounds_from_duality(A, u: GridField, Q0: Cube, alpha: float,
                                 grad_u: Optional[GridField] = None) -> GradientBounds:
    """Hölder quotient and sup norm of grad u on 2Q0 against the L2 average on 4Q0."""
    if grad_u is None:
        grad_u = GridField(u.spec, q1_space(u.spec).nodal_gradient(u.values))
    two = dilate(Q0, 2.0)
    four = dilate(Q0, 4.0)
    semi = holder_seminorm(grad_u, alpha, two)
    sl = grad_u.spec.node_box(two, closed=True)
    sup = float(np.max(np.sqrt(np.sum(grad_u.values[sl] ** 2, axis=-1))))
    l2 = math.sqrt(float(mean_over(GridField(grad_u.spec, np.sum(grad_u.values ** 2, -1)), four)))
    if l2 == 0.0:
        return GradientBounds(0.0 if semi == 0 else math.inf, sup, 0.0, semi != 0)
    return GradientBounds(semi * Q0.side ** alpha / l2, sup, l2)


def meyers_scan(grad_u: GridField, Q: Cube, q_grid: Sequence[float]) -> dict:
    """(mean_Q |grad u|^q)^{1/q} / (mean_{2Q} |grad u|^2)^{1/2} for each q."""
    mag = grad_u.magnitude()
    spec = grad_u.spec
    den = math.sqrt(float(mean_over(GridField(spec, mag ** 2), dilate(Q, 2.0))))
    out = {}
    for q in q_grid:
        num = float(mean_over(GridField(spec, mag ** q), Q)) ** (1.0 / q)
        out[float(q)] = num / den if den > 0 else (1.0 if num == 0 else math.inf)
    return out
