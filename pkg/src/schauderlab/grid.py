"""Cube geometry, dyadic machinery, the F(Q) families and Whitney decompositions.

Cubes are open sup-norm balls ``Q(x, r) = {y : |x - y|_inf < r}``.  When cubes
tile a region they are treated as half-open boxes ``[a, b)`` anchored at the
lower-left corner of the parent, which makes partitions exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from .errors import InvalidArgument, InvalidWhitneyError, NoExteriorError

_EPS = 1e-9


@dataclass(frozen=True)
class Cube:
    center: tuple
    half_side: float

    def __post_init__(self):
        c = tuple(float(x) for x in np.ravel(self.center))
        if len(c) not in (1, 2, 3):
            raise InvalidArgument(f"cube dimension must be 1, 2 or 3, got {len(c)}")
        if not all(math.isfinite(x) for x in c):
            raise InvalidArgument("cube centre must be finite")
        r = float(self.half_side)
        if not (r > 0 and math.isfinite(r)):
            raise InvalidArgument(f"half_side must be positive, got {self.half_side!r}")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "half_side", r)

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def side(self) -> float:
        return 2.0 * self.half_side

    @property
    def lower(self) -> np.ndarray:
        return np.asarray(self.center) - self.half_side

    @property
    def upper(self) -> np.ndarray:
        return np.asarray(self.center) + self.half_side

    @property
    def volume(self) -> float:
        return self.side ** self.n

    def contains_point(self, x, closed=False, tol=0.0) -> bool:
        d = np.max(np.abs(np.asarray(x, float) - np.asarray(self.center)))
        return bool(d <= self.half_side + tol) if closed else bool(d < self.half_side + tol)

    def contains_cube(self, other: "Cube", tol=1e-12) -> bool:
        lo_ok = np.all(other.lower >= self.lower - tol * self.side)
        hi_ok = np.all(other.upper <= self.upper + tol * self.side)
        return bool(lo_ok and hi_ok)

    def intersects(self, other: "Cube") -> bool:
        """Open-cube intersection."""
        d = np.max(np.abs(np.asarray(self.center) - np.asarray(other.center)))
        return bool(d < self.half_side + other.half_side)

    def to_json(self) -> dict:
        return {"center": list(self.center), "half_side": self.half_side, "n": self.n}

    @classmethod
    def from_json(cls, obj) -> "Cube":
        c = cls(tuple(obj["center"]), obj["half_side"])
        if "n" in obj and int(obj["n"]) != c.n:
            raise InvalidArgument("cube JSON: n does not match centre length")
        return c

    @classmethod
    def from_corner(cls, lower, side) -> "Cube":
        lower = np.asarray(lower, float)
        return cls(tuple(lower + side / 2.0), side / 2.0)

    @classmethod
    def unit(cls, n: int = 2) -> "Cube":
        """The cube [0, 1]^n."""
        return cls((0.5,) * n, 0.5)


def dilate(Q: Cube, N: float) -> Cube:
    N = float(N)
    if not (N > 0 and math.isfinite(N)):
        raise InvalidArgument(f"dilation factor must be positive, got {N!r}")
    return Cube(Q.center, Q.half_side * N)


def _tile(Q: Cube, k: int) -> list:
    """Split Q into k^n equal half-open subcubes, row-major from the lower corner."""
    s = Q.side / k
    lo = Q.lower
    out = []
    for idx in np.ndindex(*(k,) * Q.n):
        c = lo + (np.asarray(idx) + 0.5) * s
        out.append(Cube(tuple(c), s / 2.0))
    return out


def subdivide_F(Q: Cube, ratio_exponent: int) -> list:
    """The family F(Q): equal subcubes of side l(Q)/27 or l(Q)/8."""
    if ratio_exponent not in (27, 8):
        raise InvalidArgument(f"ratio_exponent must be 27 or 8, got {ratio_exponent!r}")
    return _tile(Q, int(ratio_exponent))


def dyadic_subcubes(Q: Cube, depth: int) -> list:
    if int(depth) != depth or depth < 0:
        raise InvalidArgument(f"depth must be a non-negative integer, got {depth!r}")
    return _tile(Q, 2 ** int(depth))


def dyadic_parent_index(idx, levels: int):
    return tuple(int(i) >> levels for i in idx)


# ---------------------------------------------------------------- grids


@dataclass(frozen=True)
class GridSpec:
    """Uniform tensor grid with ``m`` nodes per axis on the closure of ``domain``."""

    domain: Cube
    m: int

    def __post_init__(self):
        if not isinstance(self.domain, Cube):
            raise InvalidArgument("GridSpec.domain must be a Cube")
        m = int(self.m)
        if m != self.m or m < 3:
            raise InvalidArgument(f"m must be an integer >= 3, got {self.m!r}")
        object.__setattr__(self, "m", m)

    @property
    def n(self) -> int:
        return self.domain.n

    @property
    def h(self) -> float:
        return self.domain.side / (self.m - 1)

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.n

    @property
    def size(self) -> int:
        return self.m ** self.n

    @property
    def cell_volume(self) -> float:
        return self.h ** self.n

    def axis(self, i: int = 0) -> np.ndarray:
        lo = self.domain.lower[i]
        return lo + self.h * np.arange(self.m)

    def axes(self) -> list:
        return [self.axis(i) for i in range(self.n)]

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``shape + (n,)``."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def cell_centroids(self) -> np.ndarray:
        ax = [a[:-1] + self.h / 2 for a in self.axes()]
        return np.stack(np.meshgrid(*ax, indexing="ij"), axis=-1)

    def _t(self, x, i):
        return (x - self.domain.lower[i]) / self.h

    def node_box(self, cube: Cube, closed: bool = True, tol: float = _EPS) -> tuple:
        """Index slices of nodes inside ``cube`` (geometric test, tiny tolerance).

        ``closed=False`` gives the half-open box ``[a, b)``.
        """
        sl = []
        for i in range(self.n):
            ta = self._t(cube.lower[i], i)
            tb = self._t(cube.upper[i], i)
            lo = max(0, math.ceil(ta - tol))
            if closed:
                hi = min(self.m - 1, math.floor(tb + tol))
            else:
                hi = min(self.m - 1, math.ceil(tb - tol) - 1)
            sl.append(slice(lo, max(lo, hi + 1)))
        return tuple(sl)

    def render_box(self, cube: Cube, closed: bool = True) -> tuple:
        """Nearest-node rendering: boundaries rounded with a half-spacing tolerance."""
        sl = []
        for i in range(self.n):
            lo = math.floor(self._t(cube.lower[i], i) + 0.5 + _EPS)
            hi = math.floor(self._t(cube.upper[i], i) + 0.5 + _EPS)
            if closed:
                hi += 1
            lo = max(lo, 0)
            hi = min(hi, self.m)
            sl.append(slice(lo, max(lo, hi)))
        return tuple(sl)

    def box_count(self, sl) -> int:
        return int(np.prod([s.stop - s.start for s in sl]))

    def sub_spec(self, sl) -> "GridSpec":
        """GridSpec for a cubic node sub-box given by index slices."""
        counts = {s.stop - s.start for s in sl}
        if len(counts) != 1:
            raise InvalidArgument(f"node box is not cubic: {[s.stop - s.start for s in sl]}")
        k = counts.pop()
        lo = np.array([self.axis(i)[s.start] for i, s in enumerate(sl)])
        side = (k - 1) * self.h
        if k < 3:
            raise InvalidArgument("sub-box needs at least 3 nodes per axis")
        return GridSpec(Cube(tuple(lo + side / 2), side / 2), k)

    def inside_mask(self, cube: Cube, closed: bool = True) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[self.node_box(cube, closed)] = True
        return mask

    def to_json(self) -> dict:
        return {"domain": self.domain.to_json(), "m": self.m}

    @classmethod
    def from_json(cls, obj) -> "GridSpec":
        return cls(Cube.from_json(obj["domain"]), int(obj["m"]))


# ---------------------------------------------------------------- Whitney


@dataclass
class WhitneyDecomposition:
    cubes: list
    generation: list
    ambient: Cube
    open_set_mask: np.ndarray
    Q: Cube
    spec: GridSpec = field(repr=False, default=None)

    def __len__(self):
        return len(self.cubes)

    def to_json(self) -> list:
        return [
            {"cube": c.to_json(), "generation": int(j)}
            for c, j in zip(self.cubes, self.generation)
        ]

    def overlap_count(self, dilation: float = 8.0) -> np.ndarray:
        cnt = np.zeros(self.spec.shape, dtype=np.int64)
        for c in self.cubes:
            cnt[self.spec.node_box(dilate(c, dilation), closed=False)] += 1
        return cnt

    def check(self) -> dict:
        """Measure the Whitney invariants on the node grid.

        Returns a dict with booleans ``containment``, ``exterior_contact``,
        ``cover``, ``shells`` and the integer ``max_overlap``.
        """
        return check_whitney(self)


def chessboard_distance(mask: np.ndarray, h: float) -> np.ndarray:
    """Sup-norm distance from each node to the nearest node outside ``mask``.

    Nodes beyond the grid count as exterior, so the outer ring of padding is False.
    """
    padded = np.pad(mask, 1, constant_values=False)
    d = ndimage.distance_transform_cdt(padded, metric="chessboard")
    inner = tuple(slice(1, -1) for _ in range(mask.ndim))
    return d[inner].astype(np.float64) * h


def _shell_index(d: float, ell: float) -> int:
    """Integer j with 2^{-j-1} ell < d <= 2^{-j} ell."""
    j = math.floor(math.log2(ell / d))
    while d > ell * 2.0 ** (-j):
        j -= 1
    while d <= ell * 2.0 ** (-j - 1):
        j += 1
    return j


def whitney_decompose(mask: np.ndarray, Q: Cube, spec: GridSpec | None = None) -> WhitneyDecomposition:
    """Whitney cubes of the node-sampled open set ``mask`` inside 3Q.

    Nodes at chessboard distance d from the complement lie in shell j when
    2^{-j-1} l(Q) < d <= 2^{-j} l(Q).  They select the dyadic subcube of 3Q of
    side 3 * 2^{-j-6} l(Q) containing them; maximal elements are kept.
    """
    mask = np.asarray(mask, dtype=bool)
    ambient = dilate(Q, 3.0)
    if spec is None:
        m = mask.shape[0]
        spec = GridSpec(ambient, m)
    if mask.shape != spec.shape:
        raise InvalidArgument(f"mask shape {mask.shape} does not match grid {spec.shape}")
    if mask.all():
        raise NoExteriorError("mask covers every node; distance to the complement is undefined")
    if not mask.any():
        return WhitneyDecomposition([], [], ambient, mask, Q, spec)

    h = spec.h
    ell = Q.side
    dist = chessboard_distance(mask, h)
    pts = spec.points()
    lo = ambient.lower
    cand = {}
    for idx in zip(*np.nonzero(mask)):
        j = _shell_index(dist[idx], ell)
        depth = j + 6
        if depth < 0:
            depth, j = 0, -6
        s = ambient.side * 2.0 ** (-depth)
        tile = np.floor((pts[idx] - lo) / s + _EPS).astype(int)
        tile = np.clip(tile, 0, 2 ** depth - 1)
        cand[(depth, tuple(int(t) for t in tile))] = j

    accepted = {}
    for depth, tile in sorted(cand, key=lambda k: (k[0], k[1])):
        covered = False
        for d0 in accepted:
            if d0 < depth and dyadic_parent_index(tile, depth - d0) in accepted[d0]:
                covered = True
                break
        if not covered:
            accepted.setdefault(depth, set()).add(tile)

    cubes, gens = [], []
    for depth in sorted(accepted):
        s = ambient.side * 2.0 ** (-depth)
        for tile in sorted(accepted[depth]):
            cubes.append(Cube.from_corner(lo + np.asarray(tile) * s, s))
            gens.append(cand[(depth, tile)])
    return WhitneyDecomposition(cubes, gens, ambient, mask, Q, spec)


def check_whitney(W: WhitneyDecomposition, overlap_cap: int = 100) -> dict:
    spec, mask = W.spec, W.open_set_mask
    h = spec.h
    ell = W.Q.side
    ext = ~mask
    dist = chessboard_distance(mask, h)
    containment = True
    contact = True
    shells = True
    covered = np.zeros(spec.shape, dtype=bool)
    pts_axes = spec.axes()
    for c, j in zip(W.cubes, W.generation):
        sl = spec.node_box(c, closed=True)
        if spec.box_count(sl) and not mask[sl].all():
            containment = False
        covered[spec.node_box(c, closed=True)] = True
        big = dilate(c, 64.0)
        sl64 = spec.node_box(big, closed=False)
        touches_edge = any(
            big.lower[i] < pts_axes[i][0] or big.upper[i] > pts_axes[i][-1] for i in range(spec.n)
        )
        if not (touches_edge or ext[sl64].any()):
            contact = False
        # distance of the centre measured at the nearest node
        near = tuple(
            int(np.clip(round((c.center[i] - pts_axes[i][0]) / h), 0, spec.m - 1)) for i in range(spec.n)
        )
        dc = dist[near] if mask[near] else 0.0
        lo_b = ell * 2.0 ** (-j - 1) - h - c.half_side
        hi_b = ell * 2.0 ** (-j) + h + c.half_side
        if not (lo_b < dc <= hi_b):
            shells = False
    max_overlap = int(W.overlap_count(8.0).max()) if W.cubes else 0
    return {
        "containment": containment,
        "exterior_contact": contact,
        "cover": bool(np.all(covered[mask])),
        "shells": shells,
        "max_overlap": max_overlap,
        "overlap_ok": max_overlap <= overlap_cap,
    }


def neighbour_ratio(cubes: Sequence[Cube]) -> float:
    """Largest side ratio among pairs whose doubles 2P, 2P' intersect."""
    if len(cubes) < 2:
        return 1.0
    c = np.array([q.center for q in cubes])
    r = np.array([q.half_side for q in cubes])
    worst = 1.0
    for i in range(len(cubes)):
        d = np.max(np.abs(c - c[i]), axis=1)
        near = d < 2 * r + 2 * r[i]
        near[i] = False
        if near.any():
            worst = max(worst, float(np.max(np.maximum(r[near] / r[i], r[i] / r[near]))))
    return worst


def cubes_from_json(items: Iterable) -> list:
    return [Cube.from_json(x) for x in items]
