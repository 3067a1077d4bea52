"""Nodal fields on uniform grids, coefficient fields and seminorms."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from . import _kernels
from .errors import EllipticityViolation, InvalidArgument
from .grid import Cube, GridSpec

KINDS = ("scalar", "vector", "matrix")


@dataclass(frozen=True, eq=False)
class GridField:
    """Values attached to the nodes of a :class:`GridSpec`.

    ``values`` has shape ``spec.shape`` (scalar), ``spec.shape + (d,)``
    (vector) or ``spec.shape + (d, d)`` (matrix).  The array is made
    read-only on construction.
    """

    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.shape[: self.spec.n] != self.spec.shape:
            raise InvalidArgument(f"values shape {v.shape} incompatible with grid {self.spec.shape}")
        if v.ndim - self.spec.n > 2:
            raise InvalidArgument("fields carry at most two value axes")
        if not np.all(np.isfinite(v)):
            raise InvalidArgument("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def kind(self) -> str:
        return KINDS[self.values.ndim - self.spec.n]

    @property
    def value_shape(self) -> tuple:
        return self.values.shape[self.spec.n:]

    def flat(self) -> np.ndarray:
        """Values reshaped to ``(nodes, components)``."""
        return self.values.reshape(self.spec.size, -1)

    def magnitude(self) -> np.ndarray:
        """Pointwise Euclidean (vector) or Frobenius (matrix) norm."""
        if self.kind == "scalar":
            return np.abs(self.values)
        ax = tuple(range(self.spec.n, self.values.ndim))
        return np.sqrt(np.sum(self.values ** 2, axis=ax))

    def restrict(self, cube: Cube) -> "GridField":
        """Restriction to the nodes inside ``cube`` (must form a cubic sub-grid)."""
        sl = self.spec.node_box(cube, closed=True)
        return GridField(self.spec.sub_spec(sl), self.values[sl])

    def sub(self, sl) -> "GridField":
        return GridField(self.spec.sub_spec(sl), self.values[sl])

    def resample(self, spec: GridSpec, fill: float = 0.0) -> "GridField":
        """Multilinear interpolation onto another grid; outside points get ``fill``."""
        return GridField(spec, interpolate(self, spec.points(), fill))

    def with_values(self, values) -> "GridField":
        return GridField(self.spec, values)

    def __add__(self, other):
        if isinstance(other, GridField):
            _same_grid(self, other)
            return self.with_values(self.values + other.values)
        return self.with_values(self.values + other)

    def __mul__(self, c):
        return self.with_values(self.values * c)

    __rmul__ = __mul__

    def __neg__(self):
        return self.with_values(-self.values)

    def __sub__(self, other):
        return self + (-other)


def _same_grid(a: GridField, b: GridField):
    if a.spec != b.spec:
        raise InvalidArgument("fields live on different grids")


def sample(spec: GridSpec, fn: Callable) -> GridField:
    """Evaluate ``fn(points)`` at the nodes; ``fn`` maps ``(..., n)`` to values."""
    return GridField(spec, np.asarray(fn(spec.points()), dtype=float))


def interpolate(f: GridField, points: np.ndarray, fill: float = 0.0) -> np.ndarray:
    pts = np.asarray(points, float)
    interp = RegularGridInterpolator(
        f.spec.axes(), f.values, method="linear", bounds_error=False, fill_value=None
    )
    out = interp(pts.reshape(-1, f.spec.n))
    # points slightly outside (round-off) are clamped, genuinely outside ones filled
    tol = 1e-9 * f.spec.h
    lo, hi = f.spec.domain.lower, f.spec.domain.upper
    flat = pts.reshape(-1, f.spec.n)
    outside = np.any((flat < lo - tol) | (flat > hi + tol), axis=1)
    out[outside] = fill
    return out.reshape(pts.shape[:-1] + f.value_shape)


# ---------------------------------------------------------------- coefficient fields


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Validated matrix field with ellipticity constants.

    ``cells`` optionally holds exact centroid samples used by the solver;
    ``model`` optionally holds the generating callable so subgrids can be
    resampled without interpolation error.
    """

    base: GridField
    lam: float
    Lam: float
    cells: Optional[np.ndarray] = field(default=None, repr=False)
    model: Optional[Callable] = field(default=None, repr=False)

    @property
    def spec(self) -> GridSpec:
        return self.base.spec

    def cell_values(self) -> np.ndarray:
        """Per-cell matrices, shape ``(cells, n, n)``."""
        if self.cells is not None:
            return self.cells.reshape(-1, self.spec.n, self.spec.n)
        return _corner_average(self.base.values, self.spec.n).reshape(-1, self.spec.n, self.spec.n)

    def transpose(self) -> "CoefficientField":
        t = np.swapaxes(self.base.values, -1, -2)
        cells = None if self.cells is None else np.swapaxes(self.cells, -1, -2)
        model = None
        if self.model is not None:
            mdl = self.model
            model = lambda x: np.swapaxes(mdl(x), -1, -2)  # noqa: E731
        return CoefficientField(GridField(self.spec, t), self.lam, self.Lam, cells, model)

    def on(self, spec: GridSpec) -> "CoefficientField":
        """The same coefficients on another grid (exact if a model is attached)."""
        if spec == self.spec:
            return self
        if self.model is not None:
            return from_model(spec, self.model, self.lam, self.Lam, validate=False)
        base = self.base.resample(spec)
        return CoefficientField(base, self.lam, self.Lam)

    def restrict(self, sl) -> "CoefficientField":
        sub = self.base.sub(sl)
        cells = None
        if self.cells is not None:
            csl = tuple(slice(s.start, s.stop - 1) for s in sl)
            cells = self.cells[csl]
        return CoefficientField(sub, self.lam, self.Lam, cells, self.model)

    def mean_over(self, P: Cube) -> np.ndarray:
        """Cell-weighted average of the coefficients over the cells inside P."""
        sl = self.spec.node_box(P, closed=True)
        csl = tuple(slice(s.start, max(s.start, s.stop - 1)) for s in sl)
        n = self.spec.n
        if self.cells is not None:
            c = self.cells[csl]
        else:
            c = _corner_average(self.base.values, n)[csl]
        if c.size == 0:
            raise InvalidArgument("cube contains no grid cell")
        return c.reshape(-1, n, n).mean(axis=0)

    @classmethod
    def constant(cls, spec: GridSpec, M, lam=None, Lam=None) -> "CoefficientField":
        M = np.asarray(M, float)
        vals = np.broadcast_to(M, spec.shape + M.shape)
        ev = np.linalg.eigvalsh(0.5 * (M + M.T))
        lam = float(ev.min()) if lam is None else lam
        Lam = float(np.linalg.norm(M, 2)) if Lam is None else Lam
        cells = np.broadcast_to(M, tuple(s - 1 for s in spec.shape) + M.shape).copy()
        mdl = lambda x: np.broadcast_to(M, np.shape(x)[:-1] + M.shape)  # noqa: E731
        return cls(GridField(spec, vals), lam, Lam, cells, mdl)


def _corner_average(v: np.ndarray, n: int) -> np.ndarray:
    acc = 0.0
    for corner in np.ndindex(*(2,) * n):
        sl = tuple(slice(c, c + s - 1) for c, s in zip(corner, v.shape[:n]))
        acc = acc + v[sl]
    return acc / 2 ** n


def from_model(spec: GridSpec, model: Callable, lam: float, Lam: float, validate=True,
               mode: str = "quadratic") -> CoefficientField:
    """Sample a coefficient callable at nodes and cell centroids."""
    base = GridField(spec, model(spec.points()))
    cells = np.asarray(model(spec.cell_centroids()), float)
    if validate:
        ellipticity_check(base, lam, Lam, mode=mode)
        ellipticity_check_array(cells, lam, Lam, mode=mode)
    return CoefficientField(base, lam, Lam, cells, model)


# ---------------------------------------------------------------- means & seminorms


def _trap_weights(k: int) -> np.ndarray:
    w = np.ones(k)
    if k > 1:
        w[0] = w[-1] = 0.5
    return w


def mean_over(f, P: Cube):
    """Average over the nodes inside P (tensor trapezoid weights)."""
    if isinstance(f, CoefficientField):
        f = f.base
    sl = f.spec.node_box(P, closed=True)
    if f.spec.box_count(sl) == 0:
        raise InvalidArgument("cube does not meet the field's grid")
    vals = f.values[sl]
    n = f.spec.n
    flat = vals.reshape((-1,) + f.value_shape)
    if np.all(flat == flat[0]):
        return flat[0].copy() if flat.ndim > 1 else float(flat[0])
    w = _trap_weights(vals.shape[0])
    for i in range(1, n):
        w = np.multiply.outer(w, _trap_weights(vals.shape[i]))
    w = w / w.sum()
    out = np.tensordot(w, vals, axes=(tuple(range(n)), tuple(range(n))))
    return float(out) if np.ndim(out) == 0 else out


HOLDER_FULL_LIMIT = 33
HOLDER_NEAR_RADIUS = 8
HOLDER_FAR_PAIRS = 100_000
HOLDER_SEED = 20240611


def holder_seminorm(f: GridField, alpha: float, R: Cube | None = None, *, full: bool | None = None) -> float:
    """Hölder quotient ``max |f(x) - f(y)| / |x - y|^alpha`` over node pairs in R.

    All pairs are enumerated when R holds at most 33 nodes per axis.  Above
    that, every pair within sup-distance 8h is checked together with 10^5
    random far pairs drawn with a fixed seed.
    """
    if not (0.0 < alpha < 1.0):
        raise InvalidArgument(f"alpha must lie in (0, 1), got {alpha!r}")
    spec = f.spec
    sl = spec.node_box(R, closed=True) if R is not None else tuple(slice(0, spec.m) for _ in range(spec.n))
    if spec.box_count(sl) < 2:
        raise InvalidArgument("need at least two nodes in R")
    vals = f.values[sl].reshape(tuple(s.stop - s.start for s in sl) + (-1,))
    ext = vals.shape[: spec.n]
    if full is None:
        full = max(ext) <= HOLDER_FULL_LIMIT
    h = spec.h
    if full:
        offs = _kernels.half_space_offsets(ext)
        return _kernels.holder_over_offsets(vals, spec.n, h, alpha, offs)
    offs = _kernels.half_space_offsets(ext, HOLDER_NEAR_RADIUS)
    best = _kernels.holder_over_offsets(vals, spec.n, h, alpha, offs)
    rng = np.random.default_rng(HOLDER_SEED)
    N = int(np.prod(ext))
    flat = vals.reshape(N, -1)
    i = rng.integers(0, N, HOLDER_FAR_PAIRS)
    j = rng.integers(0, N, HOLDER_FAR_PAIRS)
    ci = np.stack(np.unravel_index(i, ext), axis=1)
    cj = np.stack(np.unravel_index(j, ext), axis=1)
    dist = h * np.sqrt(np.sum((ci - cj).astype(float) ** 2, axis=1))
    ok = dist > 0
    num = np.sqrt(np.sum((flat[i] - flat[j]) ** 2, axis=1))
    if ok.any():
        best = max(best, float(np.max(num[ok] / dist[ok] ** alpha)))
    return best


# ---------------------------------------------------------------- ellipticity


def probe_directions(n: int) -> np.ndarray:
    """64 uniform angles in 2D; a 182-point Fibonacci sphere in 3D."""
    if n == 2:
        t = np.arange(64) * (2 * np.pi / 64)
        return np.stack([np.cos(t), np.sin(t)], axis=1)
    if n == 3:
        k = 182
        i = np.arange(k) + 0.5
        z = 1 - 2 * i / k
        r = np.sqrt(1 - z * z)
        phi = np.pi * (1 + 5 ** 0.5) * i
        return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    if n == 1:
        return np.array([[1.0]])
    raise InvalidArgument(f"unsupported dimension {n}")


def ellipticity_margins(A: np.ndarray, n: int, lam: float, Lam: float, mode: str = "quadratic"):
    """Per-node lower and upper margins (negative means violated).

    ``mode="quadratic"`` tests |A| <= Lambda with the operator norm;
    ``mode="spectrum"`` tests the spectrum of the symmetric part lies in [lam, Lam].
    """
    M = np.asarray(A, float).reshape(-1, n, n)
    xi = probe_directions(n)
    q = np.einsum("pi,kij,pj->kp", xi, M, xi)
    qmin = q.min(axis=1)
    arg = q.argmin(axis=1)
    lower = qmin - lam
    if mode == "spectrum":
        upper = Lam - np.linalg.eigvalsh(0.5 * (M + np.swapaxes(M, 1, 2)))[:, -1]
    elif mode == "quadratic":
        upper = Lam - np.linalg.norm(M, ord=2, axis=(1, 2))
    else:
        raise InvalidArgument(f"unknown ellipticity mode {mode!r}")
    return lower, upper, xi[arg]


def ellipticity_check_array(A: np.ndarray, lam: float, Lam: float, mode: str = "quadratic",
                            shape=None, points=None):
    n = A.shape[-1]
    if lam > Lam:
        raise InvalidArgument(f"lambda {lam} exceeds Lambda {Lam}")
    if not lam > 0:
        raise InvalidArgument("lambda must be positive")
    lower, upper, dirs = ellipticity_margins(A, n, lam, Lam, mode)
    shape = A.shape[:-2] if shape is None else shape
    tol = 1e-12
    if lower.min() < -tol:
        k = int(lower.argmin())
        node = np.unravel_index(k, shape)
        pt = None if points is None else points.reshape(-1, n)[k]
        raise EllipticityViolation(node, pt, dirs[k], lower[k], "lower")
    if upper.min() < -tol:
        k = int(upper.argmin())
        node = np.unravel_index(k, shape)
        pt = None if points is None else points.reshape(-1, n)[k]
        raise EllipticityViolation(node, pt, None, upper[k], "upper")


def ellipticity_check(A: GridField, lam: float, Lam: float, mode: str = "quadratic") -> CoefficientField:
    if A.kind != "matrix":
        raise InvalidArgument("ellipticity_check expects a matrix field")
    ellipticity_check_array(A.values, lam, Lam, mode, shape=A.spec.shape, points=A.spec.points())
    return CoefficientField(A, float(lam), float(Lam))


# ---------------------------------------------------------------- serialization

_MAGIC = b"SLF1"
_KIND_CODE = {"scalar": 0, "vector": 1, "matrix": 2}


def field_to_bytes(f: GridField) -> bytes:
    """Header (magic, n, m, kind, lower corner, side) then little-endian float64, row-major."""
    d = f.spec.domain
    head = _MAGIC + struct.pack("<iii", f.spec.n, f.spec.m, _KIND_CODE[f.kind])
    head += struct.pack("<%dd" % f.spec.n, *d.lower) + struct.pack("<d", d.side)
    return head + np.ascontiguousarray(f.values, dtype="<f8").tobytes()


def field_from_bytes(buf: bytes) -> GridField:
    if buf[:4] != _MAGIC:
        raise InvalidArgument("not a field payload")
    n, m, kind = struct.unpack_from("<iii", buf, 4)
    off = 16
    lower = struct.unpack_from("<%dd" % n, buf, off)
    off += 8 * n
    (side,) = struct.unpack_from("<d", buf, off)
    off += 8
    spec = GridSpec(Cube.from_corner(lower, side), m)
    vshape = ((), (n,), (n, n))[kind]
    vals = np.frombuffer(buf, dtype="<f8", offset=off).reshape(spec.shape + vshape)
    return GridField(spec, vals)


def field_to_json(f: GridField) -> str:
    return json.dumps({"spec": f.spec.to_json(), "kind": f.kind, "values": f.values.tolist()})


def field_from_json(s: str) -> GridField:
    obj = json.loads(s)
    return GridField(GridSpec.from_json(obj["spec"]), np.asarray(obj["values"], float))


def save_field(f: GridField, path) -> None:
    with open(path, "wb") as fh:
        fh.write(field_to_bytes(f))


def load_field(path) -> GridField:
    with open(path, "rb") as fh:
        return field_from_bytes(fh.read())


def is_close(a: float, b: float, rel: float) -> bool:
    return math.isclose(a, b, rel_tol=rel, abs_tol=0.0)
