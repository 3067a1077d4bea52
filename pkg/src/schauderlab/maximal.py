"""Hardy-Littlewood, smooth local and grand local maximal operators.

Convolutions extend fields by zero outside their grid.  Small kernels use the
direct-sum kernel from :mod:`._kernels`; large ones switch to FFT convolution,
which changes results only at round-off level.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import integrate, ndimage, signal

from . import _kernels
from .errors import InvalidArgument, UnderResolvedError
from .field import GridField

FFT_THRESHOLD = 625  # kernel entries above which FFT convolution is used


def eta(t):
    """1D profile exp(-1/(1 - t^2)) on (-1, 1), zero elsewhere."""
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ti * ti))
    return out


def eta_derivative(t, order: int):
    """Analytic derivatives of :func:`eta` up to order 3."""
    t = np.asarray(t, float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    x = t[inside]
    u = 1.0 - x * x
    e = np.exp(-1.0 / u)
    g1 = -2 * x / u ** 2
    g2 = -2 / u ** 2 - 8 * x * x / u ** 3
    g3 = -24 * x / u ** 3 - 48 * x ** 3 / u ** 4
    if order == 0:
        out[inside] = e
    elif order == 1:
        out[inside] = g1 * e
    elif order == 2:
        out[inside] = (g2 + g1 * g1) * e
    elif order == 3:
        out[inside] = (g3 + 3 * g1 * g2 + g1 ** 3) * e
    else:
        raise InvalidArgument("derivative order must be 0..3")
    return out


@lru_cache(maxsize=None)
def eta_integral() -> float:
    val, _ = integrate.quad(lambda t: math.exp(-1.0 / (1.0 - t * t)), -1, 1, epsabs=1e-14, epsrel=1e-13)
    return val


def mollifier_constant(n: int) -> float:
    """c_n making the continuum mollifier integrate to one."""
    return eta_integral() ** (-n)


@dataclass(frozen=True, eq=False)
class Kernel:
    values: np.ndarray
    h: float
    radius: float

    @property
    def mass(self) -> float:
        return float(self.values.sum() * self.h ** self.values.ndim)

    def to_json(self) -> dict:
        return {"h": self.h, "radius": self.radius, "values": self.values.tolist()}


def _support_nodes(s: float, h: float) -> int:
    """Largest K with K*h < s."""
    K = int(math.ceil(s / h - 1e-9)) - 1
    return max(K, 0)


def _profile_grid(s: float, h: float, n: int, width=1.0, offset=None, order=None):
    K = _support_nodes(s, h)
    t = np.arange(-K, K + 1) * h / s
    out = None
    for i in range(n):
        o = 0.0 if offset is None else offset[i]
        arg = (t - o) / width
        v = eta(arg) if order is None else eta_derivative(arg, order[i])
        out = v if out is None else np.multiply.outer(out, v)
    return out


def mollifier(s: float, h: float, n: int = 2) -> Kernel:
    """Discrete phi_s = s^{-n} phi(./s), normalised to unit discrete mass."""
    if s < 2 * h * (1 - 1e-12):
        raise UnderResolvedError(f"mollifier scale {s} below two grid spacings ({2 * h})")
    vals = _profile_grid(s, h, n)
    vals = vals / (vals.sum() * h ** n)
    return Kernel(vals, h, s)


def radius_ladder(s: float, h: float) -> list:
    """Dyadic radii s/2, s/4, ... kept while r >= 2h."""
    if s < 4 * h * (1 - 1e-12):
        raise UnderResolvedError(f"scale s={s} below four grid spacings ({4 * h})")
    out = []
    r = s / 2.0
    while r >= 2 * h * (1 - 1e-12):
        out.append(r)
        r /= 2.0
    return out


def convolve(a: np.ndarray, ker: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' convolution of a (spatial) array with an odd kernel."""
    if ker.size > FFT_THRESHOLD:
        return signal.fftconvolve(a, ker, mode="same")
    return _kernels.convolve_direct(a, ker)


def _components(f) -> tuple:
    """Spatial array(s) of a field or raw array plus its spacing."""
    if isinstance(f, GridField):
        n = f.spec.n
        v = f.values
        comps = [v] if v.ndim == n else [c for c in np.moveaxis(v.reshape(v.shape[:n] + (-1,)), -1, 0)]
        return comps, f.spec.h, n
    raise InvalidArgument("expected a GridField")


def _sup_abs_conv(comps, kernels) -> np.ndarray:
    best = None
    for ker in kernels:
        acc = None
        for c in comps:
            r = convolve(c, ker)
            acc = r * r if acc is None else acc + r * r
        mag = np.sqrt(acc)
        best = mag if best is None else np.maximum(best, mag)
    return best


def smooth_maximal_array(comps: Sequence[np.ndarray], h: float, s: float) -> np.ndarray:
    n = comps[0].ndim
    kernels = [mollifier(r, h, n).values * h ** n for r in radius_ladder(s, h)]
    return _sup_abs_conv(comps, kernels)


def smooth_maximal(f: GridField, s: float) -> GridField:
    """sup over the radius ladder of |phi_r * f| (Euclidean norm for vectors)."""
    comps, h, _n = _components(f)
    return GridField(f.spec, smooth_maximal_array(comps, h, s))


# ---------------------------------------------------------------- Hardy-Littlewood


def hl_radii(m: int) -> list:
    """Half-widths (in nodes) 1, 2, 4, ... of cubes fitting inside an m-node grid."""
    out = []
    k = 1
    while 2 * k + 1 <= m:
        out.append(k)
        k *= 2
    return out


def hl_maximal_array(a: np.ndarray) -> np.ndarray:
    a = np.abs(np.asarray(a, float))
    best = np.zeros_like(a)
    for k in hl_radii(min(a.shape)):
        means = _kernels.box_means(a, k)
        full = np.full(a.shape, -np.inf)
        full[tuple(slice(k, s - k) for s in a.shape)] = means
        spread = ndimage.maximum_filter(full, size=2 * k + 1, mode="constant", cval=-np.inf)
        best = np.maximum(best, spread)
    return best


def hl_maximal(f: GridField) -> GridField:
    """Sup of averages of |f| over grid-aligned node cubes containing each node.

    Cubes have half-sides h, 2h, 4h, ... and lie inside the grid.
    """
    if f.kind == "scalar":
        a = f.values
    else:
        a = f.magnitude()
    return GridField(f.spec, hl_maximal_array(a))


# ---------------------------------------------------------------- grand maximal


@dataclass(frozen=True)
class Bump:
    """Profile ``amplitude * c_n * prod eta((x_i - offset_i) / width)`` on Q(0, 1)."""

    width: float
    offset: tuple
    amplitude: float

    def to_json(self) -> dict:
        return {"width": self.width, "offset": list(self.offset), "amplitude": self.amplitude}


def _multi_indices(n: int, N0: int):
    for gamma in np.ndindex(*(N0 + 1,) * n):
        if sum(gamma) <= N0:
            yield gamma


def derivative_sum_max(width: float, offset, n: int, N0: int, samples: int = 801,
                       ell: float = 2.0) -> float:
    """max over Q(0,1) of sum_{|g|<=N0} ell^{|g|} |d^g (c_n prod eta((x - o)/w))|."""
    x = np.linspace(-1, 1, samples)
    cn = mollifier_constant(n)
    total = None
    for gamma in _multi_indices(n, N0):
        term = None
        for i in range(n):
            v = eta_derivative((x - offset[i]) / width, gamma[i]) * width ** (-gamma[i])
            v = np.abs(v)
            term = v if term is None else np.multiply.outer(term, v)
        term = term * cn * ell ** sum(gamma)
        total = term if total is None else total + term
    return float(total.max())


@dataclass(frozen=True, eq=False)
class BumpDictionary:
    bumps: tuple
    N0: int
    n: int

    def __post_init__(self):
        if len(self.bumps) == 0:
            raise InvalidArgument("bump dictionary is empty")

    def __len__(self):
        return len(self.bumps)

    def kernels(self, t: float, h: float) -> list:
        """Sampled kernels phi_t for every bump, sharing the mollifier's discrete mass constant."""
        n = self.n
        base = _profile_grid(t, h, n)
        ct = 1.0 / (base.sum() * h ** n)  # discrete replacement of c_n t^{-n}
        cn = mollifier_constant(n)
        out = []
        for b in self.bumps:
            v = _profile_grid(t, h, n, b.width, b.offset)
            out.append(b.amplitude * cn * ct * v)
        return out

    def certificate(self, samples: int = 401) -> list:
        """Sampled derivative sums; each must be <= 1.05."""
        return [derivative_sum_max(b.width, b.offset, self.n, self.N0, samples) * b.amplitude for b in self.bumps]

    def to_json(self) -> dict:
        return {"N0": self.N0, "n": self.n, "bumps": [b.to_json() for b in self.bumps]}


def make_bump(width: float, offset, n: int, N0: int) -> Bump:
    offset = tuple(float(o) for o in offset)
    if width <= 0 or any(abs(o) + width > 1 + 1e-12 for o in offset):
        raise InvalidArgument("bump support must lie in Q(0, 1)")
    amp = 1.0 / derivative_sum_max(width, offset, n, N0)
    return Bump(float(width), offset, amp)


def standard_dictionary(n: int = 2, N0: int = 2) -> BumpDictionary:
    return BumpDictionary((make_bump(1.0, (0.0,) * n, n, N0),), N0, n)


def _offset_patterns(n: int, count: int) -> list:
    pats = [(0.0,) * n]
    signs = list(np.ndindex(*(2,) * n))
    for sgn in signs:
        pats.append(tuple(0.5 if s else -0.5 for s in sgn))
    # axis-aligned shifts for larger requests
    for i in range(n):
        for sg in (0.5, -0.5):
            p = [0.0] * n
            p[i] = sg
            pats.append(tuple(p))
    return pats[:count]


def default_dictionary(n: int = 2, widths: int = 5, offsets: int = 5, N0: int = 2,
                       min_width: float = 0.4) -> BumpDictionary:
    """Tensor bumps at ``widths`` widths times ``offsets`` offsets.

    Widths run from 1 down to ``min_width``; offsets are fractions of the free
    room 1 - width, so at full width all offsets coincide and only one copy is kept.
    """
    ws = np.linspace(1.0, min_width, widths) if widths > 1 else np.array([1.0])
    seen = set()
    bumps = []
    for w in ws:
        for pat in _offset_patterns(n, offsets):
            off = tuple(round((1.0 - w) * p, 12) for p in pat)
            key = (round(float(w), 12), off)
            if key in seen:
                continue
            seen.add(key)
            bumps.append(make_bump(float(w), off, n, N0))
    return BumpDictionary(tuple(bumps), N0, n)


def grand_maximal_array(comps, h: float, s: float, D: BumpDictionary) -> np.ndarray:
    kernels = []
    for t in radius_ladder(s, h):
        kernels.extend(k * h ** D.n for k in D.kernels(t, h))
    return _sup_abs_conv(comps, kernels)


def grand_maximal(f: GridField, s: float, D: BumpDictionary) -> GridField:
    if not isinstance(D, BumpDictionary) or len(D) == 0:
        raise InvalidArgument("a non-empty BumpDictionary is required")
    comps, h, n = _components(f)
    if D.n != n:
        raise InvalidArgument("dictionary dimension does not match field")
    return GridField(f.spec, grand_maximal_array(comps, h, s, D))
