"""Local Hardy norms, Campanato seminorms and the Hardy-Hölder pairing check."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import DomainMarginError, InvalidArgument, TooCoarseError, UnderResolvedError
from .field import GridField, mean_over
from .grid import Cube
from .maximal import smooth_maximal_array

EXTENSIONS = ("zero", "even", "smooth", "ambient")


def check_p(p: float, n: int) -> None:
    if not (n / (n + 1) < p <= 1):
        raise InvalidArgument(f"p must lie in (n/(n+1), 1] = ({n / (n + 1):.4g}, 1], got {p!r}")


def alpha_of(p: float, n: int) -> float:
    return n * (1.0 / p - 1.0)


def check_alpha_p(alpha: float, p: float, n: int, tol: float = 1e-9) -> None:
    check_p(p, n)
    if abs(alpha - alpha_of(p, n)) > tol:
        raise InvalidArgument(f"alpha={alpha} inconsistent with p={p} (expected {alpha_of(p, n):.6g})")


@dataclass(frozen=True)
class HardyNormResult:
    value: float
    kind: str
    p: float
    extension_used: str = "zero"

    def to_json(self) -> dict:
        return asdict(self)


def _box_values(f: GridField, Q: Cube):
    spec = f.spec
    if not spec.domain.contains_cube(Q, tol=1e-9):
        raise DomainMarginError("cube is not contained in the field's domain")
    sl = spec.node_box(Q, closed=True)
    if spec.box_count(sl) == 0:
        raise UnderResolvedError("cube contains no grid node")
    return sl


def _split(values: np.ndarray, n: int) -> list:
    if values.ndim == n:
        return [values]
    flat = values.reshape(values.shape[:n] + (-1,))
    return [flat[..., i] for i in range(flat.shape[-1])]


def _smooth_cutoff(t: np.ndarray) -> np.ndarray:
    """C-infinity step: 1 at t <= 0, 0 at t >= 1."""
    t = np.clip(t, 0.0, 1.0)

    def e(x):
        out = np.zeros_like(x)
        pos = x > 0
        out[pos] = np.exp(-1.0 / x[pos])
        return out

    a, b = e(1.0 - t), e(t)
    return a / (a + b)


def _hp_functional(comps, h: float, s: float, p: float, n: int) -> float:
    M = smooth_maximal_array(comps, h, s)
    return float((np.sum(M ** p) * h ** n / s ** n) ** (1.0 / p))


def _margin_nodes(s: float, h: float) -> int:
    return int(math.ceil(s / (2 * h) - 1e-9)) + 1


def hardy_z_norm(f: GridField, Q: Cube, p: float) -> HardyNormResult:
    """(s^{-n} int M_s(1_Q f)^p)^{1/p} with s the half-side of Q."""
    n = f.spec.n
    check_p(p, n)
    sl = _box_values(f, Q)
    h = f.spec.h
    s = Q.half_side
    vals = f.values[sl]
    if not np.any(vals):
        return HardyNormResult(0.0, "z", p, "zero")
    pad = _margin_nodes(s, h)
    comps = [np.pad(c, pad) for c in _split(vals, n)]
    return HardyNormResult(_hp_functional(comps, h, s, p, n), "z", p, "zero")


def _distance_to_box(shape, lo_pad, core) -> np.ndarray:
    """Sup-norm node distance from each node of a padded array to the core box."""
    n = len(shape)
    d = np.zeros(shape)
    for i in range(n):
        idx = np.arange(shape[i])
        di = np.maximum(lo_pad[i] - idx, 0) + np.maximum(idx - (lo_pad[i] + core[i] - 1), 0)
        sh = [1] * n
        sh[i] = shape[i]
        d = np.maximum(d, di.reshape(sh))
    return d


def _extension(f: GridField, Q: Cube, sl, kind: str, band_nodes: int, pad: int):
    """Extended component arrays for one candidate, or None if unavailable."""
    n = f.spec.n
    core = [s.stop - s.start for s in sl]
    vals = f.values[sl]
    total = band_nodes + pad
    if kind == "zero":
        return [np.pad(c, pad) for c in _split(vals, n)], "zero"
    if kind in ("even", "smooth"):
        w = min(band_nodes, min(core) - 1)
        if w < 1:
            return None
        out = []
        for c in _split(vals, n):
            ref = np.pad(c, w, mode="reflect")
            dist = _distance_to_box(ref.shape, [w] * n, core)
            if kind == "smooth":
                ref = ref * _smooth_cutoff(dist / max(w, 1))
            out.append(np.pad(ref, total - w))
        return out, kind
    if kind == "ambient":
        spec = f.spec
        w = band_nodes
        lo = [s.start - w for s in sl]
        hi = [s.stop + w for s in sl]
        if any(l < 0 for l in lo) or any(u > spec.m for u in hi):
            return None
        big = tuple(slice(l, u) for l, u in zip(lo, hi))
        amb = f.values[big]
        dist = _distance_to_box(amb.shape[:n], [w] * n, core)
        cut = _smooth_cutoff(dist / w)
        return [np.pad(c * cut, pad) for c in _split(amb, n)], "ambient"
    raise InvalidArgument(f"unknown extension {kind!r}")


def hardy_r_norm(f: GridField, Q: Cube, p: float, extensions: Sequence[str] = ("zero", "even", "smooth", "ambient"),
                 band: float | None = None) -> HardyNormResult:
    """Minimum of the h^p functional over explicit extensions of f from Q.

    Candidates: ``zero``; ``even`` (mirror across each face within a band of
    width s/2, then zero); ``smooth`` (mirror times a smooth cut-off across the
    band); ``ambient`` (the field's own values outside Q times the cut-off,
    when the grid provides the band).  The result is an upper bound for the
    restriction norm.
    """
    if not extensions:
        raise InvalidArgument("extension list is empty")
    n = f.spec.n
    check_p(p, n)
    sl = _box_values(f, Q)
    h = f.spec.h
    s = Q.half_side
    if not np.any(f.values[sl]):
        return HardyNormResult(0.0, "r", p, extensions[0])
    band = s / 2 if band is None else band
    band_nodes = max(1, int(round(band / h)))
    pad = _margin_nodes(s, h)
    best = None
    for kind in extensions:
        ext = _extension(f, Q, sl, kind, band_nodes, pad)
        if ext is None:
            continue
        comps, label = ext
        v = _hp_functional(comps, h, s, p, n)
        if best is None or v < best[0]:
            best = (v, label)
    if best is None:
        raise DomainMarginError("no extension candidate could be evaluated")
    return HardyNormResult(best[0], "r", p, best[1])


def hardy_norm(f: GridField, Q: Cube, p: float, kind: str) -> HardyNormResult:
    if kind == "z":
        return hardy_z_norm(f, Q, p)
    if kind == "r":
        return hardy_r_norm(f, Q, p)
    raise InvalidArgument(f"kind must be 'z' or 'r', got {kind!r}")


# ---------------------------------------------------------------- Campanato


def campanato(f: GridField, Q: Cube, alpha: float, kind: str) -> float:
    """Campanato-type seminorm over node-centred cubes Q(z, r), r = 2^k h.

    kind ``r``: sup over r < dist(z, boundary of Q) of r^{-alpha} (mean |f - mean f|^2)^{1/2}.
    kind ``z``: the same sup restricted to 4r < dist, plus the sup over
    2r < dist < 4r of r^{-alpha} (mean |f|^2)^{1/2}.
    """
    if kind not in ("z", "r"):
        raise InvalidArgument(f"kind must be 'z' or 'r', got {kind!r}")
    if not (0.0 <= alpha < 1.0):
        raise InvalidArgument(f"alpha must lie in [0, 1), got {alpha!r}")
    spec = f.spec
    n = spec.n
    sl = _box_values(f, Q)
    h = spec.h
    vals = f.values[sl]
    core = vals.shape[:n]
    coords = [spec.axis(i)[s] for i, s in enumerate(sl)]
    best_osc = 0.0
    best_bnd = 0.0
    found = False
    k = 1
    while 2 * k + 1 <= min(core):
        r = k * h
        osc, sq = _kernels.box_stats(vals, n, k)
        # distance from each valid centre to the boundary of Q
        dist = None
        for i in range(n):
            c = coords[i][k: core[i] - k]
            di = Q.half_side - np.abs(c - Q.center[i])
            sh = [1] * n
            sh[i] = len(c)
            di = di.reshape(sh)
            dist = di if dist is None else np.minimum(dist, di)
        dist = np.broadcast_to(dist, osc.shape)
        tol = 1e-9 * h
        if kind == "r":
            adm = dist > r + tol
            if adm.any():
                found = True
                best_osc = max(best_osc, math.sqrt(float(osc[adm].max())) / r ** alpha)
        else:
            inner = dist > 4 * r + tol
            shell = (dist > 2 * r + tol) & (dist < 4 * r - tol)
            if inner.any():
                found = True
                best_osc = max(best_osc, math.sqrt(float(osc[inner].max())) / r ** alpha)
            if shell.any():
                found = True
                best_bnd = max(best_bnd, math.sqrt(float(sq[shell].max())) / r ** alpha)
        k *= 2
    if not found:
        raise TooCoarseError("no admissible subcube on this grid")
    return best_osc + best_bnd if kind == "z" else best_osc


# ---------------------------------------------------------------- duality


@dataclass(frozen=True)
class DualityRecord:
    lhs: float
    rhs: float
    ratio: float
    violation: bool
    pairing_kind: str
    campanato: float
    hardy: float
    extension_used: str

    def to_json(self) -> dict:
        return asdict(self)


def duality_gap(g: GridField, f: GridField, Q: Cube, p: float, pairing_kind: str) -> DualityRecord:
    """|mean_Q g f| against l(Q)^alpha |g|_{Lambda_b} |f|_{h_a}, with a = pairing_kind."""
    if pairing_kind not in ("z", "r"):
        raise InvalidArgument("pairing_kind must be 'z' or 'r'")
    if g.spec != f.spec:
        raise InvalidArgument("g and f must share the grid")
    n = g.spec.n
    check_p(p, n)
    alpha = alpha_of(p, n)
    other = "r" if pairing_kind == "z" else "z"
    if g.kind == "scalar" and f.kind == "scalar":
        prod = g.values * f.values
    else:
        prod = np.sum(g.values * f.values, axis=-1)
    lhs = abs(float(mean_over(GridField(g.spec, prod), Q)))
    lam = campanato(g, Q, alpha, other)
    hn = hardy_norm(f, Q, p, pairing_kind)
    rhs = Q.side ** alpha * lam * hn.value
    if rhs > 0:
        ratio = lhs / rhs
        bad = False
    elif lhs > 1e-14:
        ratio = math.inf
        bad = True
    else:
        ratio = 0.0
        bad = False
    return DualityRecord(lhs, rhs, ratio, bad, pairing_kind, lam, hn.value, hn.extension_used)
