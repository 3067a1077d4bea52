"""Hot loops, compiled with numba when available.

Every kernel works on flattened arrays plus precomputed flat offsets, so one
implementation serves n = 2 and n = 3.  Each has a pure-numpy twin that
performs the additions in the same order; for the box means the two backends
are bitwise identical.

Set ``SCHAUDERLAB_BACKEND=numpy`` to force the numpy versions.
"""

from __future__ import annotations

import itertools
import os

import numpy as np

try:
    import numba
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f


def _requested_backend() -> str:
    name = os.environ.get("SCHAUDERLAB_BACKEND", "numba").strip().lower()
    if name not in ("numba", "numpy"):
        name = "numba"
    if name == "numba" and not HAVE_NUMBA:
        name = "numpy"
    return name


BACKEND = _requested_backend()

_JIT = dict(cache=True, nogil=True)


# ---------------------------------------------------------------- offsets


def box_offsets(n: int, k: int) -> np.ndarray:
    """Integer offsets of a closed node box of half-width k, row-major order."""
    r = range(-k, k + 1)
    return np.array(list(itertools.product(r, repeat=n)), dtype=np.int64).reshape(-1, n)


def strides_of(shape) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    st = np.ones(len(shape), dtype=np.int64)
    for i in range(len(shape) - 2, -1, -1):
        st[i] = st[i + 1] * shape[i + 1]
    return st


def interior_flat(shape, k: int) -> np.ndarray:
    """Flat indices of nodes at least k away from every face (row-major)."""
    idx = np.arange(int(np.prod(shape)), dtype=np.int64).reshape(shape)
    sl = tuple(slice(k, s - k) for s in shape)
    return np.ascontiguousarray(idx[sl].ravel())


# ---------------------------------------------------------------- box means


@njit(**_JIT)
def _gather_mean_nb(a, centers, deltas):
    out = np.empty(centers.shape[0])
    cnt = deltas.shape[0]
    for t in range(centers.shape[0]):
        c = centers[t]
        s = 0.0
        for j in range(cnt):
            s += a[c + deltas[j]]
        out[t] = s / cnt
    return out


def _gather_mean_np(a, centers, deltas):
    s = np.zeros(centers.shape[0])
    for d in deltas:
        s += a[centers + d]
    return s / deltas.shape[0]


def box_means(a: np.ndarray, k: int, backend: str | None = None) -> np.ndarray:
    """Mean of ``a`` over closed node boxes of half-width ``k``.

    Returns an array of shape ``(m_i - 2k, ...)`` indexed by box centre.
    """
    a = np.ascontiguousarray(a, dtype=np.float64)
    shape = a.shape
    if any(s < 2 * k + 1 for s in shape):
        return np.zeros(tuple(max(s - 2 * k, 0) for s in shape))
    deltas = box_offsets(a.ndim, k) @ strides_of(shape)
    centers = interior_flat(shape, k)
    fn = _gather_mean_nb if (backend or BACKEND) == "numba" else _gather_mean_np
    out = fn(a.ravel(), centers, np.ascontiguousarray(deltas))
    return out.reshape(tuple(s - 2 * k for s in shape))


# ---------------------------------------------------------------- box statistics


@njit(**_JIT)
def _gather_stats_nb(a, centers, deltas):
    nc = centers.shape[0]
    d = a.shape[1]
    cnt = deltas.shape[0]
    osc = np.empty(nc)
    sq = np.empty(nc)
    mean = np.empty(d)
    for t in range(nc):
        c = centers[t]
        for q in range(d):
            mean[q] = 0.0
        s2 = 0.0
        for j in range(cnt):
            row = c + deltas[j]
            for q in range(d):
                v = a[row, q]
                mean[q] += v
                s2 += v * v
        for q in range(d):
            mean[q] /= cnt
        dev = 0.0
        for j in range(cnt):
            row = c + deltas[j]
            for q in range(d):
                e = a[row, q] - mean[q]
                dev += e * e
        osc[t] = dev / cnt
        sq[t] = s2 / cnt
    return osc, sq


def _gather_stats_np(a, centers, deltas):
    cnt = deltas.shape[0]
    mean = np.zeros((centers.shape[0], a.shape[1]))
    s2 = np.zeros(centers.shape[0])
    for d in deltas:
        v = a[centers + d]
        mean += v
        s2 += np.sum(v * v, axis=1)
    mean /= cnt
    dev = np.zeros(centers.shape[0])
    for d in deltas:
        e = a[centers + d] - mean
        dev += np.sum(e * e, axis=1)
    return dev / cnt, s2 / cnt


def box_stats(a: np.ndarray, n: int, k: int, backend: str | None = None):
    """Two-pass box statistics over closed node boxes of half-width ``k``.

    ``a`` has ``n`` spatial axes followed by optional value axes.  Returns
    ``(mean |a - box mean|^2, mean |a|^2)`` per valid centre.
    """
    a = np.asarray(a, dtype=np.float64)
    shape = a.shape[:n]
    flat = np.ascontiguousarray(a.reshape(int(np.prod(shape)), -1))
    out_shape = tuple(s - 2 * k for s in shape)
    if any(s <= 0 for s in out_shape):
        z = np.zeros(tuple(max(s, 0) for s in out_shape))
        return z, z.copy()
    deltas = np.ascontiguousarray(box_offsets(n, k) @ strides_of(shape))
    centers = interior_flat(shape, k)
    fn = _gather_stats_nb if (backend or BACKEND) == "numba" else _gather_stats_np
    osc, sq = fn(flat, centers, deltas)
    return osc.reshape(out_shape), sq.reshape(out_shape)


# ---------------------------------------------------------------- convolution


@njit(**_JIT)
def _gather_weighted_nb(a, centers, deltas, weights):
    out = np.empty(centers.shape[0])
    cnt = deltas.shape[0]
    for t in range(centers.shape[0]):
        c = centers[t]
        s = 0.0
        for j in range(cnt):
            s += weights[j] * a[c + deltas[j]]
        out[t] = s
    return out


def _gather_weighted_np(a, centers, deltas, weights):
    s = np.zeros(centers.shape[0])
    for d, w in zip(deltas, weights):
        s += w * a[centers + d]
    return s


def convolve_direct(a: np.ndarray, ker: np.ndarray, backend: str | None = None) -> np.ndarray:
    """Direct-sum convolution ``out[x] = sum_o ker[o] a[x - o]`` with zero padding.

    ``ker`` has odd side lengths and is centred; output has the shape of ``a``.
    """
    a = np.asarray(a, dtype=np.float64)
    ker = np.asarray(ker, dtype=np.float64)
    n = a.ndim
    rad = [s // 2 for s in ker.shape]
    pad = np.pad(a, [(r, r) for r in rad])
    offs = np.array(list(itertools.product(*[range(-r, r + 1) for r in rad])), dtype=np.int64)
    w = ker.ravel()
    keep = w != 0.0
    # convolution: weight ker[o] meets a[x - o]
    deltas = np.ascontiguousarray((-offs[keep]) @ strides_of(pad.shape))
    w = np.ascontiguousarray(w[keep])
    idx = np.arange(pad.size, dtype=np.int64).reshape(pad.shape)
    centers = np.ascontiguousarray(idx[tuple(slice(r, r + s) for r, s in zip(rad, a.shape))].ravel())
    fn = _gather_weighted_nb if (backend or BACKEND) == "numba" else _gather_weighted_np
    return fn(pad.ravel(), centers, deltas, w).reshape(a.shape)


# ---------------------------------------------------------------- Hölder pairs


@njit(**_JIT)
def _holder_offsets_nb(v, shape, offsets, dist):
    n = shape.shape[0]
    N = v.shape[0]
    d = v.shape[1]
    st = np.ones(n, dtype=np.int64)
    for i in range(n - 2, -1, -1):
        st[i] = st[i + 1] * shape[i + 1]
    best = 0.0
    coord = np.empty(n, dtype=np.int64)
    for t in range(offsets.shape[0]):
        df = 0
        for i in range(n):
            df += offsets[t, i] * st[i]
        inv = 1.0 / dist[t]
        for x in range(N):
            r = x
            ok = True
            for i in range(n):
                coord[i] = r // st[i]
                r -= coord[i] * st[i]
                y = coord[i] + offsets[t, i]
                if y < 0 or y >= shape[i]:
                    ok = False
                    break
            if not ok:
                continue
            s = 0.0
            y = x + df
            for q in range(d):
                e = v[y, q] - v[x, q]
                s += e * e
            qv = np.sqrt(s) * inv
            if qv > best:
                best = qv
    return best


def _holder_offsets_np(v, shape, offsets, dist):
    n = len(shape)
    arr = v.reshape(tuple(shape) + (v.shape[1],))
    best = 0.0
    for o, dd in zip(offsets, dist):
        src = []
        dst = []
        for i in range(n):
            oi = int(o[i])
            if oi >= 0:
                src.append(slice(0, shape[i] - oi))
                dst.append(slice(oi, shape[i]))
            else:
                src.append(slice(-oi, shape[i]))
                dst.append(slice(0, shape[i] + oi))
        a = arr[tuple(src)]
        if a.size == 0:
            continue
        e = arr[tuple(dst)] - a
        q = np.sqrt(np.max(np.sum(e * e, axis=-1))) / dd
        best = max(best, float(q))
    return best


def holder_over_offsets(values: np.ndarray, n: int, h: float, alpha: float, offsets: np.ndarray,
                        backend: str | None = None) -> float:
    """Max of ``|v(x+o) - v(x)| / |h o|^alpha`` over the given integer offsets."""
    shape = np.array(values.shape[:n], dtype=np.int64)
    v = np.ascontiguousarray(np.asarray(values, dtype=np.float64).reshape(int(np.prod(shape)), -1))
    offsets = np.ascontiguousarray(np.asarray(offsets, dtype=np.int64).reshape(-1, n))
    if offsets.shape[0] == 0:
        return 0.0
    dist = np.ascontiguousarray((h * np.sqrt(np.sum(offsets.astype(float) ** 2, axis=1))) ** alpha)
    fn = _holder_offsets_nb if (backend or BACKEND) == "numba" else _holder_offsets_np
    return float(fn(v, shape, offsets, dist))


def half_space_offsets(extent, radius: int | None = None) -> np.ndarray:
    """Nonzero integer offsets with first nonzero coordinate positive.

    ``extent`` bounds each coordinate by ``extent[i] - 1``; ``radius`` further
    restricts to the sup-norm ball.
    """
    rngs = []
    for e in extent:
        r = e - 1 if radius is None else min(e - 1, radius)
        rngs.append(np.arange(-r, r + 1))
    grid = np.stack(np.meshgrid(*rngs, indexing="ij"), axis=-1).reshape(-1, len(extent))
    keep = np.zeros(len(grid), dtype=bool)
    decided = np.zeros(len(grid), dtype=bool)
    for i in range(grid.shape[1]):
        pos = (~decided) & (grid[:, i] > 0)
        keep |= pos
        decided |= grid[:, i] != 0
    return grid[keep].astype(np.int64)
