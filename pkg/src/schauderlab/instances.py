"""Seeded coefficient models and band-limited random fields.

Every model is a callable mapping points of shape (..., n) to matrices of
shape (..., n, n).  Models carry their parameters so instances can be echoed
into reports and rebuilt bit for bit from (class, seed).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgument
from .grid import Cube

log = logging.getLogger(__name__)

CLASSES = ("constant", "smooth", "holder", "uniform-continuous", "checkerboard")


def _rand_sym(rng, n: int) -> np.ndarray:
    M = rng.standard_normal((n, n))
    M = 0.5 * (M + M.T)
    return M / np.linalg.norm(M, 2)


def _unit(rng, n: int) -> np.ndarray:
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


@dataclass
class ConstantModel:
    M: np.ndarray

    def __call__(self, x):
        x = np.asarray(x, float)
        return np.broadcast_to(self.M, x.shape[:-1] + self.M.shape).copy()

    def describe(self) -> dict:
        return {"class": "constant", "M": np.asarray(self.M).tolist()}


@dataclass
class WaveSumModel:
    """base*I + sum_j c_j cos(w_j . x + theta_j) E_j."""

    base: float
    coeffs: np.ndarray
    freqs: np.ndarray  # (J, n)
    phases: np.ndarray
    mats: np.ndarray  # (J, n, n)
    label: str = "wave"

    def __call__(self, x):
        x = np.asarray(x, float)
        n = x.shape[-1]
        out = np.zeros(x.shape[:-1] + (n, n))
        out[..., range(n), range(n)] = self.base
        for c, w, th, E in zip(self.coeffs, self.freqs, self.phases, self.mats):
            out += (c * np.cos(x @ w + th))[..., None, None] * E
        return out

    def deviation_bound(self) -> float:
        return float(np.sum(np.abs(self.coeffs)))

    def describe(self) -> dict:
        return {
            "class": self.label,
            "base": self.base,
            "coeffs": self.coeffs.tolist(),
            "freqs": self.freqs.tolist(),
            "phases": self.phases.tolist(),
        }


@dataclass
class CheckerboardModel:
    """Alternating diag(lam, Lam) / diag(Lam, lam) tiles on a board over ``box``."""

    box: Cube
    k: int
    lam: float
    Lam: float

    def __call__(self, x):
        x = np.asarray(x, float)
        n = x.shape[-1]
        t = (x - np.asarray(self.box.lower)) / self.box.side * self.k
        parity = np.sum(np.floor(t).astype(np.int64), axis=-1) % 2
        d0 = np.full(n, self.lam)
        d0[1::2] = self.Lam
        d1 = np.full(n, self.Lam)
        d1[1::2] = self.lam
        diag = np.where(parity[..., None] == 0, d0, d1)
        out = np.zeros(x.shape[:-1] + (n, n))
        out[..., range(n), range(n)] = diag
        return out

    def describe(self) -> dict:
        return {"class": "checkerboard", "k": self.k, "lam": self.lam, "Lam": self.Lam,
                "box": self.box.to_json()}


def holder_model(n: int, lam: float, Lam: float, alpha: float, seed: int, J: int = 3,
                 base_freq: float = 2 * math.pi, amplitude: Optional[float] = None) -> WaveSumModel:
    """Lacunary sum lam' I + a sum_j 2^{-alpha j} cos(2^j w_j . x + th_j) E_j.

    The amplitude starts at the full room (Lam - lam)/2 and is halved (and
    logged) until the analytic deviation bound keeps the spectrum in [lam, Lam].
    """
    rng = np.random.default_rng([seed, 101])
    mid = 0.5 * (lam + Lam)
    room = 0.5 * (Lam - lam)
    a = room if amplitude is None else amplitude
    js = np.arange(J + 1)
    weights = 2.0 ** (-alpha * js)
    freqs = np.stack([base_freq * 2.0 ** j * _unit(rng, n) for j in js])
    phases = rng.uniform(0, 2 * math.pi, J + 1)
    mats = np.stack([_rand_sym(rng, n) for _ in js])
    while a * weights.sum() > room * (1 - 1e-9):
        a *= 0.5
        log.info("holder model seed=%d: damping amplitude to %.4g to keep ellipticity", seed, a)
    return WaveSumModel(mid, a * weights, freqs, phases, mats, "holder")


def smooth_model(n: int, lam: float, Lam: float, seed: int, terms: int = 3) -> WaveSumModel:
    rng = np.random.default_rng([seed, 102])
    mid = 0.5 * (lam + Lam)
    room = 0.5 * (Lam - lam)
    coeffs = np.full(terms, 0.9 * room / terms)
    freqs = np.stack([2 * math.pi * _unit(rng, n) * rng.uniform(0.5, 1.5) for _ in range(terms)])
    phases = rng.uniform(0, 2 * math.pi, terms)
    mats = np.stack([_rand_sym(rng, n) for _ in range(terms)])
    return WaveSumModel(mid, coeffs, freqs, phases, mats, "smooth")


def uniform_continuous_model(n: int, seed: int, amp: float = 0.05, terms: int = 4,
                             base_freq: float = 2 * math.pi) -> WaveSumModel:
    """I + amp * P(x) with |P| <= 1 a smooth symmetric perturbation."""
    rng = np.random.default_rng([seed, 103])
    w = 1.0 / (1.0 + np.arange(terms)) ** 2
    w = w / w.sum()
    freqs = np.stack([base_freq * (j + 1) * _unit(rng, n) for j in range(terms)])
    phases = rng.uniform(0, 2 * math.pi, terms)
    mats = np.stack([_rand_sym(rng, n) for _ in range(terms)])
    return WaveSumModel(1.0, amp * w, freqs, phases, mats, "uniform-continuous")


def make_model(cls: str, n: int, lam: float, Lam: float, alpha: float, seed: int, domain: Cube,
               **kw):
    if cls == "constant":
        rng = np.random.default_rng([seed, 100])
        # random symmetric matrix with spectrum in [lam, Lam]
        Qm, _ = np.linalg.qr(rng.standard_normal((n, n)))
        ev = rng.uniform(lam, Lam, n)
        return ConstantModel((Qm * ev) @ Qm.T)
    if cls == "smooth":
        return smooth_model(n, lam, Lam, seed)
    if cls == "holder":
        return holder_model(n, lam, Lam, alpha, seed, **kw)
    if cls == "uniform-continuous":
        return uniform_continuous_model(n, seed, **kw)
    if cls == "checkerboard":
        return CheckerboardModel(domain, kw.get("k", 8), lam, Lam)
    raise InvalidArgument(f"unknown coefficient class {cls!r}; expected one of {CLASSES}")


# ---------------------------------------------------------------- random fields


@dataclass
class BandLimitedField:
    """sum over integer wave vectors |k|_inf <= K of a_k cos(2 pi k.(x - x0)/L + phi_k)."""

    amps: np.ndarray  # (modes, comps)
    waves: np.ndarray  # (modes, n)
    phases: np.ndarray  # (modes, comps)
    origin: np.ndarray
    length: float
    vector: bool = True

    def __call__(self, x):
        x = np.asarray(x, float)
        arg = 2 * math.pi * ((x - self.origin) @ self.waves.T) / self.length  # (..., modes)
        comps = []
        for c in range(self.amps.shape[1]):
            comps.append(np.sum(self.amps[:, c] * np.cos(arg + self.phases[:, c]), axis=-1))
        out = np.stack(comps, axis=-1)
        return out if self.vector else out[..., 0]


def band_limited(n: int, seed: int, box: Cube, K: int = 3, vector: bool = True, decay: float = 1.0,
                 tag: int = 0) -> BandLimitedField:
    """Random band-limited field normalised to unit RMS amplitude per component."""
    rng = np.random.default_rng([seed, 200 + tag])
    waves = np.array([k for k in np.ndindex(*(2 * K + 1,) * n)]) - K
    comps = n if vector else 1
    norms = np.linalg.norm(waves, axis=1)
    scale = 1.0 / (1.0 + norms) ** decay
    amps = rng.standard_normal((len(waves), comps)) * scale[:, None]
    amps /= math.sqrt(0.5 * np.sum(amps ** 2) / comps)
    phases = rng.uniform(0, 2 * math.pi, (len(waves), comps))
    return BandLimitedField(amps, waves.astype(float), phases, np.asarray(box.lower, float), box.side, vector)
