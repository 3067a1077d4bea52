"""Acceptance checks.  Each ``criterion_k`` returns a :class:`CriterionResult`."""

from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .experiments import boundary_data, run_iteration, run_rhi, run_schauder, run_sparse, solve_homogeneous
from .field import CoefficientField, GridField, from_model, mean_over, sample
from .grid import Cube, GridSpec, check_whitney, dilate, whitney_decompose
from .instances import ConstantModel, band_limited, holder_model, make_model, uniform_continuous_model
from .iterate import calibrate_delta, pairing_split
from .maximal import default_dictionary, grand_maximal_array, hl_radii, smooth_maximal_array
from .norms import duality_gap
from .solver import EllipticProblem, projection_residual, q1_space, solve_dirichlet, solve_projection
from .sparse import partition_of_unity


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    measured: dict
    threshold: str
    seconds: float = 0.0

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        parts = ", ".join(f"{k}={_short(v)}" for k, v in self.measured.items())
        return f"[{tag}] criterion {self.number:2d} {self.name}: {parts} (need {self.threshold}; {self.seconds:.1f}s)"


def _short(v):
    if isinstance(v, float):
        return f"{v:.4g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_short(x) for x in v) + "]"
    return str(v)


def _timed(fn):
    def wrapper(*a, **kw):
        t0 = time.perf_counter()
        res = fn(*a, **kw)
        res.seconds = time.perf_counter() - t0
        return res

    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _l2(spec: GridSpec, v: np.ndarray) -> float:
    return math.sqrt(float(mean_over(GridField(spec, v ** 2), spec.domain)) * spec.domain.volume)


# ---------------------------------------------------------------- 1


def manufactured_error(m: int, A=np.diag([1.0, 4.0])):
    dom = Cube.unit(2)
    spec = GridSpec(dom, m)
    Aco = CoefficientField.constant(spec, A)
    pi = math.pi

    def ustar(x):
        return np.sin(pi * x[..., 0]) * np.sin(pi * x[..., 1])

    def grad(x):
        return np.stack([pi * np.cos(pi * x[..., 0]) * np.sin(pi * x[..., 1]),
                         pi * np.sin(pi * x[..., 0]) * np.cos(pi * x[..., 1])], axis=-1)

    F = sample(spec, lambda x: -grad(x) @ A.T)
    t0 = time.perf_counter()
    rep = solve_dirichlet(EllipticProblem(Aco, F))
    elapsed = time.perf_counter() - t0
    err = _l2(spec, rep.u.values - ustar(spec.points()))
    return err, elapsed


@_timed
def criterion_1() -> CriterionResult:
    e33, t33 = manufactured_error(33)
    e65, t65 = manufactured_error(65)
    rate = math.log2(e33 / e65)
    ok = rate >= 1.8 and max(t33, t65) <= 30.0
    return CriterionResult(1, "solver convergence", ok,
                           {"err33": e33, "err65": e65, "rate": rate, "max_solve_s": max(t33, t65)},
                           "rate >= 1.8, solve <= 30 s")


# ---------------------------------------------------------------- 2


def projection_instance(seed: int, m: int = 65, tests: int = 50) -> float:
    dom = Cube.unit(2)
    spec = GridSpec(dom, m)
    base = make_model("smooth", 2, 1.0, 4.0, 0.5, seed, dom)
    skew = 0.5 * np.array([[0.0, 1.0], [-1.0, 0.0]])
    model = lambda x: base(x) + skew  # noqa: E731  nonsymmetric on purpose
    A = from_model(spec, model, 1.0, 5.0)
    g = sample(spec, band_limited(2, seed, dom, tag=5))
    T = solve_projection(A, g).u
    rng = np.random.default_rng([seed, 55])
    space = q1_space(spec)
    worst = 0.0
    for _ in range(tests):
        eta = rng.standard_normal(spec.size)
        eta[space.bnodes] = 0.0
        num, scale = projection_residual(A, g, T, eta)
        worst = max(worst, abs(num) / scale)
    return worst


@_timed
def criterion_2(seeds: int = 20) -> CriterionResult:
    worst = max(projection_instance(s) for s in range(seeds))
    return CriterionResult(2, "projection contract", worst <= 1e-8, {"max_relative_pairing": worst},
                           "<= 1e-8")


# ---------------------------------------------------------------- 3


def hl_brute_force(a: np.ndarray) -> np.ndarray:
    """Double loop over nodes and over every admissible cube containing the node."""
    a = np.abs(np.asarray(a, float))
    m = a.shape[0]
    out = np.zeros_like(a)
    for i in range(m):
        for j in range(m):
            best = 0.0
            for k in hl_radii(m):
                w = 2 * k + 1
                for ci in range(max(k, i - k), min(m - 1 - k, i + k) + 1):
                    for cj in range(max(k, j - k), min(m - 1 - k, j + k) + 1):
                        v = a[ci - k: ci + k + 1, cj - k: cj + k + 1].sum() / (w * w)
                        best = max(best, v)
            out[i, j] = best
    return out


@_timed
def criterion_3(fields: int = 10, m: int = 17) -> CriterionResult:
    from .maximal import hl_maximal_array

    worst = 0.0
    for s in range(fields):
        a = np.random.default_rng([s, 3]).standard_normal((m, m))
        worst = max(worst, float(np.max(np.abs(hl_maximal_array(a) - hl_brute_force(a)))))
    return CriterionResult(3, "maximal oracle equality", worst <= 1e-12, {"max_abs_diff": worst}, "<= 1e-12")


# ---------------------------------------------------------------- 4


@_timed
def criterion_4(seeds: int = 20) -> CriterionResult:
    cfg = ExperimentConfig(experiment="rhi", coefficient_class="checkerboard", lam=1.0, Lam=4.0, q=2.25,
                           q_grid=[2.25], bc_smooth=0.3).resolved()
    maxima = {}
    finite = True
    for m in (65, 129):
        c = dataclasses.replace(cfg, m=m)
        vals = [run_rhi(c, i)["headline"] for i in range(seeds)]
        finite = finite and all(math.isfinite(v) for v in vals)
        maxima[m] = max(vals)
    factor = max(maxima.values()) / min(maxima.values())
    return CriterionResult(4, "reverse Hölder", finite and factor <= 2.0,
                           {"max65": maxima[65], "max129": maxima[129], "factor": factor, "finite": finite},
                           "factor <= 2, all finite")


# ---------------------------------------------------------------- 5


@_timed
def criterion_5(seeds: int = 10) -> CriterionResult:
    cfg = ExperimentConfig(experiment="schauder", coefficient_class="holder", alpha=0.5, bc_smooth=0.0).resolved()
    worst = 1.0
    rough = []
    for i in range(seeds):
        a = run_schauder(dataclasses.replace(cfg, m=65), i)["holder_quotient"]
        b = run_schauder(dataclasses.replace(cfg, m=129), i)["holder_quotient"]
        worst = max(worst, max(a, b) / min(a, b))
        rough.append(b)
    const = dataclasses.replace(cfg, coefficient_class="constant", m=129)
    cq = max(run_schauder(const, i)["holder_quotient"] for i in range(seeds))
    med = float(np.median(rough))
    ok = worst <= 1.5 and cq <= 0.1 * med
    return CriterionResult(5, "gradient Hölder bound", ok,
                           {"worst_refinement_factor": worst, "rough_median": med, "constant_max": cq},
                           "factor <= 1.5, constant <= 0.1 x rough median")


# ---------------------------------------------------------------- 6


@_timed
def criterion_6(seeds: int = 20, m: int = 49) -> CriterionResult:
    cfg = ExperimentConfig(experiment="sparse-bound", coefficient_class="holder", eps=0.5).resolved()
    maxima = {}
    valid = True
    for mm in (m, 2 * m - 1):
        rows = [run_sparse(dataclasses.replace(cfg, m=mm), i) for i in range(seeds)]
        valid = valid and all(r["verify_sparse"] for r in rows)
        maxima[mm] = max(r["C_emp"] for r in rows)
    factor = max(maxima.values()) / min(maxima.values())
    return CriterionResult(6, "sparse bound", valid and factor <= 2.0,
                           {"all_sparse": valid, f"maxC_{m}": maxima[m], f"maxC_{2 * m - 1}": maxima[2 * m - 1],
                            "factor": factor},
                           "every family sparse, factor <= 2")


# ---------------------------------------------------------------- 7


def split_instance(seed: int, variant: str, m: int):
    Q = Cube((0.5, 0.5), 1 / 8 if variant == "holder" else 1 / 6)
    dom = dilate(Q, 4.0 if variant == "holder" else 3.0)
    spec = GridSpec(dom, m)
    A, rep = solve_homogeneous(holder_model(2, 1.0, 4.0, 0.5, seed), spec, boundary_data(seed, 2, dom, 0.3),
                               1.0, 4.0)
    g = sample(spec, band_limited(2, seed, dom, tag=6))
    B = from_model(spec, make_model("smooth", 2, 1.0, 4.0, 0.5, seed, dom), 1.0, 4.0).base
    return pairing_split(A, rep.u, B, g, Q, variant, keep_fields=False)


@_timed
def criterion_7(seeds: int = 10) -> CriterionResult:
    err = {}
    for variant, m in (("lq", 81), ("holder", 145)):
        err[variant] = max(split_instance(s, variant, m).error for s in range(seeds))
    worst = max(err.values())
    return CriterionResult(7, "one-step identity", worst <= 1e-6,
                           {"lq_m81": err["lq"], "holder_m145": err["holder"]}, "<= 1e-6 relative")


# ---------------------------------------------------------------- 8


def decay_trace(seed: int, side: float, m: int = 65, K: int = 3, budget: int = 16, m_local: int = 17,
                q: float = 4.0):
    Q0 = Cube((0.5, 0.5), side / 2)
    encl = dilate(Q0, 3.0)
    spec = GridSpec(encl, m)
    model = uniform_continuous_model(2, seed)
    _A, rep = solve_homogeneous(model, spec, boundary_data(seed, 2, encl, 0.3), 0.5, 2.0)
    g = band_limited(2, seed, encl, tag=2)
    return run_iteration(model, rep.u, g, Q0, K=K, variant="lq", q_or_p=q, m_local=m_local,
                         budget=budget, seed=seed)


@_timed
def criterion_8(seeds: int = 10, side: float = 1.0) -> CriterionResult:
    deltas, worst_decay = [], 0.0
    halving_ok = True
    found = True
    for s in range(seeds):
        cal = calibrate_delta(lambda L: decay_trace(s, L), side)
        found = found and cal["delta"] is not None
        delta = cal["delta"] or side / 2 ** 10
        deltas.append(delta)
        chain = [decay_trace(s, delta / 2 ** k).decay_ratio for k in range(3)]
        worst_decay = max(worst_decay, chain[0])
        halving_ok = halving_ok and all(b <= a * (1 + 1e-9) for a, b in zip(chain, chain[1:]))
    ok = found and worst_decay < 0.5 and halving_ok
    return CriterionResult(8, "geometric decay", ok,
                           {"delta_min": min(deltas), "max_decay_at_delta": worst_decay, "halving_ok": halving_ok},
                           "decay < 0.5 at bisected side, non-increasing under halving")


# ---------------------------------------------------------------- 9


def duality_batch(m: int, pairs: int = 50, p: float = 0.8):
    Q = Cube.unit(2)
    spec = GridSpec(Q, m)
    ratios = {"z": [], "r": []}
    flags = 0
    for s in range(pairs):
        g = sample(spec, band_limited(2, s, Q, vector=False, tag=3))
        f = sample(spec, band_limited(2, s, Q, vector=False, tag=4))
        for kind in ("z", "r"):
            rec = duality_gap(g, f, Q, p, kind)
            ratios[kind].append(rec.ratio)
            flags += int(rec.violation)
    return ratios, flags


@_timed
def criterion_9(pairs: int = 50) -> CriterionResult:
    r33, f33 = duality_batch(33, pairs)
    r65, f65 = duality_batch(65, pairs)
    factors = {k: max(max(r33[k]), max(r65[k])) / min(max(r33[k]), max(r65[k])) for k in ("z", "r")}
    worst = max(factors.values())
    flags = f33 + f65
    return CriterionResult(9, "Hardy-Hölder duality", worst <= 2.0 and flags == 0,
                           {"env33_z": max(r33["z"]), "env65_z": max(r65["z"]), "env33_r": max(r33["r"]),
                            "env65_r": max(r65["r"]), "factor": worst, "violations": flags},
                           "envelope factor <= 2, no violations")


# ---------------------------------------------------------------- 10


def random_mask(seed: int, spec: GridSpec, balls: int = 4) -> np.ndarray:
    rng = np.random.default_rng([seed, 10])
    pts = spec.points()
    dom = spec.domain
    mask = np.zeros(spec.shape, dtype=bool)
    for _ in range(balls):
        c = rng.uniform(np.asarray(dom.lower) + 0.2 * dom.side, np.asarray(dom.upper) - 0.2 * dom.side)
        r = rng.uniform(0.04, 0.15) * dom.side
        mask |= np.linalg.norm(pts - c, axis=-1) < r
    return mask


@_timed
def criterion_10(masks: int = 10, m: int = 129) -> CriterionResult:
    Q = Cube((0.5, 0.5), 1 / 6)
    spec = GridSpec(dilate(Q, 3.0), m)
    ok_geom = True
    worst_sum = 0.0
    max_overlap = 0
    for s in range(masks):
        mask = random_mask(s, spec)
        W = whitney_decompose(mask, Q, spec)
        chk = check_whitney(W)
        ok_geom = ok_geom and chk["containment"] and chk["exterior_contact"] and chk["overlap_ok"] and chk["cover"]
        max_overlap = max(max_overlap, chk["max_overlap"])
        pu = partition_of_unity(W)
        worst_sum = max(worst_sum, float(np.max(np.abs(pu.total()[mask] - 1.0))))
    return CriterionResult(10, "Whitney invariants", ok_geom and worst_sum <= 1e-12,
                           {"geometry_ok": ok_geom, "max_overlap_8P": max_overlap, "pou_sum_err": worst_sum},
                           "containment, 64P contact, 8P overlap <= 100, PoU sum within 1e-12")


# ---------------------------------------------------------------- 11


def comparability_bracket(D, fields: int = 20, m: int = 33, s: float = 0.5, p: float = 0.8):
    dom = Cube.unit(2)
    spec = GridSpec(dom, m)
    h = spec.h
    pad = int(math.ceil(s / (2 * h))) + 1
    ratios = []
    for k in range(fields):
        f = sample(spec, band_limited(2, k, dom, vector=False, tag=11)).values
        a = np.pad(f, pad)
        Ms = smooth_maximal_array([a], h, s)
        Mg = grand_maximal_array([a], h, s, D)
        ratios.append(float(np.sum(Mg ** p) / np.sum(Ms ** p)))
    return min(ratios), max(ratios)


@_timed
def criterion_11(fields: int = 20) -> CriterionResult:
    D1 = default_dictionary(2, widths=5, offsets=5)
    D2 = default_dictionary(2, widths=10, offsets=5)
    lo1, hi1 = comparability_bracket(D1, fields)
    lo2, hi2 = comparability_bracket(D2, fields)
    move = max(abs(lo2 - lo1) / lo1, abs(hi2 - hi1) / hi1)
    return CriterionResult(11, "grand vs smooth maximal", move < 0.25,
                           {"bracket": (lo1, hi1), "bracket_doubled": (lo2, hi2), "endpoint_move": move,
                            "bumps": (len(D1), len(D2))},
                           "endpoints move < 25%")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9, criterion_10, criterion_11]
