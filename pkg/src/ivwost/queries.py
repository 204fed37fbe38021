"""The walk-on-stars geometric queries on implicit surfaces.

Each query is a MINIMIZE or SOLVE instance run by the compiled engine:

* :func:`cpq`, closest point: min ||y - x||^2 subject to f(y) = 0.
* :func:`ray_intersect`, first hit: min t subject to f(x + t v) = 0, t in [0, t_max].
* :func:`cspq`, closest silhouette point: min ||z - x||^2 subject to f(z) = 0,
  grad f(z) . (z - x) = 0 and ||z - x|| <= R_D.
* :func:`rrbq`, Robin radius bound: min r exp(cos(theta) / (mu r)) in 2D or
  r / [1 - cos(theta) / (mu r)]_+ in 3D, subject to f(z) = 0 and r <= R_S.
* :func:`sample_gamma`, points on B(x, R) intersected with the surface.

Radii are reported from certified lower bounds of the optimum, so every ball
handed to the walk is conservative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import expr as E
from ._kernels import engine as K
from ._kernels import tape as _tape
from .globalopt import DEFAULT_BUDGET, Stats
from .interval import Box, Interval
from .scene import ImplicitField, RobinCoefficientField, Scene

__all__ = [
    "QueryOptions",
    "CPQResult",
    "RayHit",
    "CSPQResult",
    "RRBQResult",
    "GammaSample",
    "StarRegion",
    "cpq",
    "ray_intersect",
    "cspq",
    "certify_front_facing",
    "rrbq",
    "rrbq_2d",
    "rrbq_3d",
    "sample_gamma",
    "star_radius",
    "reflectance",
    "SHRINK_FACTOR",
    "SHRINK_ROUNDS",
]

SHRINK_FACTOR = 1.0 - 1e-3
SHRINK_ROUNDS = 8


@dataclass(frozen=True)
class QueryOptions:
    """Search controls.

    ``tol`` is the acceptance width of boxes. ``gap=None`` stops a minimisation
    once its certified bound is within a query-specific multiple of ``tol`` of
    the best feasible value: ``tol`` for closest points, ``5 * tol`` for the
    silhouette, whose enclosure is looser, and ``tol / 2`` for the Robin bound,
    which must stay within ``tol`` of the distance to its minimiser; ``gap=0``
    runs it to exhaustion. The Robin radius objective overestimates by
    roughly ten box widths near its minimum, so that query accepts boxes of
    width ``rrbq_width * tol``.
    """

    tol: float
    gap: float | None = None
    gap_relative: bool = False
    budget: int = DEFAULT_BUDGET
    trace: bool = False
    rrbq_width: float = 0.5

    @classmethod
    def for_scene(cls, scene: Scene, **kw) -> "QueryOptions":
        return cls(tol=kw.pop("tol", None) or scene.tol, **kw)

    def effective_gap(self, factor: float = 1.0) -> float:
        return factor * self.tol if self.gap is None else self.gap

    def gap_mode(self, sqrt_units: bool) -> int:
        return (K.GAP_SQRT if sqrt_units else 0) | (K.GAP_RELATIVE if self.gap_relative else 0)


def _stats(arr) -> Stats:
    return Stats(int(arr[K.S_EXPLORED]), int(arr[K.S_PRUNED_CON]), int(arr[K.S_PRUNED_BOUND]),
                 int(arr[K.S_ACCEPTED]))


@dataclass
class CPQResult:
    closest: np.ndarray | None
    R_D: Interval
    dirichlet_absent: bool
    converged: bool
    stats: Stats
    trace: np.ndarray | None = None


@dataclass
class RayHit:
    t: Interval
    point: np.ndarray
    normal: np.ndarray
    grazing: bool = False
    stats: Stats | None = None


@dataclass
class CSPQResult:
    R_S: float
    R_S_raw: float
    witness: np.ndarray | None
    feasible: bool
    converged: bool
    certified: bool | None
    shrink_rounds: int
    stats: Stats
    trace: np.ndarray | None = None


@dataclass
class RRBQResult:
    R_R: float
    unbounded: bool
    bound: Interval
    witness: np.ndarray | None
    converged: bool
    stats: Stats
    trace: np.ndarray | None = None


@dataclass
class GammaSample:
    point: np.ndarray
    pdf_estimate: float
    source_box: Box


@dataclass
class StarRegion:
    x: np.ndarray
    R_D: Interval
    closest_dirichlet: np.ndarray | None
    R_S: float
    R_R: float
    dirichlet_absent: bool = False
    reflecting_absent: bool = False
    rrbq_unbounded: bool = False
    near_reflecting: bool = False
    converged: bool = True
    flags: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# helpers

_PROGRAMS: dict[tuple[int, int], tuple] = {}


def _program(f: ImplicitField, mu: ImplicitField | None = None):
    """Program with ``f`` in slot 0 and ``mu`` in slot 1 (cached per field pair)."""
    key = (id(f), id(mu))
    hit = _PROGRAMS.get(key)
    if hit is None or hit[0] is not f or hit[1] is not mu:
        prog = E.build_program([f.expr, mu.expr if mu is not None else E.const(0.0)])
        hit = (f, mu, prog)
        _PROGRAMS[key] = hit
    return hit[2]


def _point(x, d: int) -> np.ndarray:
    a = np.asarray(x, float).reshape(-1)
    if a.shape[0] != d:
        raise ValueError(f"expected a {d}D point")
    return a


def _search_box(x: np.ndarray, R: float, domain: Box | None) -> tuple[np.ndarray, np.ndarray] | None:
    """Box centred at ``x`` with side ``2R``, clipped to ``domain``."""
    if math.isfinite(R):
        lo = np.nextafter(x - R, -np.inf)
        hi = np.nextafter(x + R, np.inf)
        if domain is not None:
            lo = np.maximum(lo, domain.lo)
            hi = np.minimum(hi, domain.hi)
    elif domain is not None:
        lo, hi = domain.arrays()
    else:
        raise ValueError("an unbounded search needs a domain box")
    if np.any(lo > hi):
        return None
    return lo, hi


def _run_min(kind, prog, P, box, opts: QueryOptions, sqrt_units: bool, width: float | None = None):
    lo, hi = box
    w = opts.tol if width is None else width
    factor = {K.K_CPQ: 1.0, K.K_CSPQ: 5.0}.get(kind, 0.5)
    return K.minimize(kind, prog, P, lo, hi, w, opts.effective_gap(factor), opts.gap_mode(sqrt_units),
                      opts.budget, K.REFINE_ALL, True, opts.trace, math.inf)


# ---------------------------------------------------------------------------
# queries


def cpq(f: ImplicitField, x: Sequence[float], *, domain: Box, opts: QueryOptions) -> CPQResult:
    """Closest point on the zero set of ``f`` to ``x`` within ``domain``."""
    x = _point(x, f.dim)
    prog = _program(f)
    P = K.make_params(x, np.zeros(0), 0, 1, math.inf)
    r = _run_min(K.K_CPQ, prog, P, domain.arrays(), opts, True)
    status, lower, ub, st, AL, AH, AA, nacc, best, inc, has_inc, tr, _ = r
    stats = _stats(st)
    trace = tr if opts.trace else None
    if nacc == 0:
        if status == K.ST_BUDGET:
            lo = math.sqrt(max(lower, 0.0))
            return CPQResult(None, Interval(lo, math.inf), False, False, stats, trace)
        return CPQResult(None, Interval(math.inf, math.inf), True, True, stats, trace)
    lo = math.sqrt(max(lower, 0.0))
    hi = math.sqrt(max(ub, lower, 0.0))
    if has_inc:
        closest = inc.copy()
    else:
        mid = 0.5 * (AL[best] + AH[best])
        q, _, ok = _tape.project_to_surface(prog, 0, mid, K.PROJ_ITERS, K.PROJ_FTOL)
        closest = q if ok else mid
    return CPQResult(closest, Interval(lo, max(hi, lo)), False, status != K.ST_BUDGET, stats, trace)


def ray_intersect(f: ImplicitField, x: Sequence[float], v: Sequence[float], t_max: float, *,
                  opts: QueryOptions, skip_grazing: bool = False) -> RayHit | None:
    """First intersection of the ray ``x + t v`` (``0 < t <= t_max``) with the zero set.

    Accepted parameter boxes are scanned in order of ``t``; one whose endpoint
    values change sign holds a root, which is then bracketed by bisection. An
    accepted box without a sign change is a tangential touch (or a near miss
    within the tolerance): it is reported with ``grazing=True`` unless
    ``skip_grazing`` asks for the first transversal crossing instead.
    """
    x = _point(x, f.dim)
    v = _point(v, f.dim)
    if not abs(np.linalg.norm(v) - 1.0) < 1e-9:
        raise ValueError("ray direction must be a unit vector")
    if not t_max > 0:
        raise ValueError("t_max must be positive")
    prog = _program(f)
    P = K.make_params(x, v, 0, 1, math.inf)
    r = K.minimize(K.K_RAY, prog, P, np.array([0.0]), np.array([float(t_max)]), opts.tol, 0.0, 0,
                   opts.budget, K.REFINE_ALL, True, opts.trace, math.inf)
    AL, AH, AA, nacc = r[4], r[5], r[6], r[7]
    stats = _stats(r[3])
    if nacc == 0:
        return None
    order = np.argsort(AL[:, 0], kind="stable")
    for j in order:
        tl, th = AL[j, 0], AH[j, 0]
        fa = _tape.eval_point(prog, 0, x + tl * v)
        fb = _tape.eval_point(prog, 0, x + th * v)
        if fa == 0.0:
            th = tl
        if fa * fb <= 0.0:
            ta, tb = _bisect(prog, x, v, tl, th, fa)
            t = 0.5 * (ta + tb)
            if not t > 0:
                continue
            p = x + t * v
            _, g = _grad(prog, p)
            return RayHit(Interval(ta, tb), p, g / np.linalg.norm(g), False, stats)
        if not skip_grazing:
            # merge neighbouring accepted boxes into one parameter interval
            lo, hi = tl, th
            for k in order:
                if AL[k, 0] <= hi and AH[k, 0] >= lo:
                    lo, hi = min(lo, AL[k, 0]), max(hi, AH[k, 0])
            t = 0.5 * (tl + th)
            p0 = x + t * v
            q, _, ok = _tape.project_to_surface(prog, 0, p0, K.PROJ_ITERS, K.PROJ_FTOL)
            p = q if ok else p0
            _, g = _grad(prog, p)
            n = np.linalg.norm(g)
            return RayHit(Interval(lo, hi), p, g / n if n > 0 else g, True, stats)
    return None


def _grad(prog, p):
    g = np.empty(p.shape[0])
    val = _tape.eval_point_grad(prog, 0, p, g)
    return val, g


def _bisect(prog, x, v, ta, tb, fa):
    for _ in range(200):
        m = 0.5 * (ta + tb)
        if m <= ta or m >= tb:
            break
        fm = _tape.eval_point(prog, 0, x + m * v)
        if fm == 0.0:
            return m, m
        if (fm < 0) == (fa < 0):
            ta, fa = m, fm
        else:
            tb = m
    return ta, tb


def certify_front_facing(f: ImplicitField, x: Sequence[float], R: float, *, domain: Box | None,
                         tol: float, budget: int = DEFAULT_BUDGET) -> bool:
    """True when no point of the surface inside ``B(x, R)`` has ``grad f . (z - x) = 0``,
    i.e. cos(theta) is provably positive there."""
    x = _point(x, f.dim)
    box = _search_box(x, R, domain)
    if box is None:
        return True
    prog = _program(f)
    P = K.make_params(x, np.zeros(0), 0, 1, R)
    status, _, _, _, nacc, _, _ = K.solve(K.K_CERT, prog, P, box[0], box[1], tol, budget, True, False)
    return nacc == 0 and status != K.ST_BUDGET


def cspq(f: ImplicitField, x: Sequence[float], R_D: float, *, domain: Box | None, opts: QueryOptions,
         robin: bool = False) -> CSPQResult:
    """Closest silhouette point within ``R_D``; returns the silhouette bound ``R_S``.

    Without a silhouette inside the ball the bound is ``R_D``. For Robin
    boundaries the bound is then shrunk by :data:`SHRINK_FACTOR` and certified
    front-facing; failed certifications pull it halfway towards the distance to
    the surface, at most :data:`SHRINK_ROUNDS` times.
    """
    x = _point(x, f.dim)
    R_D = float(R_D)
    if not R_D > 0:
        raise ValueError("R_D must be positive")
    prog = _program(f)
    box = _search_box(x, R_D, domain)
    trace = None
    witness = None
    if box is None:
        feasible, converged, stats = False, True, Stats()
        raw = R_D
    else:
        P = K.make_params(x, np.zeros(0), 0, 1, R_D)
        r = _run_min(K.K_CSPQ, prog, P, box, opts, True)
        status, lower, ub, st, AL, AH, AA, nacc, best, inc, has_inc, tr, _ = r
        stats = _stats(st)
        trace = tr if opts.trace else None
        feasible = nacc > 0
        converged = status != K.ST_BUDGET
        partial = math.sqrt(max(lower, 0.0)) if lower < math.inf else R_D
        if feasible:
            raw = min(math.sqrt(max(lower, 0.0)), R_D)
            witness = inc.copy() if has_inc else 0.5 * (AL[best] + AH[best])
        else:
            raw = R_D
    if not converged:
        # the partial lower bound is still a valid silhouette bound
        d = cpq(f, x, domain=domain, opts=opts).R_D.lo
        fallback = min(max(d if math.isfinite(d) else 0.0, partial), R_D)
        return CSPQResult(fallback, raw, witness, feasible, False, None, 0, stats, trace)
    if not robin or not math.isfinite(raw):
        return CSPQResult(raw, raw, witness, feasible, True, None, 0, stats, trace)
    R = raw * SHRINK_FACTOR
    rounds = 0
    d_lo = None
    certified = False
    while True:
        margin = raw - R
        ctol = max(min(opts.tol, margin / 4.0), 1e-12)
        if certify_front_facing(f, x, R, domain=domain, tol=ctol, budget=opts.budget):
            certified = True
            break
        if rounds >= SHRINK_ROUNDS:
            break
        if d_lo is None:
            d_lo = cpq(f, x, domain=domain, opts=opts).R_D.lo
            d_lo = min(d_lo, R) if math.isfinite(d_lo) else 0.0
        R = d_lo + 0.5 * (R - d_lo)
        rounds += 1
    if not certified:
        R = d_lo if d_lo is not None else R
    return CSPQResult(R, raw, witness, feasible, True, certified, rounds, stats, trace)


def rrbq(f: ImplicitField, mu: RobinCoefficientField, x: Sequence[float], R_S: float, *,
         domain: Box | None, opts: QueryOptions) -> RRBQResult:
    """Robin radius bound within ``R_S``; dispatches on the field dimension."""
    x = _point(x, f.dim)
    R_S = float(R_S)
    if not R_S > 0:
        raise ValueError("R_S must be positive")
    kind = K.K_RRBQ2 if f.dim == 2 else K.K_RRBQ3
    prog = _program(f, mu)
    box = _search_box(x, R_S, domain)
    if box is None:
        return RRBQResult(R_S, True, Interval(math.inf, math.inf), None, True, Stats())
    P = K.make_params(x, np.zeros(0), 0, 1, R_S)
    r = _run_min(kind, prog, P, box, opts, False, opts.rrbq_width * opts.tol)
    status, lower, ub, st, AL, AH, AA, nacc, best, inc, has_inc, tr, _ = r
    stats = _stats(st)
    trace = tr if opts.trace else None
    if nacc == 0 and status != K.ST_BUDGET:
        return RRBQResult(R_S, True, Interval(math.inf, math.inf), None, True, stats, trace)
    bound = Interval(lower, max(ub, lower)) if lower < math.inf else Interval(math.inf, math.inf)
    witness = inc.copy() if has_inc else (0.5 * (AL[best] + AH[best]) if best >= 0 else None)
    if status == K.ST_BUDGET:
        # the objective is at least r, so the distance to the surface and the
        # partial lower bound are both valid Robin radius bounds
        d = cpq(f, x, domain=domain, opts=opts).R_D.lo
        fallback = min(max(d if math.isfinite(d) else 0.0, lower), R_S)
        return RRBQResult(fallback, False, bound, witness, False, stats, trace)
    if not lower < math.inf:
        return RRBQResult(R_S, True, bound, witness, True, stats, trace)
    return RRBQResult(min(lower, R_S), False, bound, witness, True, stats, trace)


def rrbq_2d(f, mu, x, R_S, **kw) -> RRBQResult:
    if f.dim != 2:
        raise ValueError("rrbq_2d needs a 2D field")
    return rrbq(f, mu, x, R_S, **kw)


def rrbq_3d(f, mu, x, R_S, **kw) -> RRBQResult:
    if f.dim != 3:
        raise ValueError("rrbq_3d needs a 3D field")
    return rrbq(f, mu, x, R_S, **kw)


def reflectance(mu: float, r: float, cos_theta: float, R: float, d: int) -> float:
    """Throughput factor of a Robin reflection at distance ``r`` inside a ball of radius ``R``.

    It equals ``1 - mu * G / P`` with ``G`` and ``P`` the Green's function and
    Poisson kernel of the ball centred at the walk point. It lies in [0, 1]
    exactly when ``R`` satisfies the Robin radius constraint at that point.
    """
    return 1.0 - mu * green_over_poisson(r, cos_theta, R, d)


def green_over_poisson(r: float, cos_theta: float, R: float, d: int) -> float:
    if r >= R:
        return 0.0
    if d == 2:
        return r * math.log(R / r) / cos_theta
    return r * (1.0 - r / R) / cos_theta


def sample_gamma(f: ImplicitField, x: Sequence[float], R: float, n: int, rng: np.random.Generator, *,
                 domain: Box | None, opts: QueryOptions) -> list[GammaSample]:
    """Draw ``n`` points on ``B(x, R)`` intersected with the zero set of ``f``.

    SOLVE covers the set with fine boxes; boxes are drawn by weighted reservoir
    sampling with weight ``w^(d-1) ||grad f||_2 / ||grad f||_1`` (grad at the box
    centre). Fine boxes straddling a surface patch with unit normal ``n`` number
    about ``||n||_1 / w^(d-1)`` per unit area, so these weights make the draw
    approximately uniform in area; ``pdf_estimate`` is the reciprocal of the
    summed weights, an estimate of ``1 / |Gamma|``. Drawn box centres are
    projected onto the surface; draws whose projection leaves the ball are
    discarded and redrawn.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    x = _point(x, f.dim)
    prog = _program(f)
    box = _search_box(x, R, domain)
    if box is None:
        return []
    P = K.make_params(x, np.zeros(0), 0, 1, R)
    status, st, AL, AH, nacc, _, _ = K.solve(K.K_GAMMA, prog, P, box[0], box[1], opts.tol,
                                            opts.budget, False, False)
    if nacc == 0:
        return []
    d = f.dim
    mids = 0.5 * (AL + AH)
    _, grads = E.grad_points(f.expr, mids)
    w = np.max(AH - AL, axis=1) ** (d - 1)
    with np.errstate(all="ignore"):
        ratio = np.linalg.norm(grads, axis=1) / np.sum(np.abs(grads), axis=1)
    weights = np.where(np.isfinite(ratio), w * ratio, 0.0)
    projected: dict[int, np.ndarray | None] = {}

    def project(i: int):
        if i not in projected:
            q, fq, ok = _tape.project_to_surface(prog, 0, mids[i], K.PROJ_ITERS, K.PROJ_FTOL)
            good = ok and abs(fq) <= opts.tol and np.linalg.norm(q - x) <= R + opts.tol
            projected[i] = q if good else None
        return projected[i]

    slots = weighted_reservoir(weights, n, rng)
    for _ in range(64):
        bad = []
        for s, i in enumerate(slots):
            if project(int(i)) is None:
                weights[i] = 0.0
                bad.append(s)
        if not bad:
            break
        total = weights.sum()
        if not total > 0:
            return []
        slots[bad] = rng.choice(len(weights), size=len(bad), p=weights / total)
    total = float(weights.sum())
    out = []
    for i in slots:
        q = projected[int(i)]
        if q is None:
            continue
        out.append(GammaSample(q.copy(), 1.0 / total, Box(tuple(AL[i]), tuple(AH[i]))))
    return out


def weighted_reservoir(weights: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """``n`` independent single-item weighted reservoirs fed by one pass over ``weights``.

    Item ``i`` replaces each slot with probability ``w_i / W_i`` (``W_i`` the running
    total), so every slot ends up holding item ``i`` with probability ``w_i / W``.
    The number of replaced slots per item is binomial, which keeps the pass
    linear in the number of items plus replacements.
    """
    slots = np.full(n, -1, dtype=np.int64)
    total = 0.0
    for i, wi in enumerate(weights):
        if not wi > 0:
            continue
        total += wi
        k = rng.binomial(n, wi / total)
        if k:
            slots[rng.choice(n, size=k, replace=False)] = i
    return slots


def star_radius(scene: Scene, x: Sequence[float], *, opts: QueryOptions | None = None,
                r_min: float | None = None) -> StarRegion:
    """Dirichlet distance, silhouette bound and Robin radius bound at ``x``."""
    opts = opts or QueryOptions.for_scene(scene)
    x = _point(x, scene.dimension)
    r_min = scene.epsilon_shell / 2 if r_min is None else r_min
    flags: dict = {}
    converged = True
    if scene.f_D is not None:
        c = cpq(scene.f_D, x, domain=scene.domain, opts=opts)
        R_D, closest, d_absent = c.R_D, c.closest, c.dirichlet_absent
        converged &= c.converged
    else:
        R_D, closest, d_absent = Interval(math.inf, math.inf), None, True
    rd = R_D.lo
    if scene.f_R is None:
        R_S = R_R = rd
        region = StarRegion(x, R_D, closest, max(R_S, r_min), max(R_R, r_min), d_absent, True,
                            converged=converged, flags=flags)
        return region
    v, g = scene.f_R.gradient(x)
    near = abs(v) / max(np.linalg.norm(g), 1e-300) < r_min
    s = cspq(scene.f_R, x, rd, domain=scene.domain, opts=opts, robin=scene.is_robin)
    converged &= s.converged
    flags["cspq_certified"] = s.certified
    flags["shrink_rounds"] = s.shrink_rounds
    R_S = s.R_S
    unbounded = False
    if scene.is_robin:
        rr = rrbq(scene.f_R, scene.mu, x, R_S, domain=scene.domain, opts=opts)
        R_R, unbounded = rr.R_R, rr.unbounded
        converged &= rr.converged
    else:
        R_R = R_S
    R_S = max(R_S, r_min)
    R_R = max(min(R_R, R_S), r_min)
    return StarRegion(x, R_D, closest, R_S, R_R, d_absent, False, unbounded, near, converged, flags)
