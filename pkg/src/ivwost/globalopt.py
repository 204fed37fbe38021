"""Interval branch-and-bound: constrained global minimisation and constraint solving.

These are the generic versions driven by Python callables. The geometric
queries use compiled specialisations of the same loops
(:mod:`ivwost._kernels.engine`); the test suite checks that both agree box for box.

>>> from ivwost.interval import Box
>>> obj = ObjectiveInclusion(lambda Y: (Y[0] - 0.3).sqr() + (Y[1] + 0.2).sqr())
>>> res = minimize(obj, conj([]), Acceptance(1e-4), Box((-1, -1), (1, 1)))
>>> res.minimum_bound.lo <= 0.0 <= res.minimum_bound.hi
True
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .interval import Box, Interval, ThreeValued, iv_norm

__all__ = [
    "ObjectiveInclusion",
    "ConstraintInclusion",
    "Acceptance",
    "Stats",
    "MinimizeResult",
    "SolveResult",
    "minimize",
    "solve",
    "subdivide",
    "eq_zero",
    "ball",
    "halfspace_dot",
    "conj",
    "DEFAULT_BUDGET",
]

DEFAULT_BUDGET = 1_000_000

POS = ThreeValued.POSITIVE
NEG = ThreeValued.NEGATIVE
UNK = ThreeValued.UNKNOWN


@dataclass(frozen=True)
class ObjectiveInclusion:
    """Box -> Interval enclosure of the objective.

    ``point`` optionally maps a box to ``(ok, value, point)`` for a feasible point
    found near the box; feasible values tighten the incumbent upper bound.
    """

    fn: Callable[[Box], Interval]
    point: Callable[[Box], tuple[bool, float, np.ndarray]] | None = None

    def __call__(self, Y: Box) -> Interval:
        return self.fn(Y)


@dataclass(frozen=True)
class ConstraintInclusion:
    fn: Callable[[Box], ThreeValued]

    def __call__(self, Y: Box) -> ThreeValued:
        return self.fn(Y)


@dataclass(frozen=True)
class Acceptance:
    """A box is fine enough once its widest side is at most ``tolerance``."""

    tolerance: float

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")

    def __call__(self, Y: Box) -> bool:
        return Y.width <= self.tolerance


@dataclass
class Stats:
    boxes_explored: int = 0
    boxes_pruned_constraint: int = 0
    boxes_pruned_bound: int = 0
    boxes_accepted: int = 0

    def as_dict(self) -> dict:
        return {
            "boxes_explored": self.boxes_explored,
            "boxes_pruned_constraint": self.boxes_pruned_constraint,
            "boxes_pruned_bound": self.boxes_pruned_bound,
            "boxes_accepted": self.boxes_accepted,
        }


@dataclass
class MinimizeResult:
    feasible: bool
    minimum_bound: Interval
    accepted_boxes: list[Box]
    representative_point: np.ndarray | None
    stats: Stats
    converged: bool = True
    incumbent: np.ndarray | None = None
    trace: np.ndarray | None = None


@dataclass
class SolveResult:
    accepted_boxes: list[Box]
    stats: Stats
    converged: bool = True
    trace: np.ndarray | None = None


# trace event codes, shared with the compiled engine
EV_KEPT, EV_PRUNE_CON, EV_PRUNE_BOUND, EV_ACCEPT, EV_PRUNE_POP = range(5)


def subdivide(Y: Box) -> tuple[Box, Box]:
    """Bisect the widest side at its midpoint (lowest index on ties)."""
    widths = [b - a for a, b in zip(Y.lo, Y.hi)]
    w = max(widths)
    if not w > 0:
        raise ValueError("cannot subdivide a zero-width box")
    ax = widths.index(w)
    m = 0.5 * (Y.lo[ax] + Y.hi[ax])
    hi1 = list(Y.hi)
    hi1[ax] = m
    lo2 = list(Y.lo)
    lo2[ax] = m
    return Box(Y.lo, tuple(hi1)), Box(tuple(lo2), Y.hi)


class _Tracer:
    def __init__(self, enabled: bool):
        self.rows: list[list[float]] | None = [] if enabled else None

    def add(self, ev: int, Y: Box, a: float, b: float) -> None:
        if self.rows is None:
            return
        lo = list(Y.lo) + [0.0] * (3 - Y.dim)
        hi = list(Y.hi) + [0.0] * (3 - Y.dim)
        self.rows.append([ev, a, b, *lo, *hi])

    def array(self) -> np.ndarray | None:
        if self.rows is None:
            return None
        return np.asarray(self.rows, dtype=float).reshape(-1, 9)


def _gap_closed(lower: float, ub: float, gap: float, sqrt_units: bool, relative: bool) -> bool:
    if not ub < math.inf:
        return False
    lo, hi = (math.sqrt(max(lower, 0.0)), math.sqrt(max(ub, 0.0))) if sqrt_units else (lower, ub)
    return hi - lo <= (gap * abs(hi) if relative else gap)


def minimize(obj: ObjectiveInclusion, con: ConstraintInclusion, acc: Acceptance, X: Box, *,
             budget: int = DEFAULT_BUDGET, gap: float = 0.0, gap_sqrt: bool = False,
             gap_relative: bool = False, prune_bound: bool = True,
             trace: bool = False) -> MinimizeResult:
    """Best-first constrained minimisation over ``X``.

    Boxes leave a priority queue in order of objective lower bound (FIFO among
    ties). Children proven infeasible, or whose lower bound exceeds the incumbent
    bound ``UB``, are pruned. ``UB`` only decreases through boxes on which the
    constraint provably holds and through feasible points supplied by
    ``obj.point``, so it is always attained by a feasible point.

    With ``gap > 0`` the search stops once ``UB`` and the smallest outstanding
    lower bound are within ``gap`` (optionally in square-root units and/or
    relative to ``UB``).
    """
    stats = Stats()
    tr = _Tracer(trace)
    counter = itertools.count()
    heap: list[tuple[float, int, Box]] = [(-math.inf, next(counter), X)]
    ub = math.inf
    incumbent = None
    accepted: list[tuple[float, Box]] = []
    acc_min = math.inf
    converged = True
    lower_stop = None
    while heap:
        a, _, Y = heapq.heappop(heap)
        if prune_bound and a > ub:
            stats.boxes_pruned_bound += 1
            tr.add(EV_PRUNE_POP, Y, a, math.inf)
            continue
        if obj.point is not None:
            ok, val, z = obj.point(Y)
            if ok and val < ub:
                ub = val
                incumbent = np.asarray(z, float)
        if gap > 0 and _gap_closed(min(a, acc_min), ub, gap, gap_sqrt, gap_relative):
            lower_stop = min(a, acc_min)
            accepted.append((a, Y))
            break
        if acc(Y):
            accepted.append((a, Y))
            acc_min = min(acc_min, a)
            stats.boxes_accepted += 1
            tr.add(EV_ACCEPT, Y, a, ub)
            continue
        for Yi in subdivide(Y):
            verdict = con(Yi)
            stats.boxes_explored += 1
            if verdict is NEG:
                stats.boxes_pruned_constraint += 1
                tr.add(EV_PRUNE_CON, Yi, 0.0, 0.0)
                continue
            g = obj(Yi)
            if g.lo == math.inf or (prune_bound and g.lo > ub):
                stats.boxes_pruned_bound += 1
                tr.add(EV_PRUNE_BOUND, Yi, g.lo, g.hi)
                continue
            tr.add(EV_KEPT, Yi, g.lo, g.hi)
            heapq.heappush(heap, (g.lo, next(counter), Yi))
            if verdict is POS and g.hi < ub:
                ub = g.hi
        if stats.boxes_explored >= budget:
            converged = False
            lower_stop = min([acc_min] + [h[0] for h in heap])
            break
    if lower_stop is None:
        lower_stop = acc_min
    feasible = bool(accepted)
    if feasible:
        best = min(range(len(accepted)), key=lambda i: accepted[i][0])
        rep = accepted[best][1].midpoint
        hi = max(ub, lower_stop)
        bound = Interval(lower_stop, hi)
    elif not converged:
        # nothing accepted yet, but the outstanding boxes still bound the minimum
        rep = None
        bound = Interval(lower_stop, max(ub, lower_stop))
    else:
        rep = None
        bound = Interval(math.inf, math.inf)
    return MinimizeResult(feasible, bound, [b for _, b in accepted], rep, stats, converged,
                          incumbent, tr.array())


def solve(con: ConstraintInclusion, acc: Acceptance, X: Box, *, budget: int = DEFAULT_BUDGET,
          first_only: bool = False, trace: bool = False) -> SolveResult:
    """Depth-first constraint satisfaction over ``X``.

    A box is accepted once it is fine enough and not proven violating; equality
    constraints can never be proven to hold on a box of positive width, so
    requiring a positive verdict would return nothing for them.
    """
    stats = Stats()
    tr = _Tracer(trace)
    stack = [X]
    out: list[Box] = []
    converged = True
    while stack:
        Y = stack.pop()
        verdict = con(Y)
        stats.boxes_explored += 1
        if verdict is NEG:
            stats.boxes_pruned_constraint += 1
            tr.add(EV_PRUNE_CON, Y, 0.0, 0.0)
            continue
        if acc(Y):
            out.append(Y)
            stats.boxes_accepted += 1
            tr.add(EV_ACCEPT, Y, 0.0, 0.0)
            if first_only:
                break
            continue
        tr.add(EV_KEPT, Y, 0.0, 0.0)
        if stats.boxes_explored >= budget:
            converged = False
            break
        lower, upper = subdivide(Y)
        stack.append(upper)
        stack.append(lower)
    return SolveResult(out, stats, converged, tr.array())


# ---------------------------------------------------------------------------
# constraint combinators


def _field_interval(f) -> Callable[[Box], Interval]:
    if hasattr(f, "eval_interval"):
        return f.eval_interval
    return f


def eq_zero(f) -> ConstraintInclusion:
    """``f = 0``: negative when 0 is outside the field enclosure, otherwise unknown."""
    fi = _field_interval(f)

    def check(Y: Box) -> ThreeValued:
        v = fi(Y)
        if v.is_empty or v.lo > 0 or v.hi < 0:
            return NEG
        if v.lo == 0 and v.hi == 0:
            return POS
        return UNK

    return ConstraintInclusion(check)


def ball(center: Sequence[float], R) -> ConstraintInclusion:
    """``||z - center|| <= R`` (``R`` a number or an :class:`Interval`, using its upper end)."""
    c = np.asarray(center, float)
    r = R.hi if isinstance(R, Interval) else float(R)

    def check(Y: Box) -> ThreeValued:
        n = iv_norm(Y, c)
        if n.lo > r:
            return NEG
        if n.hi <= r:
            return POS
        return UNK

    return ConstraintInclusion(check)


def halfspace_dot(g, sign: int = 1) -> ConstraintInclusion:
    """``sign * g(z) >= 0`` for a field or Box -> Interval callable ``g``."""
    gi = _field_interval(g)
    s = 1 if sign >= 0 else -1

    def check(Y: Box) -> ThreeValued:
        v = gi(Y)
        lo, hi = (v.lo, v.hi) if s > 0 else (-v.hi, -v.lo)
        if v.is_empty or hi < 0:
            return NEG
        if lo >= 0:
            return POS
        return UNK

    return ConstraintInclusion(check)


def conj(constraints: Sequence[ConstraintInclusion]) -> ConstraintInclusion:
    """Three-valued conjunction; the empty conjunction is always positive."""
    cs = list(constraints)

    def check(Y: Box) -> ThreeValued:
        out = POS
        for c in cs:
            out = out & c(Y)
            if out is NEG:
                return NEG
        return out

    return ConstraintInclusion(check)
