"""Interval arithmetic with outward rounding and dual intervals for forward-mode AD.

The arithmetic itself lives in compiled kernels (:mod:`ivwost._kernels.iv`); the
classes here are thin immutable wrappers for use from Python.

>>> Interval(1, 2) * Interval(-1, 3)
Interval(-2.0, 6.0)
>>> Interval(1, 2) / Interval(0, 0.5)
Interval(2.0, inf)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np

from ._kernels import iv as _iv

__all__ = [
    "Interval",
    "Box",
    "DualInterval",
    "ThreeValued",
    "EMPTY",
    "iv_arith",
    "iv_div_extended",
    "iv_elem",
    "iv_elem_flagged",
    "iv_norm",
    "dual_lift",
]


class ThreeValued(IntEnum):
    """Verdict of a constraint inclusion over a box."""

    NEGATIVE = -1
    UNKNOWN = 0
    POSITIVE = 1

    def __and__(self, other: "ThreeValued") -> "ThreeValued":
        if self is ThreeValued.NEGATIVE or other is ThreeValued.NEGATIVE:
            return ThreeValued.NEGATIVE
        if self is ThreeValued.POSITIVE and other is ThreeValued.POSITIVE:
            return ThreeValued.POSITIVE
        return ThreeValued.UNKNOWN


@dataclass(frozen=True, slots=True)
class Interval:
    """Closed interval ``[lo, hi]`` over the extended reals. NaN endpoints mean empty."""

    lo: float
    hi: float

    def __post_init__(self):
        lo = float(self.lo)
        hi = float(self.hi)
        if math.isnan(lo) or math.isnan(hi):
            lo = hi = math.nan
        elif lo > hi:
            raise ValueError(f"invalid interval [{lo}, {hi}]")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def point(cls, x: float) -> "Interval":
        return cls(x, x)

    @classmethod
    def empty(cls) -> "Interval":
        return cls(math.nan, math.nan)

    @classmethod
    def entire(cls) -> "Interval":
        return cls(-math.inf, math.inf)

    @classmethod
    def _from(cls, pair) -> "Interval":
        return cls(pair[0], pair[1])

    @property
    def is_empty(self) -> bool:
        return math.isnan(self.lo)

    @property
    def width(self) -> float:
        return 0.0 if self.is_empty else self.hi - self.lo

    @property
    def mid(self) -> float:
        if math.isinf(self.lo) or math.isinf(self.hi):
            if self.lo == -math.inf and self.hi == math.inf:
                return 0.0
            return self.lo if math.isinf(self.hi) else self.hi
        return 0.5 * (self.lo + self.hi)

    def contains(self, x) -> bool:
        if self.is_empty:
            return False
        if isinstance(x, Interval):
            return x.is_empty or (self.lo <= x.lo and x.hi <= self.hi)
        return self.lo <= x <= self.hi

    __contains__ = contains

    def hull(self, other: "Interval") -> "Interval":
        return Interval._from(_iv.iv_hull(self.lo, self.hi, other.lo, other.hi))

    def intersect(self, other: "Interval") -> "Interval":
        if self.is_empty or other.is_empty:
            return EMPTY
        lo, hi = max(self.lo, other.lo), min(self.hi, other.hi)
        return Interval(lo, hi) if lo <= hi else EMPTY

    def __add__(self, o):
        o = _coerce(o)
        return Interval._from(_iv.iv_add(self.lo, self.hi, o.lo, o.hi))

    __radd__ = __add__

    def __sub__(self, o):
        o = _coerce(o)
        return Interval._from(_iv.iv_sub(self.lo, self.hi, o.lo, o.hi))

    def __rsub__(self, o):
        return _coerce(o) - self

    def __mul__(self, o):
        o = _coerce(o)
        return Interval._from(_iv.iv_mul(self.lo, self.hi, o.lo, o.hi))

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = _coerce(o)
        return Interval._from(_iv.iv_div(self.lo, self.hi, o.lo, o.hi))

    def __rtruediv__(self, o):
        return _coerce(o) / self

    def __neg__(self):
        return Interval._from(_iv.iv_neg(self.lo, self.hi))

    def __pow__(self, n: int):
        if n == 2:
            return self.sqr()
        return Interval._from(_iv.iv_pown(self.lo, self.hi, int(n)))

    def sqr(self) -> "Interval":
        return Interval._from(_iv.iv_sqr(self.lo, self.hi))

    def sqrt(self) -> "Interval":
        return Interval._from(_iv.iv_sqrt(self.lo, self.hi))

    def exp(self) -> "Interval":
        return Interval._from(_iv.iv_exp(self.lo, self.hi))

    def log(self) -> "Interval":
        return Interval._from(_iv.iv_log(self.lo, self.hi))

    def __abs__(self) -> "Interval":
        return Interval._from(_iv.iv_abs(self.lo, self.hi))

    def clamp_nonneg(self) -> "Interval":
        return Interval._from(_iv.iv_clamp_nonneg(self.lo, self.hi))

    def min(self, o) -> "Interval":
        o = _coerce(o)
        return Interval._from(_iv.iv_min(self.lo, self.hi, o.lo, o.hi))

    def max(self, o) -> "Interval":
        o = _coerce(o)
        return Interval._from(_iv.iv_max(self.lo, self.hi, o.lo, o.hi))

    def __repr__(self) -> str:
        if self.is_empty:
            return "Interval.empty()"
        return f"Interval({self.lo!r}, {self.hi!r})"

    def __str__(self) -> str:
        if self.is_empty:
            return "[empty]"
        return f"[{self.lo:.17g}, {self.hi:.17g}]"


EMPTY = Interval(math.nan, math.nan)


def _coerce(v) -> Interval:
    if isinstance(v, Interval):
        return v
    return Interval(float(v), float(v))


@dataclass(frozen=True, slots=True)
class Box:
    """Axis-aligned box stored as endpoint tuples."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) != len(hi):
            raise ValueError("box endpoints differ in dimension")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"invalid box {lo} {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_intervals(cls, dims: Iterable[Interval]) -> "Box":
        dims = list(dims)
        return cls(tuple(i.lo for i in dims), tuple(i.hi for i in dims))

    @classmethod
    def around(cls, center: Sequence[float], half: float) -> "Box":
        """Cube of side ``2*half`` centred at ``center``."""
        c = [float(v) for v in center]
        return cls(tuple(_iv.sub_down(v, half) for v in c), tuple(_iv.add_up(v, half) for v in c))

    @classmethod
    def point(cls, p: Sequence[float]) -> "Box":
        return cls(tuple(p), tuple(p))

    @property
    def dims(self) -> tuple[Interval, ...]:
        return tuple(Interval(a, b) for a, b in zip(self.lo, self.hi))

    @property
    def dim(self) -> int:
        return len(self.lo)

    def __len__(self) -> int:
        return len(self.lo)

    def __getitem__(self, i: int) -> Interval:
        return Interval(self.lo[i], self.hi[i])

    @property
    def width(self) -> float:
        return max(b - a for a, b in zip(self.lo, self.hi))

    @property
    def midpoint(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))

    def contains(self, p: Sequence[float]) -> bool:
        return all(a <= v <= b for a, v, b in zip(self.lo, p, self.hi))

    def intersect(self, other: "Box") -> "Box | None":
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        if any(a > b for a, b in zip(lo, hi)):
            return None
        return Box(lo, hi)

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.asarray(self.lo, dtype=float), np.asarray(self.hi, dtype=float)

    def __str__(self) -> str:
        return " x ".join(str(i) for i in self.dims)


@dataclass(frozen=True, slots=True)
class DualInterval:
    """Value enclosure paired with enclosures of each partial derivative."""

    value: Interval
    partials: tuple[Interval, ...]

    @classmethod
    def constant(cls, c, d: int) -> "DualInterval":
        return cls(_coerce(c), tuple(Interval(0.0, 0.0) for _ in range(d)))

    def _lift(self, o) -> "DualInterval":
        if isinstance(o, DualInterval):
            return o
        return DualInterval.constant(o, len(self.partials))

    def _map(self, value: Interval, factor: Interval) -> "DualInterval":
        return DualInterval(value, tuple(factor * p for p in self.partials))

    def __add__(self, o):
        o = self._lift(o)
        return DualInterval(self.value + o.value, tuple(a + b for a, b in zip(self.partials, o.partials)))

    __radd__ = __add__

    def __sub__(self, o):
        o = self._lift(o)
        return DualInterval(self.value - o.value, tuple(a - b for a, b in zip(self.partials, o.partials)))

    def __rsub__(self, o):
        return self._lift(o) - self

    def __neg__(self):
        return DualInterval(-self.value, tuple(-p for p in self.partials))

    def __mul__(self, o):
        o = self._lift(o)
        return DualInterval(
            self.value * o.value,
            tuple(a * o.value + self.value * b for a, b in zip(self.partials, o.partials)),
        )

    __rmul__ = __mul__

    def __truediv__(self, o):
        o = self._lift(o)
        q = self.value / o.value
        return DualInterval(q, tuple((a - q * b) / o.value for a, b in zip(self.partials, o.partials)))

    def __rtruediv__(self, o):
        return self._lift(o) / self

    def sqr(self) -> "DualInterval":
        return self._map(self.value.sqr(), 2.0 * self.value)

    def sqrt(self) -> "DualInterval":
        r = self.value.sqrt()
        return self._map(r, Interval(1.0, 1.0) / (2.0 * r))

    def exp(self) -> "DualInterval":
        r = self.value.exp()
        return self._map(r, r)

    def log(self) -> "DualInterval":
        v = self.value
        return self._map(v.log(), Interval(1.0, 1.0) / Interval(max(v.lo, 0.0), v.hi))

    def __abs__(self) -> "DualInterval":
        v = self.value
        if v.lo > 0:
            s = Interval(1.0, 1.0)
        elif v.hi < 0:
            s = Interval(-1.0, -1.0)
        else:
            s = Interval(-1.0, 1.0)
        return self._map(abs(v), s)

    def min(self, o) -> "DualInterval":
        o = self._lift(o)
        a, b = self.value, o.value
        if a.hi < b.lo:
            parts = self.partials
        elif b.hi < a.lo:
            parts = o.partials
        else:
            parts = tuple(p.hull(q) for p, q in zip(self.partials, o.partials))
        return DualInterval(a.min(b), parts)

    def max(self, o) -> "DualInterval":
        o = self._lift(o)
        a, b = self.value, o.value
        if a.lo > b.hi:
            parts = self.partials
        elif b.lo > a.hi:
            parts = o.partials
        else:
            parts = tuple(p.hull(q) for p, q in zip(self.partials, o.partials))
        return DualInterval(a.max(b), parts)


_ARITH = {
    "add": _iv.iv_add,
    "sub": _iv.iv_sub,
    "mul": _iv.iv_mul,
}


def iv_arith(op: str, a: Interval, b: Interval | None = None) -> Interval:
    """``op`` in ``{add, sub, mul, neg}`` with outward rounding."""
    if op == "neg":
        return Interval._from(_iv.iv_neg(a.lo, a.hi))
    try:
        fn = _ARITH[op]
    except KeyError:
        raise ValueError(f"unknown interval operation {op!r}") from None
    if b is None:
        raise ValueError(f"{op} needs two operands")
    return Interval._from(fn(a.lo, a.hi, b.lo, b.hi))


def iv_div_extended(a: Interval, b: Interval) -> Interval:
    """Division where a divisor touching zero produces infinite endpoints.

    ``0/0`` (zero in both operands) returns the whole extended line; a positive
    numerator over ``[0, 0]`` gives ``[+inf, +inf]``.
    """
    return Interval._from(_iv.iv_div(a.lo, a.hi, b.lo, b.hi))


_ELEM = {
    "exp": _iv.iv_exp,
    "sqrt": _iv.iv_sqrt,
    "log": _iv.iv_log,
    "abs": _iv.iv_abs,
    "clamp_nonneg": _iv.iv_clamp_nonneg,
    "sqr": _iv.iv_sqr,
}


def iv_elem(fn: str, a: Interval) -> Interval:
    """Elementary function over an interval.

    ``clamp_nonneg`` projects both endpoints onto ``[0, inf)``; it equals the
    intersection with ``[0, inf)`` unless ``a`` is entirely negative, where it
    returns ``[0, 0]`` so that a later division yields ``+inf``.
    """
    return iv_elem_flagged(fn, a)[0]


def iv_elem_flagged(fn: str, a: Interval) -> tuple[Interval, bool]:
    """Like :func:`iv_elem`, also reporting whether part of ``a`` fell outside the
    function's domain (negative arguments of sqrt/log) and was discarded."""
    try:
        kernel = _ELEM[fn]
    except KeyError:
        raise ValueError(f"unknown elementary function {fn!r}") from None
    clipped = fn in ("sqrt", "log") and not a.is_empty and a.lo < 0
    return Interval._from(kernel(a.lo, a.hi)), clipped


def iv_norm(b: Box, center: Sequence[float]) -> Interval:
    """Enclosure of ``||z - center||`` for ``z`` in ``b``."""
    lo, hi = b.arrays()
    return Interval._from(_iv.box_norm(lo, hi, np.asarray(center, dtype=float)))


def dual_lift(b: Box) -> list[DualInterval]:
    """Seed duals for each coordinate of ``b``."""
    d = b.dim
    out = []
    for i in range(d):
        parts = tuple(Interval(1.0, 1.0) if j == i else Interval(0.0, 0.0) for j in range(d))
        out.append(DualInterval(b[i], parts))
    return out
