import math
from fractions import Fraction

import mpmath
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from ivwost import expr as E
from ivwost.interval import (Box, DualInterval, Interval, ThreeValued, dual_lift, iv_arith,
                             iv_div_extended, iv_elem, iv_elem_flagged, iv_norm)

mpmath.mp.prec = 200

finite = st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False)
positive = st.floats(min_value=1e-6, max_value=1e6, allow_nan=False, allow_infinity=False)


@st.composite
def intervals(draw, elems=finite):
    a, b = draw(elems), draw(elems)
    return Interval(min(a, b), max(a, b))


def members(iv: Interval, k: int = 5) -> list[float]:
    if iv.lo == iv.hi:
        return [iv.lo]
    return [iv.lo, iv.hi] + [iv.lo + (iv.hi - iv.lo) * t for t in np.linspace(0, 1, k)[1:-1]]


def encloses(iv: Interval, exact) -> bool:
    return Fraction(iv.lo) <= exact <= Fraction(iv.hi)


@given(intervals(), intervals())
def test_add_sub_mul_contain_exact_results(a, b):
    for x in members(a):
        for y in members(b):
            fx, fy = Fraction(x), Fraction(y)
            assert encloses(a + b, fx + fy)
            assert encloses(a - b, fx - fy)
            assert encloses(a * b, fx * fy)


@given(intervals(), intervals(positive))
def test_division_by_positive_interval_contains_exact_quotient(a, b):
    q = a / b
    for x in members(a):
        for y in members(b):
            assert encloses(q, Fraction(x) / Fraction(y))


@given(intervals())
def test_square_and_power(a):
    s = a.sqr()
    p3 = a ** 3
    assert s.lo >= 0
    for x in members(a):
        assert encloses(s, Fraction(x) ** 2)
        assert encloses(p3, Fraction(x) ** 3)


@given(intervals(positive))
def test_sqrt_exp_log_contain_high_precision_values(a):
    r, lg = a.sqrt(), a.log()
    for x in members(a):
        m = mpmath.mpf(x)
        assert r.lo <= mpmath.sqrt(m) <= r.hi
        assert lg.lo <= mpmath.log(m) <= lg.hi


@given(intervals(st.floats(min_value=-700, max_value=700, allow_nan=False)))
def test_exp_contains_high_precision_values(a):
    e = a.exp()
    for x in members(a):
        assert e.lo <= mpmath.exp(mpmath.mpf(x)) <= e.hi


@given(intervals(), intervals())
def test_min_max_abs(a, b):
    lo, hi = a.min(b), a.max(b)
    ab = abs(a)
    for x in members(a):
        assert ab.contains(abs(x))
        for y in members(b):
            assert lo.contains(min(x, y))
            assert hi.contains(max(x, y))


def test_outward_rounding_is_strict_when_inexact():
    third = Interval(1, 1) / Interval(3, 3)
    assert third.lo < third.hi
    assert encloses(third, Fraction(1, 3))
    tenth = Interval(0.1, 0.1) + Interval(0.2, 0.2)
    assert encloses(tenth, Fraction(0.1) + Fraction(0.2))
    assert tenth.lo < tenth.hi


def test_exact_operations_stay_degenerate():
    assert Interval(1.5, 1.5) * Interval(2, 2) == Interval(3, 3)
    assert Interval(4, 4).sqrt() == Interval(2, 2)
    assert Interval(0.5, 0.5) + Interval(0.25, 0.25) == Interval(0.75, 0.75)


@pytest.mark.parametrize("num, den, expected", [
    (Interval(1, 2), Interval(0, 0.5), Interval(2, math.inf)),
    (Interval(1, 2), Interval(-0.5, 0), Interval(-math.inf, -2)),
    (Interval(1, 2), Interval(-1, 1), Interval(-math.inf, math.inf)),
    (Interval(-1, 1), Interval(0, 1), Interval(-math.inf, math.inf)),
    (Interval(1, 2), Interval(0, 0), Interval(math.inf, math.inf)),
    (Interval(0, 0), Interval(0, 0), Interval(-math.inf, math.inf)),
])
def test_extended_division(num, den, expected):
    assert iv_div_extended(num, den) == expected


def test_domain_violations():
    assert Interval(-2, -1).sqrt().is_empty
    assert Interval(-1, -0.5).log().is_empty
    r, clipped = iv_elem_flagged("sqrt", Interval(-1, 4))
    assert clipped and r == Interval(0, 2)
    lg = Interval(0, 1).log()
    assert lg.lo == -math.inf and lg.hi == 0
    assert iv_elem("clamp_nonneg", Interval(-3, -1)) == Interval(0, 0)
    assert iv_elem("clamp_nonneg", Interval(-3, 2)) == Interval(0, 2)


def test_empty_propagates():
    e = Interval.empty()
    assert (e + Interval(1, 2)).is_empty
    assert (e * Interval(1, 2)).is_empty
    assert not e.contains(0.0)
    with pytest.raises(ValueError):
        Interval(2, 1)


def test_named_operations_and_errors():
    assert iv_arith("add", Interval(1, 2), Interval(3, 4)) == Interval(4, 6)
    assert iv_arith("neg", Interval(1, 2)) == Interval(-2, -1)
    with pytest.raises(ValueError):
        iv_arith("pow", Interval(1, 2), Interval(1, 2))
    with pytest.raises(ValueError):
        iv_elem("sin", Interval(1, 2))


def test_three_valued_conjunction():
    P, N, U = ThreeValued.POSITIVE, ThreeValued.NEGATIVE, ThreeValued.UNKNOWN
    assert P & P is P
    assert P & U is U
    assert U & N is N
    assert N & P is N


@given(st.lists(finite, min_size=2, max_size=2), st.lists(positive, min_size=2, max_size=2),
       st.lists(finite, min_size=2, max_size=2))
def test_norm_enclosure(lo, w, c):
    b = Box(tuple(lo), tuple(l + x for l, x in zip(lo, w)))
    n = iv_norm(b, c)
    rng = np.random.default_rng(0)
    lo_a, hi_a = b.arrays()
    for z in lo_a + (hi_a - lo_a) * rng.random((20, 2)):
        z = np.minimum(np.maximum(z, lo_a), hi_a)
        exact = mpmath.sqrt(sum((mpmath.mpf(zi) - mpmath.mpf(ci)) ** 2 for zi, ci in zip(z, c)))
        assert n.lo <= exact <= n.hi


def _fd_grad(expr, p, h=1e-6):
    d = len(p)
    g = np.empty(d)
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        v = E.eval_points(expr, np.stack([p + e, p - e]))
        g[i] = (v[0] - v[1]) / (2 * h)
    return g


@settings(max_examples=60, deadline=None)
@given(st.floats(0.2, 2.0), st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(1e-3, 0.3))
def test_dual_enclosure_contains_finite_differences(a, px, py, half):
    x, y = E.coords(2)
    f = E.exp(-a * E.sqr(x)) * (y + 2.0) + E.sqrt(E.sqr(x) + E.sqr(y) + 1.0) - E.log(E.sqr(y) + 1.5) / (x + 3.0)
    box = Box.around((px, py), half)
    X = dual_lift(box)
    val = (-a * X[0].sqr()).exp() * (X[1] + 2.0) + (X[0].sqr() + X[1].sqr() + 1.0).sqrt() \
        - (X[1].sqr() + 1.5).log() / (X[0] + 3.0)
    assert isinstance(val, DualInterval)
    p = np.array([px, py])
    g = _fd_grad(f, p)
    for gi, enc in zip(g, val.partials):
        slack = 1e-4 * (1 + abs(gi))
        assert enc.lo - slack <= gi <= enc.hi + slack
