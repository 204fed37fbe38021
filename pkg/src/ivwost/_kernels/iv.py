"""Scalar interval primitives compiled with numba.

Intervals travel as ``(lo, hi)`` float pairs. The empty interval is ``(nan, nan)``.
Endpoints of +, -, *, / and sqrt are rounded in the outward direction only when
the floating-point result was inexact; the test uses error-free transformations
(TwoSum, Dekker's TwoProduct). exp and log are widened by one ulp unconditionally.
"""

import math

import numpy as np
from numba import njit

INF = math.inf
MAXF = 1.7976931348623157e308
MINF = 5e-324  # smallest subnormal
_SPLIT = 134217729.0  # 2**27 + 1
_EFT_SMALL = 1e-280
_EFT_LARGE = 1e280

jit = njit(cache=True, nogil=True)


@jit
def next_down(x):
    return np.nextafter(x, -INF)


@jit
def next_up(x):
    return np.nextafter(x, INF)


@jit
def _two_prod_err(a, b, p):
    # a*b == p + err exactly, valid away from overflow/underflow
    t = _SPLIT * a
    ah = t - (t - a)
    al = a - ah
    t = _SPLIT * b
    bh = t - (t - b)
    bl = b - bh
    return ((ah * bh - p) + ah * bl + al * bh) + al * bl


@jit
def _eft_unsafe(a, b, p):
    ap = abs(p)
    return ap < _EFT_SMALL or ap > _EFT_LARGE or abs(a) > _EFT_LARGE or abs(b) > _EFT_LARGE


@jit
def add_down(a, b):
    s = a + b
    if s != s:
        return -INF
    if math.isinf(s):
        if math.isinf(a) or math.isinf(b):
            return s
        return s if s < 0 else MAXF
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return next_down(s) if err < 0 else s


@jit
def add_up(a, b):
    s = a + b
    if s != s:
        return INF
    if math.isinf(s):
        if math.isinf(a) or math.isinf(b):
            return s
        return s if s > 0 else -MAXF
    bb = s - a
    err = (a - (s - bb)) + (b - bb)
    return next_up(s) if err > 0 else s


@jit
def sub_down(a, b):
    return add_down(a, -b)


@jit
def sub_up(a, b):
    return add_up(a, -b)


@jit
def mul_down(a, b):
    if a == 0.0 or b == 0.0:
        return 0.0
    p = a * b
    if math.isinf(a) or math.isinf(b):
        return p
    if math.isinf(p):
        return p if p < 0 else MAXF
    if p == 0.0:
        # underflow: the exact product is nonzero with a known sign
        return 0.0 if (a > 0) == (b > 0) else -MINF
    if _eft_unsafe(a, b, p):
        return next_down(p)
    return next_down(p) if _two_prod_err(a, b, p) < 0 else p


@jit
def mul_up(a, b):
    if a == 0.0 or b == 0.0:
        return 0.0
    p = a * b
    if math.isinf(a) or math.isinf(b):
        return p
    if math.isinf(p):
        return p if p > 0 else -MAXF
    if p == 0.0:
        return MINF if (a > 0) == (b > 0) else 0.0
    if _eft_unsafe(a, b, p):
        return next_up(p)
    return next_up(p) if _two_prod_err(a, b, p) > 0 else p


@jit
def _div_residual_sign(a, b, q):
    # sign of a/b - q, computed from the exact remainder a - q*b
    p = q * b
    r = (a - p) - _two_prod_err(q, b, p)
    if r == 0.0:
        return 0
    return 1 if (r > 0) == (b > 0) else -1


@jit
def div_down(a, b):
    """Lower rounding of a/b for b != 0."""
    if a == 0.0:
        return 0.0
    q = a / b
    if q != q:
        return -INF
    if math.isinf(a) or math.isinf(b):
        return q
    if math.isinf(q):
        return q if q < 0 else MAXF
    if q == 0.0:
        return 0.0 if (a > 0) == (b > 0) else -MINF
    if _eft_unsafe(q, b, a):
        return next_down(q)
    return next_down(q) if _div_residual_sign(a, b, q) < 0 else q


@jit
def div_up(a, b):
    if a == 0.0:
        return 0.0
    q = a / b
    if q != q:
        return INF
    if math.isinf(a) or math.isinf(b):
        return q
    if math.isinf(q):
        return q if q > 0 else -MAXF
    if q == 0.0:
        return MINF if (a > 0) == (b > 0) else 0.0
    if _eft_unsafe(q, b, a):
        return next_up(q)
    return next_up(q) if _div_residual_sign(a, b, q) > 0 else q


@jit
def sqrt_down(a):
    if a <= 0.0:
        return 0.0
    s = math.sqrt(a)
    if math.isinf(a):
        return s
    if a < _EFT_SMALL or a > _EFT_LARGE:
        return max(next_down(s), 0.0)
    p = s * s
    r = (a - p) - _two_prod_err(s, s, p)
    return max(next_down(s), 0.0) if r < 0 else s


@jit
def sqrt_up(a):
    if a <= 0.0:
        return 0.0
    s = math.sqrt(a)
    if math.isinf(a):
        return s
    if a < _EFT_SMALL or a > _EFT_LARGE:
        return next_up(s)
    p = s * s
    r = (a - p) - _two_prod_err(s, s, p)
    return next_up(s) if r > 0 else s


@jit
def exp_down(x):
    if x == 0.0:
        return 1.0
    if x == -INF:
        return 0.0
    v = math.exp(x)
    if math.isinf(v):
        return INF if math.isinf(x) else MAXF
    if v == 0.0:
        return 0.0
    return max(next_down(v), 0.0)


@jit
def exp_up(x):
    if x == 0.0:
        return 1.0
    if x == INF:
        return INF
    v = math.exp(x)
    if math.isinf(v):
        return INF
    return next_up(v)


@jit
def log_down(x):
    if x <= 0.0:
        return -INF
    if x == 1.0:
        return 0.0
    if math.isinf(x):
        return INF
    return next_down(math.log(x))


@jit
def log_up(x):
    if x <= 0.0:
        return -INF
    if x == 1.0:
        return 0.0
    if math.isinf(x):
        return INF
    return next_up(math.log(x))


# ---------------------------------------------------------------------------
# interval operations on (lo, hi) pairs


@jit
def is_empty(lo, hi):
    return lo != lo or hi != hi


@jit
def iv_add(al, ah, bl, bh):
    if is_empty(al, ah) or is_empty(bl, bh):
        return np.nan, np.nan
    return add_down(al, bl), add_up(ah, bh)


@jit
def iv_sub(al, ah, bl, bh):
    if is_empty(al, ah) or is_empty(bl, bh):
        return np.nan, np.nan
    return sub_down(al, bh), sub_up(ah, bl)


@jit
def iv_neg(al, ah):
    return -ah, -al


@jit
def mul_pair(a, b):
    """``a * b`` rounded down and up, sharing one error-free product."""
    if a == 0.0 or b == 0.0:
        return 0.0, 0.0
    p = a * b
    if math.isinf(a) or math.isinf(b):
        return p, p
    if math.isinf(p):
        return (MAXF, p) if p > 0 else (p, -MAXF)
    if _eft_unsafe(a, b, p):
        return next_down(p), next_up(p)
    e = _two_prod_err(a, b, p)
    if e < 0:
        return next_down(p), p
    if e > 0:
        return p, next_up(p)
    return p, p


@jit
def iv_mul(al, ah, bl, bh):
    if is_empty(al, ah) or is_empty(bl, bh):
        return np.nan, np.nan
    if al >= 0.0 and bl >= 0.0:
        return mul_down(al, bl), mul_up(ah, bh)
    if ah <= 0.0 and bh <= 0.0:
        return mul_down(ah, bh), mul_up(al, bl)
    if al >= 0.0 and bh <= 0.0:
        return mul_down(ah, bl), mul_up(al, bh)
    if ah <= 0.0 and bl >= 0.0:
        return mul_down(al, bh), mul_up(ah, bl)
    l1, h1 = mul_pair(al, bl)
    l2, h2 = mul_pair(al, bh)
    l3, h3 = mul_pair(ah, bl)
    l4, h4 = mul_pair(ah, bh)
    return min(min(l1, l2), min(l3, l4)), max(max(h1, h2), max(h3, h4))


@jit
def iv_scale(c, al, ah):
    """Exact-constant times interval."""
    return iv_mul(c, c, al, ah)


@jit
def iv_sqr(al, ah):
    if is_empty(al, ah):
        return np.nan, np.nan
    if al >= 0.0:
        return mul_down(al, al), mul_up(ah, ah)
    if ah <= 0.0:
        return mul_down(ah, ah), mul_up(al, al)
    return 0.0, max(mul_up(al, al), mul_up(ah, ah))


@jit
def _pow_down(x, n):
    # x >= 0, n >= 1
    r = x
    for _ in range(n - 1):
        r = mul_down(r, x)
    return r


@jit
def _pow_up(x, n):
    r = x
    for _ in range(n - 1):
        r = mul_up(r, x)
    return r


@jit
def iv_pown(al, ah, n):
    if is_empty(al, ah):
        return np.nan, np.nan
    if n == 0:
        return 1.0, 1.0
    if n == 1:
        return al, ah
    if n % 2 == 0:
        if al >= 0.0:
            return _pow_down(al, n), _pow_up(ah, n)
        if ah <= 0.0:
            return _pow_down(-ah, n), _pow_up(-al, n)
        return 0.0, max(_pow_up(-al, n), _pow_up(ah, n))
    lo = _pow_down(al, n) if al >= 0.0 else -_pow_up(-al, n)
    hi = _pow_up(ah, n) if ah >= 0.0 else -_pow_down(-ah, n)
    return lo, hi


@jit
def iv_div(al, ah, bl, bh):
    """Extended division. Division by an interval touching 0 yields infinite endpoints;
    0/0 returns the whole line."""
    if is_empty(al, ah) or is_empty(bl, bh):
        return np.nan, np.nan
    if bl > 0.0 or bh < 0.0:
        if al == 0.0 and ah == 0.0:
            return 0.0, 0.0
        lo = min(min(div_down(al, bl), div_down(al, bh)), min(div_down(ah, bl), div_down(ah, bh)))
        hi = max(max(div_up(al, bl), div_up(al, bh)), max(div_up(ah, bl), div_up(ah, bh)))
        return lo, hi
    if bl == 0.0 and bh == 0.0:
        if al > 0.0:
            return INF, INF
        if ah < 0.0:
            return -INF, -INF
        return -INF, INF
    if al > 0.0:
        if bl == 0.0:
            return div_down(al, bh), INF
        if bh == 0.0:
            return -INF, div_up(al, bl)
        return -INF, INF
    if ah < 0.0:
        if bl == 0.0:
            return -INF, div_up(ah, bh)
        if bh == 0.0:
            return div_down(ah, bl), INF
        return -INF, INF
    return -INF, INF


@jit
def iv_abs(al, ah):
    if is_empty(al, ah):
        return np.nan, np.nan
    if al >= 0.0:
        return al, ah
    if ah <= 0.0:
        return -ah, -al
    return 0.0, max(-al, ah)


@jit
def iv_min(al, ah, bl, bh):
    if is_empty(al, ah) or is_empty(bl, bh):
        return np.nan, np.nan
    return min(al, bl), min(ah, bh)


@jit
def iv_max(al, ah, bl, bh):
    if is_empty(al, ah) or is_empty(bl, bh):
        return np.nan, np.nan
    return max(al, bl), max(ah, bh)


@jit
def iv_sqrt(al, ah):
    if is_empty(al, ah) or ah < 0.0:
        return np.nan, np.nan
    return sqrt_down(max(al, 0.0)), sqrt_up(ah)


@jit
def iv_exp(al, ah):
    if is_empty(al, ah):
        return np.nan, np.nan
    return exp_down(al), exp_up(ah)


@jit
def iv_log(al, ah):
    if is_empty(al, ah) or ah < 0.0:
        return np.nan, np.nan
    return log_down(al), log_up(ah)


@jit
def iv_clamp_nonneg(al, ah):
    if is_empty(al, ah):
        return np.nan, np.nan
    return max(al, 0.0), max(ah, 0.0)


@jit
def iv_clamp_unit(al, ah):
    # projection onto [0, 1], used for cos(theta)
    if is_empty(al, ah):
        return np.nan, np.nan
    return min(max(al, 0.0), 1.0), min(max(ah, 0.0), 1.0)


@jit
def iv_hull(al, ah, bl, bh):
    if is_empty(al, ah):
        return bl, bh
    if is_empty(bl, bh):
        return al, ah
    return min(al, bl), max(ah, bh)


@jit
def box_dist_sq(blo, bhi, x):
    """Enclosure of ||z - x||^2 over the box."""
    lo = 0.0
    hi = 0.0
    for i in range(blo.shape[0]):
        dl, dh = iv_sub(blo[i], bhi[i], x[i], x[i])
        sl, sh = iv_sqr(dl, dh)
        lo = add_down(lo, sl)
        hi = add_up(hi, sh)
    return lo, hi


@jit
def box_norm(blo, bhi, x):
    """Enclosure of ||z - x|| over the box."""
    lo, hi = box_dist_sq(blo, bhi, x)
    return sqrt_down(lo), sqrt_up(hi)


@jit
def box_width(blo, bhi):
    w = 0.0
    for i in range(blo.shape[0]):
        w = max(w, bhi[i] - blo[i])
    return w
