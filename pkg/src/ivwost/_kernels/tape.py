"""Compiled evaluation of expression tapes.

A program is the tuple ``(ops, ia, ib, cst, fstart, fend)``. Field ``k`` occupies
instructions ``fstart[k]:fend[k]`` and its value is the last instruction. Operand
indices in ``ia``/``ib`` are absolute. ``fstart[k] < 0`` marks an absent field.
"""

import math

import numpy as np

from .iv import (
    INF,
    iv_abs,
    iv_add,
    iv_div,
    iv_exp,
    iv_hull,
    iv_log,
    iv_max,
    iv_min,
    iv_mul,
    iv_neg,
    iv_pown,
    iv_scale,
    iv_sqr,
    iv_sqrt,
    iv_sub,
    jit,
)

CONST = 0
VAR = 1
ADD = 2
SUB = 3
MUL = 4
DIV = 5
NEG = 6
SQR = 7
SQRT = 8
EXP = 9
LOG = 10
ABS = 11
MIN = 12
MAX = 13
POWN = 14

OP_NAMES = {
    CONST: "const", VAR: "var", ADD: "add", SUB: "sub", MUL: "mul", DIV: "div",
    NEG: "neg", SQR: "sqr", SQRT: "sqrt", EXP: "exp", LOG: "log", ABS: "abs",
    MIN: "min", MAX: "max", POWN: "pown",
}


@jit
def has_field(prog, k):
    return prog[4][k] >= 0


@jit
def eval_point(prog, k, p):
    ops, ia, ib, cst, fstart, fend = prog
    s = fstart[k]
    e = fend[k]
    v = np.empty(e - s)
    for j in range(s, e):
        i = j - s
        op = ops[j]
        if op == CONST:
            v[i] = cst[j]
        elif op == VAR:
            v[i] = p[ia[j]]
        else:
            a = v[ia[j] - s]
            if op == ADD:
                v[i] = a + v[ib[j] - s]
            elif op == SUB:
                v[i] = a - v[ib[j] - s]
            elif op == MUL:
                v[i] = a * v[ib[j] - s]
            elif op == DIV:
                b = v[ib[j] - s]
                if b == 0.0:
                    v[i] = INF if a > 0 else (-INF if a < 0 else np.nan)
                else:
                    v[i] = a / b
            elif op == NEG:
                v[i] = -a
            elif op == SQR:
                v[i] = a * a
            elif op == SQRT:
                v[i] = math.sqrt(a) if a >= 0.0 else np.nan
            elif op == EXP:
                v[i] = math.exp(a) if a < 709.0 else INF
            elif op == LOG:
                v[i] = math.log(a) if a > 0.0 else (-INF if a == 0.0 else np.nan)
            elif op == ABS:
                v[i] = abs(a)
            elif op == MIN:
                v[i] = min(a, v[ib[j] - s])
            elif op == MAX:
                v[i] = max(a, v[ib[j] - s])
            elif op == POWN:
                v[i] = a ** int(cst[j])
    return v[e - s - 1]


@jit
def eval_point_grad(prog, k, p, grad):
    """Value at ``p``; the gradient is written into ``grad`` (forward mode)."""
    ops, ia, ib, cst, fstart, fend = prog
    s = fstart[k]
    e = fend[k]
    d = p.shape[0]
    n = e - s
    v = np.empty(n)
    g = np.zeros((n, d))
    for j in range(s, e):
        i = j - s
        op = ops[j]
        if op == CONST:
            v[i] = cst[j]
            continue
        if op == VAR:
            v[i] = p[ia[j]]
            g[i, ia[j]] = 1.0
            continue
        ai = ia[j] - s
        a = v[ai]
        if op == ADD or op == SUB or op == MUL or op == DIV or op == MIN or op == MAX:
            bi = ib[j] - s
            b = v[bi]
            if op == ADD:
                v[i] = a + b
                for t in range(d):
                    g[i, t] = g[ai, t] + g[bi, t]
            elif op == SUB:
                v[i] = a - b
                for t in range(d):
                    g[i, t] = g[ai, t] - g[bi, t]
            elif op == MUL:
                v[i] = a * b
                for t in range(d):
                    g[i, t] = g[ai, t] * b + a * g[bi, t]
            elif op == DIV:
                q = a / b
                v[i] = q
                for t in range(d):
                    g[i, t] = (g[ai, t] - q * g[bi, t]) / b
            elif op == MIN:
                src = ai if a <= b else bi
                v[i] = v[src]
                for t in range(d):
                    g[i, t] = g[src, t]
            else:
                src = ai if a >= b else bi
                v[i] = v[src]
                for t in range(d):
                    g[i, t] = g[src, t]
            continue
        if op == NEG:
            v[i] = -a
            f = -1.0
        elif op == SQR:
            v[i] = a * a
            f = 2.0 * a
        elif op == SQRT:
            r = math.sqrt(a) if a >= 0.0 else np.nan
            v[i] = r
            f = 0.5 / r if r > 0.0 else INF
        elif op == EXP:
            r = math.exp(a) if a < 709.0 else INF
            v[i] = r
            f = r
        elif op == LOG:
            v[i] = math.log(a) if a > 0.0 else -INF
            f = 1.0 / a
        elif op == ABS:
            v[i] = abs(a)
            f = 1.0 if a > 0.0 else (-1.0 if a < 0.0 else 0.0)
        else:
            m = int(cst[j])
            v[i] = a ** m
            f = m * a ** (m - 1) if m > 0 else 0.0
        for t in range(d):
            g[i, t] = f * g[ai, t]
    for t in range(d):
        grad[t] = g[n - 1, t]
    return v[n - 1]


@jit
def eval_interval(prog, k, blo, bhi):
    ops, ia, ib, cst, fstart, fend = prog
    s = fstart[k]
    e = fend[k]
    lo = np.empty(e - s)
    hi = np.empty(e - s)
    for j in range(s, e):
        i = j - s
        op = ops[j]
        if op == CONST:
            lo[i] = cst[j]
            hi[i] = cst[j]
            continue
        if op == VAR:
            lo[i] = blo[ia[j]]
            hi[i] = bhi[ia[j]]
            continue
        ai = ia[j] - s
        al = lo[ai]
        ah = hi[ai]
        if op == NEG:
            rl, rh = iv_neg(al, ah)
        elif op == SQR:
            rl, rh = iv_sqr(al, ah)
        elif op == SQRT:
            rl, rh = iv_sqrt(al, ah)
        elif op == EXP:
            rl, rh = iv_exp(al, ah)
        elif op == LOG:
            rl, rh = iv_log(al, ah)
        elif op == ABS:
            rl, rh = iv_abs(al, ah)
        elif op == POWN:
            rl, rh = iv_pown(al, ah, int(cst[j]))
        else:
            bi = ib[j] - s
            bl = lo[bi]
            bh = hi[bi]
            if op == ADD:
                rl, rh = iv_add(al, ah, bl, bh)
            elif op == SUB:
                rl, rh = iv_sub(al, ah, bl, bh)
            elif op == MUL:
                rl, rh = iv_mul(al, ah, bl, bh)
            elif op == DIV:
                rl, rh = iv_div(al, ah, bl, bh)
            elif op == MIN:
                rl, rh = iv_min(al, ah, bl, bh)
            else:
                rl, rh = iv_max(al, ah, bl, bh)
        lo[i] = rl
        hi[i] = rh
    return lo[e - s - 1], hi[e - s - 1]


@jit
def eval_dual(prog, k, blo, bhi, glo, ghi):
    """Dual-interval evaluation over a box.

    Returns the value enclosure and writes the partial-derivative enclosures into
    ``glo``/``ghi``. At kinks of abs/min/max the partials take the hull of both
    one-sided derivatives.
    """
    ops, ia, ib, cst, fstart, fend = prog
    s = fstart[k]
    e = fend[k]
    d = blo.shape[0]
    n = e - s
    lo = np.empty(n)
    hi = np.empty(n)
    pl = np.zeros((n, d))
    ph = np.zeros((n, d))
    for j in range(s, e):
        i = j - s
        op = ops[j]
        if op == CONST:
            lo[i] = cst[j]
            hi[i] = cst[j]
            continue
        if op == VAR:
            lo[i] = blo[ia[j]]
            hi[i] = bhi[ia[j]]
            pl[i, ia[j]] = 1.0
            ph[i, ia[j]] = 1.0
            continue
        ai = ia[j] - s
        al = lo[ai]
        ah = hi[ai]
        if op == ADD or op == SUB or op == MUL or op == DIV or op == MIN or op == MAX:
            bi = ib[j] - s
            bl = lo[bi]
            bh = hi[bi]
            if op == ADD:
                rl, rh = iv_add(al, ah, bl, bh)
                for t in range(d):
                    pl[i, t], ph[i, t] = iv_add(pl[ai, t], ph[ai, t], pl[bi, t], ph[bi, t])
            elif op == SUB:
                rl, rh = iv_sub(al, ah, bl, bh)
                for t in range(d):
                    pl[i, t], ph[i, t] = iv_sub(pl[ai, t], ph[ai, t], pl[bi, t], ph[bi, t])
            elif op == MUL:
                rl, rh = iv_mul(al, ah, bl, bh)
                for t in range(d):
                    xl, xh = iv_mul(pl[ai, t], ph[ai, t], bl, bh)
                    yl, yh = iv_mul(al, ah, pl[bi, t], ph[bi, t])
                    pl[i, t], ph[i, t] = iv_add(xl, xh, yl, yh)
            elif op == DIV:
                rl, rh = iv_div(al, ah, bl, bh)
                for t in range(d):
                    xl, xh = iv_mul(rl, rh, pl[bi, t], ph[bi, t])
                    yl, yh = iv_sub(pl[ai, t], ph[ai, t], xl, xh)
                    pl[i, t], ph[i, t] = iv_div(yl, yh, bl, bh)
            else:
                if op == MIN:
                    rl, rh = iv_min(al, ah, bl, bh)
                    a_only = ah < bl
                    b_only = bh < al
                else:
                    rl, rh = iv_max(al, ah, bl, bh)
                    a_only = al > bh
                    b_only = bl > ah
                for t in range(d):
                    if a_only:
                        pl[i, t] = pl[ai, t]
                        ph[i, t] = ph[ai, t]
                    elif b_only:
                        pl[i, t] = pl[bi, t]
                        ph[i, t] = ph[bi, t]
                    else:
                        pl[i, t], ph[i, t] = iv_hull(pl[ai, t], ph[ai, t], pl[bi, t], ph[bi, t])
            lo[i] = rl
            hi[i] = rh
            continue
        # unary: value (rl, rh) and derivative factor (fl, fh)
        if op == NEG:
            rl, rh = iv_neg(al, ah)
            fl, fh = -1.0, -1.0
        elif op == SQR:
            rl, rh = iv_sqr(al, ah)
            fl, fh = iv_scale(2.0, al, ah)
        elif op == SQRT:
            rl, rh = iv_sqrt(al, ah)
            tl, th = iv_scale(2.0, rl, rh)
            fl, fh = iv_div(1.0, 1.0, tl, th)
        elif op == EXP:
            rl, rh = iv_exp(al, ah)
            fl, fh = rl, rh
        elif op == LOG:
            rl, rh = iv_log(al, ah)
            fl, fh = iv_div(1.0, 1.0, max(al, 0.0), ah)
        elif op == ABS:
            rl, rh = iv_abs(al, ah)
            if al > 0.0:
                fl, fh = 1.0, 1.0
            elif ah < 0.0:
                fl, fh = -1.0, -1.0
            else:
                fl, fh = -1.0, 1.0
        else:
            m = int(cst[j])
            rl, rh = iv_pown(al, ah, m)
            if m == 0:
                fl, fh = 0.0, 0.0
            else:
                ql, qh = iv_pown(al, ah, m - 1)
                fl, fh = iv_scale(float(m), ql, qh)
        lo[i] = rl
        hi[i] = rh
        for t in range(d):
            pl[i, t], ph[i, t] = iv_mul(fl, fh, pl[ai, t], ph[ai, t])
    for t in range(d):
        glo[t] = pl[n - 1, t]
        ghi[t] = ph[n - 1, t]
    return lo[n - 1], hi[n - 1]


@jit
def project_to_surface(prog, k, p0, max_iter, ftol):
    """Damped Newton projection along the gradient onto the zero set of field ``k``.

    Returns ``(point, |f(point)|, ok)``. Falls back to bisection along the gradient
    line when Newton stalls and a sign change has been bracketed.
    """
    d = p0.shape[0]
    p = p0.copy()
    g = np.empty(d)
    f = eval_point_grad(prog, k, p, g)
    best = p.copy()
    best_f = abs(f)
    for _ in range(max_iter):
        if abs(f) <= ftol:
            return p, abs(f), True
        gg = 0.0
        for t in range(d):
            gg += g[t] * g[t]
        if not gg > 0.0 or not math.isfinite(gg):
            break
        step = f / gg
        lam = 1.0
        moved = False
        for _h in range(30):
            q = p - lam * step * g
            fq = eval_point(prog, k, q)
            if abs(fq) < abs(f):
                moved = True
                break
            if fq * f < 0.0:
                # bracketed a root between p and q
                a = p.copy()
                b = q.copy()
                fa = f
                for _b in range(200):
                    m = 0.5 * (a + b)
                    fm = eval_point(prog, k, m)
                    if fm == 0.0 or abs(fm) <= ftol:
                        a = m
                        fa = fm
                        break
                    if fm * fa < 0.0:
                        b = m
                    else:
                        a = m
                        fa = fm
                f = eval_point_grad(prog, k, a, g)
                return a, abs(f), abs(f) <= ftol
            lam *= 0.5
        if not moved:
            break
        p = q
        f = eval_point_grad(prog, k, p, g)
        if abs(f) < best_f:
            best = p.copy()
            best_f = abs(f)
    if abs(f) < best_f:
        best = p
        best_f = abs(f)
    return best, best_f, best_f <= ftol
