"""Compiled MINIMIZE / SOLVE loops specialised per geometric query.

The generic, callable-driven versions live in :mod:`ivwost.globalopt`; these
kernels run the same loops with the inclusion functions of each query inlined so
that a walk can issue hundreds of thousands of queries.

Query parameters travel in a flat array ``P``:

====  =====================================================
0:3   query point x (padded with zeros in 2D)
3:6   ray direction v
6     index of the boundary field in the program
7     index of the Robin coefficient field
8     ball radius cap R
9     spatial dimension d
====  =====================================================
"""

import math

import numpy as np

from .iv import (
    INF,
    box_dist_sq,
    box_norm,
    box_width,
    iv_abs,
    iv_add,
    iv_clamp_nonneg,
    iv_clamp_unit,
    iv_div,
    iv_exp,
    iv_mul,
    iv_sqr,
    iv_sqrt,
    iv_sub,
    jit,
)
from .tape import eval_dual, eval_interval, eval_point, eval_point_grad, project_to_surface

K_CPQ = 0
K_RAY = 1
K_CSPQ = 2
K_RRBQ2 = 3
K_RRBQ3 = 4
K_GAMMA = 5
K_CERT = 6

NEG = -1
UNK = 0
POS = 1

ST_EXHAUSTED = 0
ST_GAP = 1
ST_BUDGET = 2

GAP_SQRT = 1
GAP_RELATIVE = 2

EV_KEPT = 0
EV_PRUNE_CON = 1
EV_PRUNE_BOUND = 2
EV_ACCEPT = 3
EV_PRUNE_POP = 4

# stats slots
S_EXPLORED = 0
S_PRUNED_CON = 1
S_PRUNED_BOUND = 2
S_ACCEPTED = 3
S_POPS = 4

# point refinement schedules for minimize
REFINE_OFF = 0
REFINE_ALL = 1
REFINE_SPARSE = 2

PROJ_ITERS = 20
PROJ_FTOL = 1e-13


@jit
def make_params(x, v, field, mu_field, radius):
    P = np.zeros(10)
    d = x.shape[0]
    for i in range(d):
        P[i] = x[i]
    for i in range(v.shape[0]):
        P[3 + i] = v[i]
    P[6] = field
    P[7] = mu_field
    P[8] = radius
    P[9] = d
    return P


@jit
def _eq(lo, hi):
    if lo != lo or hi != hi:
        return NEG
    if lo > 0.0 or hi < 0.0:
        return NEG
    if lo == 0.0 and hi == 0.0:
        return POS
    return UNK


@jit
def _ball(nl, nh, R):
    if nl > R:
        return NEG
    if nh <= R:
        return POS
    return UNK


@jit
def _conj(a, b):
    if a == NEG or b == NEG:
        return NEG
    if a == POS and b == POS:
        return POS
    return UNK


@jit
def _psi(glo, ghi, blo, bhi, x, d):
    # enclosure of grad f(z) . (z - x)
    sl = 0.0
    sh = 0.0
    for i in range(d):
        dl, dh = iv_sub(blo[i], bhi[i], x[i], x[i])
        pl, ph = iv_mul(glo[i], ghi[i], dl, dh)
        sl, sh = iv_add(sl, sh, pl, ph)
    return sl, sh


@jit
def _cos_theta(glo, ghi, blo, bhi, x, d, rl, rh):
    """Enclosure of |grad f . (z - x)| / (||grad f|| r), clamped to [0, 1]."""
    sl, sh = _psi(glo, ghi, blo, bhi, x, d)
    al, ah = iv_abs(sl, sh)
    nl = 0.0
    nh = 0.0
    for i in range(d):
        ql, qh = iv_sqr(glo[i], ghi[i])
        nl, nh = iv_add(nl, nh, ql, qh)
    gl, gh = iv_sqrt(nl, nh)
    dl, dh = iv_mul(gl, gh, rl, rh)
    cl, ch = iv_div(al, ah, dl, dh)
    return iv_clamp_unit(cl, ch)


@jit
def rrbq_objective_interval(dim3, cl, ch, ml, mh, rl, rh):
    """Robin radius objective over a box from enclosures of cos(theta), mu and r."""
    dl, dh = iv_mul(ml, mh, rl, rh)
    ql, qh = iv_div(cl, ch, dl, dh)
    if not dim3:
        el, eh = iv_exp(ql, qh)
        return iv_mul(rl, rh, el, eh)
    sl, sh = iv_sub(1.0, 1.0, ql, qh)
    sl, sh = iv_clamp_nonneg(sl, sh)
    return iv_div(rl, rh, sl, sh)


@jit
def evaluate(kind, prog, P, blo, bhi):
    """Constraint verdict and objective enclosure ``(con, a, b)`` for one box."""
    d = int(P[9])
    k = int(P[6])
    x = P[0:d]
    if kind == K_RAY:
        zl = np.empty(d)
        zh = np.empty(d)
        for i in range(d):
            ml, mh = iv_mul(blo[0], bhi[0], P[3 + i], P[3 + i])
            zl[i], zh[i] = iv_add(x[i], x[i], ml, mh)
        fl, fh = eval_interval(prog, k, zl, zh)
        return _eq(fl, fh), blo[0], bhi[0]
    if kind == K_CPQ:
        fl, fh = eval_interval(prog, k, blo, bhi)
        con = _eq(fl, fh)
        if con == NEG:
            return con, 0.0, 0.0
        a, b = box_dist_sq(blo, bhi, x)
        return con, a, b
    glo = np.empty(d)
    ghi = np.empty(d)
    fl, fh = eval_dual(prog, k, blo, bhi, glo, ghi)
    con = _eq(fl, fh)
    if con == NEG:
        return con, 0.0, 0.0
    rl, rh = box_norm(blo, bhi, x)
    con = _conj(con, _ball(rl, rh, P[8]))
    if con == NEG or kind == K_GAMMA:
        return con, 0.0, 0.0
    if kind == K_CSPQ or kind == K_CERT:
        sl, sh = _psi(glo, ghi, blo, bhi, x, d)
        con = _conj(con, _eq(sl, sh))
        if con == NEG or kind == K_CERT:
            return con, 0.0, 0.0
        a, b = box_dist_sq(blo, bhi, x)
        return con, a, b
    cl, ch = _cos_theta(glo, ghi, blo, bhi, x, d, rl, rh)
    ml, mh = eval_interval(prog, int(P[7]), blo, bhi)
    a, b = rrbq_objective_interval(kind == K_RRBQ3, cl, ch, ml, mh, rl, rh)
    return con, a, b


@jit
def rrbq_objective_point(prog, P, z, dim3):
    """Robin radius objective at a surface point (+inf where the 3D side condition fails)."""
    d = int(P[9])
    g = np.empty(d)
    eval_point_grad(prog, int(P[6]), z, g)
    dot = 0.0
    gn = 0.0
    r2 = 0.0
    for i in range(d):
        dz = z[i] - P[i]
        dot += g[i] * dz
        gn += g[i] * g[i]
        r2 += dz * dz
    r = math.sqrt(r2)
    if r == 0.0 or gn == 0.0:
        return INF
    c = min(abs(dot) / (math.sqrt(gn) * r), 1.0)
    mu = eval_point(prog, int(P[7]), z)
    q = c / (mu * r)
    if not dim3:
        return r * math.exp(q)
    if q >= 1.0:
        return INF
    return r / (1.0 - q)


@jit
def _point_objective(kind, prog, P, blo, bhi):
    """Feasible point near the box and its objective; returns (ok, value, point).

    For rays a sign change of the field across the parameter interval proves a
    root inside it, so its right end bounds the first hit.
    """
    d = int(P[9])
    if kind == K_RAY:
        za = np.empty(d)
        zb = np.empty(d)
        for i in range(d):
            za[i] = P[i] + blo[0] * P[3 + i]
            zb[i] = P[i] + bhi[0] * P[3 + i]
        fa = eval_point(prog, int(P[6]), za)
        fb = eval_point(prog, int(P[6]), zb)
        return (fa < 0.0 < fb) or (fb < 0.0 < fa), bhi[0], zb
    mid = 0.5 * (blo + bhi)
    z, fz, ok = project_to_surface(prog, int(P[6]), mid, PROJ_ITERS, PROJ_FTOL)
    if not ok:
        return False, INF, z
    r2 = 0.0
    for i in range(d):
        r2 += (z[i] - P[i]) ** 2
    if kind == K_CPQ:
        return True, r2, z
    if kind == K_CSPQ:
        z, ok = project_silhouette(prog, P, z)
        if not ok:
            return False, INF, z
        r2 = 0.0
        for i in range(d):
            r2 += (z[i] - P[i]) ** 2
        if math.sqrt(r2) > P[8]:
            return False, INF, z
        return True, r2, z
    if math.sqrt(r2) > P[8]:
        return False, INF, z
    return True, rrbq_objective_point(prog, P, z, kind == K_RRBQ3), z


@jit
def _silhouette_residual(prog, k, z, x, d, g):
    f = eval_point_grad(prog, k, z, g)
    psi = 0.0
    for i in range(d):
        psi += g[i] * (z[i] - x[i])
    return f, psi


@jit
def project_silhouette(prog, P, z0):
    """Minimum-norm Newton iteration onto ``f = 0`` and ``grad f . (z - x) = 0``.

    The Hessian-vector product needed by the second row is taken by central
    differences of the gradient. Returns ``(z, ok)``.
    """
    d = int(P[9])
    k = int(P[6])
    x = P[0:d]
    z = z0.copy()
    g = np.empty(d)
    gp = np.empty(d)
    gm = np.empty(d)
    for _ in range(40):
        f, psi = _silhouette_residual(prog, k, z, x, d, g)
        gn = 0.0
        for i in range(d):
            gn += g[i] * g[i]
        gn = math.sqrt(gn)
        rz = 0.0
        for i in range(d):
            rz += (z[i] - x[i]) ** 2
        rz = math.sqrt(rz)
        if gn == 0.0 or rz == 0.0 or not math.isfinite(f):
            return z, False
        if abs(f) <= PROJ_FTOL * gn * max(rz, 1.0) and abs(psi) <= 1e-12 * gn * rz:
            return z, True
        h = 1e-6 * max(rz, 1e-3)
        u = (z - x) / rz
        eval_point_grad(prog, k, z + h * u, gp)
        eval_point_grad(prog, k, z - h * u, gm)
        # J rows: grad f and grad psi = H (z - x) + grad f
        j2 = np.empty(d)
        for i in range(d):
            j2[i] = (gp[i] - gm[i]) / (2.0 * h) * rz + g[i]
        a11 = 0.0
        a12 = 0.0
        a22 = 0.0
        for i in range(d):
            a11 += g[i] * g[i]
            a12 += g[i] * j2[i]
            a22 += j2[i] * j2[i]
        det = a11 * a22 - a12 * a12
        if not abs(det) > 1e-300 or abs(det) <= 1e-14 * a11 * a22:
            return z, False
        l1 = (a22 * f - a12 * psi) / det
        l2 = (a11 * psi - a12 * f) / det
        step = 0.0
        for i in range(d):
            dz = l1 * g[i] + l2 * j2[i]
            z[i] -= dz
            step += dz * dz
        if not math.isfinite(step):
            return z, False
    f, psi = _silhouette_residual(prog, k, z, x, d, g)
    return z, False


# ---------------------------------------------------------------------------
# storage helpers


@jit
def _grow2(a, n):
    out = np.empty((max(2 * a.shape[0], n), a.shape[1]))
    out[: a.shape[0]] = a
    return out


@jit
def _grow1(a, n):
    out = np.empty(max(2 * a.shape[0], n), a.dtype)
    out[: a.shape[0]] = a
    return out


@jit
def _trace_add(tr, nt, ev, blo, bhi, a, b):
    if nt >= tr.shape[0]:
        tr = _grow2(tr, nt + 1)
    tr[nt, 0] = ev
    tr[nt, 1] = a
    tr[nt, 2] = b
    for i in range(3):
        tr[nt, 3 + i] = blo[i] if i < blo.shape[0] else 0.0
        tr[nt, 6 + i] = bhi[i] if i < bhi.shape[0] else 0.0
    return tr, nt + 1


@jit
def split_axis(blo, bhi):
    ax = 0
    w = bhi[0] - blo[0]
    for i in range(1, blo.shape[0]):
        wi = bhi[i] - blo[i]
        if wi > w:
            w = wi
            ax = i
    return ax


@jit
def _heap_less(hk, hc, i, j):
    return hk[i] < hk[j] or (hk[i] == hk[j] and hc[i] < hc[j])


@jit
def _heap_swap(hk, hc, hb, i, j):
    hk[i], hk[j] = hk[j], hk[i]
    hc[i], hc[j] = hc[j], hc[i]
    hb[i], hb[j] = hb[j], hb[i]


@jit
def _heap_push(hk, hc, hb, n, key, cnt, box):
    hk[n] = key
    hc[n] = cnt
    hb[n] = box
    i = n
    while i > 0:
        p = (i - 1) // 2
        if _heap_less(hk, hc, i, p):
            _heap_swap(hk, hc, hb, i, p)
            i = p
        else:
            break


@jit
def _heap_pop(hk, hc, hb, n):
    # removes the root; caller has already read it; n is the size before removal
    n -= 1
    if n > 0:
        hk[0] = hk[n]
        hc[0] = hc[n]
        hb[0] = hb[n]
        i = 0
        while True:
            l = 2 * i + 1
            r = l + 1
            m = i
            if l < n and _heap_less(hk, hc, l, m):
                m = l
            if r < n and _heap_less(hk, hc, r, m):
                m = r
            if m == i:
                break
            _heap_swap(hk, hc, hb, i, m)
            i = m
    return n


@jit
def _gap_closed(lower, ub, gap, mode):
    if not (ub < INF):
        return False
    if mode & GAP_SQRT:
        lo = math.sqrt(max(lower, 0.0))
        hi = math.sqrt(max(ub, 0.0))
    else:
        lo = lower
        hi = ub
    if mode & GAP_RELATIVE:
        return hi - lo <= gap * abs(hi)
    return hi - lo <= gap


@jit
def _sparse_pop(n):
    """Pops 1..8, then every power of two."""
    return n <= 8 or (n & (n - 1)) == 0


@jit
def minimize(kind, prog, P, xlo, xhi, tol, gap, gap_mode, budget, refine, prune_bound, want_trace, ub0):
    """Best-first branch and bound.

    ``refine`` selects the pops at which a feasible point near the popped box
    is sought to lower the incumbent (``REFINE_OFF``, ``REFINE_ALL`` or
    ``REFINE_SPARSE``). ``ub0`` is a known cap on the quantity of interest
    (``inf`` for none): callers that only need ``min(optimum, ub0)`` can prune
    against it from the start. Returns ``(status, lower, ub, stats, acc_lo, acc_hi, acc_a, n_acc, best, inc, has_inc, trace, n_trace)``.
    ``best`` indexes the accepted box with the smallest lower bound (-1 if none).
    """
    dim = xlo.shape[0]
    d = int(P[9])
    cap = 256
    BL = np.empty((cap, dim))
    BH = np.empty((cap, dim))
    free = np.empty(cap, np.int64)
    nfree = 0
    used = 0
    hk = np.empty(cap)
    hc = np.empty(cap, np.int64)
    hb = np.empty(cap, np.int64)
    nh = 0
    AL = np.empty((16, dim))
    AH = np.empty((16, dim))
    AA = np.empty(16)
    nacc = 0
    tr = np.empty((16 if want_trace else 1, 9))
    nt = 0
    stats = np.zeros(5, np.int64)
    inc = np.zeros(d)
    has_inc = False
    ub = ub0
    acc_min = INF
    best = -1
    counter = 0
    status = ST_EXHAUSTED
    lower_at_stop = INF

    BL[0] = xlo
    BH[0] = xhi
    used = 1
    _heap_push(hk, hc, hb, 0, -INF, counter, 0)
    counter += 1
    nh = 1
    clo = np.empty(dim)
    chi = np.empty(dim)
    while nh > 0:
        a = hk[0]
        bi = hb[0]
        nh = _heap_pop(hk, hc, hb, nh)
        blo = BL[bi].copy()
        bhi = BH[bi].copy()
        if nfree >= free.shape[0]:
            free = _grow1(free, nfree + 1)
        free[nfree] = bi
        nfree += 1
        stats[S_POPS] += 1
        if prune_bound and a > ub:
            stats[S_PRUNED_BOUND] += 1
            if want_trace:
                tr, nt = _trace_add(tr, nt, EV_PRUNE_POP, blo, bhi, a, INF)
            continue
        if refine == REFINE_ALL or (refine == REFINE_SPARSE and _sparse_pop(stats[S_POPS])):
            ok, val, z = _point_objective(kind, prog, P, blo, bhi)
            if ok and val < ub:
                ub = val
                inc[:] = z
                has_inc = True
        if gap > 0.0 and _gap_closed(min(a, acc_min), ub, gap, gap_mode):
            status = ST_GAP
            lower_at_stop = min(a, acc_min)
            if nacc >= AL.shape[0]:
                AL = _grow2(AL, nacc + 1)
                AH = _grow2(AH, nacc + 1)
                AA = _grow1(AA, nacc + 1)
            AL[nacc] = blo
            AH[nacc] = bhi
            AA[nacc] = a
            if a < acc_min or best < 0:
                best = nacc
            nacc += 1
            break
        if box_width(blo, bhi) <= tol:
            if nacc >= AL.shape[0]:
                AL = _grow2(AL, nacc + 1)
                AH = _grow2(AH, nacc + 1)
                AA = _grow1(AA, nacc + 1)
            AL[nacc] = blo
            AH[nacc] = bhi
            AA[nacc] = a
            if a < acc_min:
                acc_min = a
                best = nacc
            nacc += 1
            stats[S_ACCEPTED] += 1
            if want_trace:
                tr, nt = _trace_add(tr, nt, EV_ACCEPT, blo, bhi, a, ub)
            continue
        ax = split_axis(blo, bhi)
        m = 0.5 * (blo[ax] + bhi[ax])
        for side in range(2):
            clo[:] = blo
            chi[:] = bhi
            if side == 0:
                chi[ax] = m
            else:
                clo[ax] = m
            con, ai, bi2 = evaluate(kind, prog, P, clo, chi)
            stats[S_EXPLORED] += 1
            if con == NEG:
                stats[S_PRUNED_CON] += 1
                if want_trace:
                    tr, nt = _trace_add(tr, nt, EV_PRUNE_CON, clo, chi, ai, bi2)
                continue
            if ai == INF or (prune_bound and ai > ub):
                stats[S_PRUNED_BOUND] += 1
                if want_trace:
                    tr, nt = _trace_add(tr, nt, EV_PRUNE_BOUND, clo, chi, ai, bi2)
                continue
            if want_trace:
                tr, nt = _trace_add(tr, nt, EV_KEPT, clo, chi, ai, bi2)
            if nfree > 0:
                nfree -= 1
                slot = free[nfree]
            else:
                if used >= BL.shape[0]:
                    BL = _grow2(BL, used + 1)
                    BH = _grow2(BH, used + 1)
                slot = used
                used += 1
            BL[slot] = clo
            BH[slot] = chi
            if nh >= hk.shape[0]:
                hk = _grow1(hk, nh + 1)
                hc = _grow1(hc, nh + 1)
                hb = _grow1(hb, nh + 1)
            _heap_push(hk, hc, hb, nh, ai, counter, slot)
            counter += 1
            nh += 1
            # only boxes proven feasible throughout may lower the incumbent bound
            if con == POS and bi2 < ub:
                ub = bi2
        if stats[S_EXPLORED] >= budget:
            status = ST_BUDGET
            lower_at_stop = acc_min
            for j in range(nh):
                lower_at_stop = min(lower_at_stop, hk[j])
            break
    if status == ST_EXHAUSTED:
        lower_at_stop = acc_min
    return (status, lower_at_stop, ub, stats, AL[:nacc].copy(), AH[:nacc].copy(), AA[:nacc].copy(),
            nacc, best, inc, has_inc, tr[:nt].copy(), nt)


@jit
def solve(kind, prog, P, xlo, xhi, tol, budget, first_only, want_trace):
    """Depth-first constraint satisfaction.

    A box is accepted once it is fine and not provably violating; unknown boxes
    that are still coarse are bisected. Returns ``(status, stats, acc_lo, acc_hi,
    n_acc, trace, n_trace)``.
    """
    dim = xlo.shape[0]
    SL = np.empty((64, dim))
    SH = np.empty((64, dim))
    ns = 0
    AL = np.empty((16, dim))
    AH = np.empty((16, dim))
    nacc = 0
    tr = np.empty((16 if want_trace else 1, 9))
    nt = 0
    stats = np.zeros(5, np.int64)
    status = ST_EXHAUSTED
    SL[0] = xlo
    SH[0] = xhi
    ns = 1
    while ns > 0:
        ns -= 1
        blo = SL[ns].copy()
        bhi = SH[ns].copy()
        stats[S_POPS] += 1
        con, _a, _b = evaluate(kind, prog, P, blo, bhi)
        stats[S_EXPLORED] += 1
        if con == NEG:
            stats[S_PRUNED_CON] += 1
            if want_trace:
                tr, nt = _trace_add(tr, nt, EV_PRUNE_CON, blo, bhi, 0.0, 0.0)
            continue
        if box_width(blo, bhi) <= tol:
            if nacc >= AL.shape[0]:
                AL = _grow2(AL, nacc + 1)
                AH = _grow2(AH, nacc + 1)
            AL[nacc] = blo
            AH[nacc] = bhi
            nacc += 1
            stats[S_ACCEPTED] += 1
            if want_trace:
                tr, nt = _trace_add(tr, nt, EV_ACCEPT, blo, bhi, 0.0, 0.0)
            if first_only:
                break
            continue
        if want_trace:
            tr, nt = _trace_add(tr, nt, EV_KEPT, blo, bhi, 0.0, 0.0)
        if stats[S_EXPLORED] >= budget:
            status = ST_BUDGET
            break
        ax = split_axis(blo, bhi)
        m = 0.5 * (blo[ax] + bhi[ax])
        if ns + 2 > SL.shape[0]:
            SL = _grow2(SL, ns + 2)
            SH = _grow2(SH, ns + 2)
        # upper child pushed first so the lower child is processed first
        SL[ns] = blo
        SH[ns] = bhi
        SL[ns, ax] = m
        SL[ns + 1] = blo
        SH[ns + 1] = bhi
        SH[ns + 1, ax] = m
        ns += 2
    return status, stats, AL[:nacc].copy(), AH[:nacc].copy(), nacc, tr[:nt].copy(), nt
