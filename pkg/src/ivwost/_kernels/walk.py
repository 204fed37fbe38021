"""Compiled walk-on-stars estimator.

Program slots follow :mod:`ivwost.scene`: 0 Dirichlet field, 1 reflecting field,
2 Robin coefficient, 3 Dirichlet data, 4 Robin data.

Random numbers come from SplitMix64 streams seeded by hashing ``(seed, walk)``,
so a walk's value depends only on the seed and its index.

Walk settings travel in a flat array ``C``:

==  ==========================================================
0   epsilon shell
1   r_min
2   max steps
3   query acceptance width
4   relative gap for walk queries
5   box budget per query
6   reflecting side (+1: domain where the reflecting field > 0)
7   1 for Robin reflecting boundaries, 0 for Neumann
8   shrink factor for silhouette bounds
9   shrink rounds
==  ==========================================================
"""

import math

import numpy as np

from .engine import (
    GAP_RELATIVE,
    GAP_SQRT,
    K_CERT,
    K_CPQ,
    K_CSPQ,
    K_RAY,
    K_RRBQ2,
    K_RRBQ3,
    PROJ_FTOL,
    PROJ_ITERS,
    REFINE_ALL,
    REFINE_SPARSE,
    ST_BUDGET,
    make_params,
    minimize,
    solve,
)
from .iv import INF, jit
from .tape import eval_point, eval_point_grad, has_field, project_to_surface

F_D = 0
F_R = 1
MU = 2
G = 3
H = 4

C_EPS = 0
C_RMIN = 1
C_MAXSTEPS = 2
C_TOL = 3
C_GAP = 4
C_BUDGET = 5
C_SIDE = 6
C_ROBIN = 7
C_SHRINK = 8
C_ROUNDS = 9
N_CONFIG = 10

# per-walk counters
W_STEPS = 0
W_TRUNCATED = 1
W_REFLECTIONS = 2
W_CLIPPED = 3
W_NONCONVERGED = 4
N_COUNTERS = 5

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_EMPTY = np.zeros(0)


@jit
def _mix(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@jit
def stream_seed(seed, index):
    """Initial state of the stream for walk ``index``."""
    return _mix(_mix(np.uint64(seed) + _GOLDEN) ^ (np.uint64(index) * _GOLDEN))


@jit
def next_uniform(state):
    """Advance a SplitMix64 state; returns ``(state, u)`` with ``u`` uniform in [0, 1)."""
    # an int64 state mixed with uint64 constants would promote to float64
    state = np.uint64(state) + _GOLDEN
    z = _mix(state)
    return state, float(z >> _S11) * (1.0 / 9007199254740992.0)


@jit
def random_direction(state, d):
    v = np.zeros(d)
    state, u1 = next_uniform(state)
    if d == 2:
        a = 2.0 * math.pi * u1
        v[0] = math.cos(a)
        v[1] = math.sin(a)
        return state, v
    state, u2 = next_uniform(state)
    zc = 1.0 - 2.0 * u1
    s = math.sqrt(max(0.0, 1.0 - zc * zc))
    a = 2.0 * math.pi * u2
    v[0] = s * math.cos(a)
    v[1] = s * math.sin(a)
    v[2] = zc
    return state, v


@jit
def green_over_poisson(r, cos_t, R, d):
    """Ratio of the ball Green's function to the Poisson kernel at distance ``r``."""
    if r >= R:
        return 0.0
    if d == 2:
        return r * math.log(R / r) / cos_t
    return r * (1.0 - r / R) / cos_t


@jit
def _ball_box(x, R, dom_lo, dom_hi):
    d = x.shape[0]
    lo = np.empty(d)
    hi = np.empty(d)
    for i in range(d):
        if R < INF:
            lo[i] = max(np.nextafter(x[i] - R, -INF), dom_lo[i])
            hi[i] = min(np.nextafter(x[i] + R, INF), dom_hi[i])
        else:
            lo[i] = dom_lo[i]
            hi[i] = dom_hi[i]
    return lo, hi


@jit
def _empty_box(lo, hi):
    for i in range(lo.shape[0]):
        if lo[i] > hi[i]:
            return True
    return False


@jit
def cpq_distance(prog, k, x, dom_lo, dom_hi, tol, gap, budget):
    """Certified lower bound on the distance to field ``k`` and a nearby surface point.

    Returns ``(distance, closest, found, converged)``; without any zero set in the
    domain the distance is infinite.
    """
    P = make_params(x, _EMPTY, k, MU, INF)
    res = minimize(K_CPQ, prog, P, dom_lo, dom_hi, tol, gap, GAP_SQRT | GAP_RELATIVE, budget,
                   REFINE_ALL, True, False, INF)
    status = res[0]
    lower = res[1]
    nacc = res[7]
    best = res[8]
    inc = res[9]
    has_inc = res[10]
    conv = status != ST_BUDGET
    if nacc == 0 and conv:
        return INF, x.copy(), False, True
    dist = math.sqrt(max(lower, 0.0))
    if has_inc:
        return dist, inc.copy(), True, conv
    if best >= 0:
        mid = 0.5 * (res[4][best] + res[5][best])
        q, _f, ok = project_to_surface(prog, k, mid, PROJ_ITERS, PROJ_FTOL)
        return dist, q, True, conv
    return dist, x.copy(), False, conv


@jit
def silhouette_bound(prog, x, R_D, dom_lo, dom_hi, tol, gap, budget, robin, shrink, rounds):
    """Silhouette bound of the reflecting field within ``R_D`` (shrunk and certified for Robin).

    Returns ``(R_S, converged)``.
    """
    lo, hi = _ball_box(x, R_D, dom_lo, dom_hi)
    if _empty_box(lo, hi):
        return R_D, True
    P = make_params(x, _EMPTY, F_R, MU, R_D)
    # silhouette projection is costly, so it runs on a sparse schedule of pops
    res = minimize(K_CSPQ, prog, P, lo, hi, tol, gap, GAP_SQRT | GAP_RELATIVE, budget,
                   REFINE_SPARSE, True, False, R_D * R_D)
    status = res[0]
    lower = res[1]
    nacc = res[7]
    if status == ST_BUDGET:
        d, _c, _f, _cv = cpq_distance(prog, F_R, x, dom_lo, dom_hi, tol, gap, budget)
        part = math.sqrt(max(lower, 0.0)) if lower < INF else R_D
        if d == INF:
            d = 0.0
        return min(max(d, part), R_D), False
    raw = min(math.sqrt(max(lower, 0.0)), R_D) if nacc > 0 else R_D
    if not robin or raw == INF:
        return raw, True
    R = raw * shrink
    d_lo = -1.0
    for rnd in range(rounds + 1):
        ctol = max(min(tol, (raw - R) / 4.0), 1e-12)
        clo, chi = _ball_box(x, R, dom_lo, dom_hi)
        if _empty_box(clo, chi):
            return R, True
        Pc = make_params(x, _EMPTY, F_R, MU, R)
        st, _s, _al, _ah, nc, _t, _nt = solve(K_CERT, prog, Pc, clo, chi, ctol, budget, True, False)
        if nc == 0 and st != ST_BUDGET:
            return R, True
        if rnd == rounds:
            break
        if d_lo < 0.0:
            d_lo, _c, _f, _cv = cpq_distance(prog, F_R, x, dom_lo, dom_hi, tol, gap, budget)
            d_lo = min(d_lo, R) if d_lo < INF else 0.0
        R = d_lo + 0.5 * (R - d_lo)
    return d_lo if d_lo >= 0.0 else R, True


@jit
def robin_bound(prog, x, R_S, dom_lo, dom_hi, tol, gap, budget):
    """Robin radius bound within ``R_S``. Returns ``(R_R, converged)``."""
    d = x.shape[0]
    lo, hi = _ball_box(x, R_S, dom_lo, dom_hi)
    if _empty_box(lo, hi):
        return R_S, True
    P = make_params(x, _EMPTY, F_R, MU, R_S)
    kind = K_RRBQ2 if d == 2 else K_RRBQ3
    res = minimize(kind, prog, P, lo, hi, tol, gap, GAP_RELATIVE, budget, REFINE_ALL, True, False,
                   R_S)
    status = res[0]
    lower = res[1]
    if status == ST_BUDGET:
        dd, _c, _f, _cv = cpq_distance(prog, F_R, x, dom_lo, dom_hi, tol, gap, budget)
        if dd == INF:
            dd = 0.0
        return min(max(dd, lower), R_S), False
    if res[7] == 0 or lower == INF:
        return R_S, True
    return min(lower, R_S), True


@jit
def star(prog, x, dom_lo, dom_hi, C):
    """Star region radii at ``x``: ``(R_D, closest, R_S, R_R, converged)``."""
    tol = C[C_TOL]
    gap = C[C_GAP]
    budget = int(C[C_BUDGET])
    conv = True
    R_D = INF
    closest = x.copy()
    if has_field(prog, F_D):
        R_D, closest, _found, cv = cpq_distance(prog, F_D, x, dom_lo, dom_hi, tol, gap, budget)
        conv = conv and cv
    if not has_field(prog, F_R):
        return R_D, closest, R_D, R_D, conv
    robin = C[C_ROBIN] > 0.0
    R_S, cv = silhouette_bound(prog, x, R_D, dom_lo, dom_hi, tol, gap, budget, robin,
                               C[C_SHRINK], int(C[C_ROUNDS]))
    conv = conv and cv
    R_R = R_S
    if robin:
        R_R, cv = robin_bound(prog, x, R_S, dom_lo, dom_hi, tol, gap, budget)
        conv = conv and cv
    return R_D, closest, R_S, R_R, conv


@jit
def _bisect_ray(prog, x, v, ta, tb):
    d = x.shape[0]
    z = np.empty(d)
    for i in range(d):
        z[i] = x[i] + ta * v[i]
    fa = eval_point(prog, F_R, z)
    for _ in range(200):
        m = 0.5 * (ta + tb)
        if m <= ta or m >= tb:
            break
        for i in range(d):
            z[i] = x[i] + m * v[i]
        fm = eval_point(prog, F_R, z)
        if fm == 0.0:
            return m
        if (fm < 0.0) == (fa < 0.0):
            ta = m
            fa = fm
        else:
            tb = m
    return 0.5 * (ta + tb)


@jit
def first_crossing(prog, x, v, t_max, tol, budget):
    """Parameter of the first transversal crossing of the reflecting field along
    ``x + t v`` with ``0 <= t <= t_max``; returns ``(hit, t, converged)``."""
    d = x.shape[0]
    P = make_params(x, v, F_R, MU, INF)
    tlo = np.zeros(1)
    thi = np.full(1, t_max)
    res = minimize(K_RAY, prog, P, tlo, thi, tol, 0.0, 0, budget, REFINE_ALL, True, False, INF)
    AL = res[4]
    AH = res[5]
    n = res[7]
    order = np.argsort(AL[:, 0])
    za = np.empty(d)
    zb = np.empty(d)
    for j in range(n):
        tl = AL[order[j], 0]
        th = AH[order[j], 0]
        for i in range(d):
            za[i] = x[i] + tl * v[i]
            zb[i] = x[i] + th * v[i]
        fa = eval_point(prog, F_R, za)
        fb = eval_point(prog, F_R, zb)
        if (fa < 0.0 and fb > 0.0) or (fa > 0.0 and fb < 0.0):
            t = _bisect_ray(prog, x, v, tl, th)
            if t > 0.0:
                return True, t, res[0] != ST_BUDGET
    return False, t_max, res[0] != ST_BUDGET


@jit
def walk_once(prog, x0, dom_lo, dom_hi, C, state, counters):
    """One walk from ``x0``; returns its contribution and fills ``counters``."""
    d = x0.shape[0]
    eps = C[C_EPS]
    r_min = C[C_RMIN]
    max_steps = int(C[C_MAXSTEPS])
    side = C[C_SIDE]
    tol = C[C_TOL]
    budget = int(C[C_BUDGET])
    reflecting = has_field(prog, F_R)
    state = np.uint64(state)
    x = x0.copy()
    T = 1.0
    S = 0.0
    g = np.empty(d)
    closest = x.copy()
    for i in range(N_COUNTERS):
        counters[i] = 0
    for step in range(max_steps):
        R_D, closest, R_S, R_R, conv = star(prog, x, dom_lo, dom_hi, C)
        if not conv:
            counters[W_NONCONVERGED] += 1
        if R_D <= eps:
            counters[W_STEPS] = step
            return T * eval_point(prog, G, closest) + S
        R = max(R_R, r_min) if reflecting else R_D
        state, v = random_direction(state, d)
        hit = False
        t = R
        if reflecting:
            hit, t, cv = first_crossing(prog, x, v, R, tol, budget)
            if not cv:
                counters[W_NONCONVERGED] += 1
        if not hit:
            for i in range(d):
                x[i] += R * v[i]
            continue
        z = x + t * v
        eval_point_grad(prog, F_R, z, g)
        gn = 0.0
        gv = 0.0
        for i in range(d):
            gn += g[i] * g[i]
            gv += g[i] * v[i]
        gn = math.sqrt(gn)
        cos_t = abs(gv) / gn
        gp = green_over_poisson(t, cos_t, R, d)
        mu = eval_point(prog, MU, z)
        S += T * eval_point(prog, H, z) * gp
        rho = 1.0 - mu * gp
        if rho < 0.0 or rho > 1.0:
            counters[W_CLIPPED] += 1
            rho = min(max(rho, 0.0), 1.0)
        T *= rho
        counters[W_REFLECTIONS] += 1
        # restart on the edge of the r_min band, where the queries stay well posed
        for i in range(d):
            x[i] = z[i] + side * r_min * g[i] / gn
    counters[W_STEPS] = max_steps
    counters[W_TRUNCATED] = 1
    return T * eval_point(prog, G, closest) + S


@jit
def walk_batch(prog, x0, dom_lo, dom_hi, C, seed, start, count, values, counters):
    """Walks ``start .. start + count - 1`` into ``values`` and ``counters`` rows."""
    for j in range(count):
        w = start + j
        values[w] = walk_once(prog, x0, dom_lo, dom_hi, C, stream_seed(seed, w), counters[w])
