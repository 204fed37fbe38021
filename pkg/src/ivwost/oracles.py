"""Brute-force reference answers for the geometric queries.

Everything here is independent of the interval machinery and the compiled
kernels: fields are evaluated with the vectorised numpy evaluator, the zero set
is covered by Newton-projected random samples, and the best sample is polished
with a local constrained solve (:func:`scipy.optimize.minimize`, SLSQP). The
results carry no guarantees; they exist to cross-check the certified queries.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize

from . import expr as E
from .interval import Box

__all__ = [
    "OracleResult",
    "dense_surface",
    "closest_point",
    "silhouette",
    "robin_radius",
    "ray_first_hit",
    "cos_theta",
    "rrbq_objective",
]


@dataclass
class OracleResult:
    value: float
    point: np.ndarray | None
    samples: int


def dense_surface(expr: E.Expr, domain: Box, n: int, rng: np.random.Generator,
                  iters: int = 40, ftol: float = 1e-12) -> np.ndarray:
    """About ``n`` zero-set points: uniform seeds pushed onto the surface by Newton steps."""
    lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
    out = []
    count = 0
    for _ in range(20):
        P = lo + (hi - lo) * rng.random((2 * n, len(lo)))
        with np.errstate(all="ignore"):
            for _ in range(iters):
                v, g = E.grad_points(expr, P)
                gg = np.sum(g * g, axis=1)
                P = P - (v / gg)[:, None] * g
            v = E.eval_points(expr, P)
        ok = np.isfinite(v) & (np.abs(v) <= ftol) & np.all((P >= lo) & (P <= hi), axis=1)
        out.append(P[ok])
        count += int(ok.sum())
        if count >= n:
            break
    pts = np.concatenate(out) if out else np.zeros((0, len(lo)))
    return pts[:n]


def cos_theta(expr: E.Expr, x: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Signed cosine between the surface normal at ``Z`` and the direction from ``x``."""
    _, g = E.grad_points(expr, Z)
    D = Z - x
    with np.errstate(all="ignore"):
        return np.sum(g * D, axis=1) / (np.linalg.norm(g, axis=1) * np.linalg.norm(D, axis=1))


def rrbq_objective(expr: E.Expr, mu: E.Expr, x: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Robin radius objective at surface points (``inf`` where the 3D side condition fails)."""
    d = Z.shape[1]
    r = np.linalg.norm(Z - x, axis=1)
    c = np.minimum(np.abs(cos_theta(expr, x, Z)), 1.0)
    m = E.eval_points(mu, Z)
    with np.errstate(all="ignore"):
        q = c / (m * r)
        if d == 2:
            return r * np.exp(q)
        return np.where(q < 1.0, r / (1.0 - q), np.inf)


class _DistSq:
    """Squared distance to ``x``, with its gradient for the local solver."""

    def __init__(self, x):
        self.x = x

    def __call__(self, z):
        return float(np.sum((z - self.x) ** 2))

    def jac(self, z):
        return 2.0 * (z - self.x)


def _polish(fun, z0, cons, x_ok) -> tuple[float, np.ndarray] | None:
    try:
        # SLSQP's finite differences can step onto poles; those steps are rejected below
        with warnings.catch_warnings(), np.errstate(all="ignore"):
            warnings.simplefilter("ignore", RuntimeWarning)
            res = minimize(fun, z0, method="SLSQP", constraints=cons, jac=getattr(fun, "jac", None),
                           options={"ftol": 1e-15, "maxiter": 200})
    except (ValueError, FloatingPointError):
        return None
    z = np.asarray(res.x, float)
    if not x_ok(z):
        return None
    return float(fun(z)), z


def _one(expr):
    return lambda z: float(E.eval_points(expr, z[None, :])[0])


def _one_grad(expr):
    return lambda z: E.grad_points(expr, z[None, :])[1][0]


def _zero_set(expr) -> dict:
    """Equality constraint ``expr = 0`` with its analytic gradient."""
    return {"type": "eq", "fun": _one(expr), "jac": _one_grad(expr)}


def closest_point(expr: E.Expr, x, domain: Box, *, n: int = 20000, seed: int = 0,
                  pts: np.ndarray | None = None) -> OracleResult:
    """Distance from ``x`` to the zero set of ``expr`` inside ``domain``."""
    x = np.asarray(x, float)
    Z = dense_surface(expr, domain, n, np.random.default_rng(seed)) if pts is None else pts
    if len(Z) == 0:
        return OracleResult(math.inf, None, 0)
    r = np.linalg.norm(Z - x, axis=1)
    k = int(np.argmin(r))
    best, bz = float(r[k]), Z[k]
    f = _one(expr)
    pol = _polish(_DistSq(x), bz, [_zero_set(expr)],
                  lambda z: abs(f(z)) < 1e-10 and domain.contains(z))
    if pol is not None and math.sqrt(pol[0]) < best:
        best, bz = math.sqrt(pol[0]), pol[1]
    return OracleResult(best, bz, len(Z))


def _psi(expr, x):
    def fn(z):
        _, g = E.grad_points(expr, z[None, :])
        return float(np.dot(g[0], z - x))
    return fn


def silhouette(expr: E.Expr, x, R: float, domain: Box, *, n: int = 40000, seed: int = 0,
               candidates: int = 40, pts: np.ndarray | None = None) -> OracleResult:
    """Distance from ``x`` to the closest silhouette point within ``R`` (``inf`` if none)."""
    x = np.asarray(x, float)
    Z = dense_surface(expr, domain, n, np.random.default_rng(seed)) if pts is None else pts
    r = np.linalg.norm(Z - x, axis=1)
    c = cos_theta(expr, x, Z)
    sel = np.flatnonzero((r <= R * 1.05) & (np.abs(c) < 0.2))
    if len(sel) == 0:
        return OracleResult(math.inf, None, len(Z))
    sel = sel[np.argsort(r[sel])][:candidates]
    f = _one(expr)
    psi = _psi(expr, x)
    best, bz = math.inf, None
    cons = [_zero_set(expr), {"type": "eq", "fun": psi}]
    for i in sel:
        pol = _polish(_DistSq(x), Z[i], cons,
                      lambda z: abs(f(z)) < 1e-10 and abs(psi(z)) < 1e-9 and domain.contains(z))
        if pol is None:
            continue
        d = math.sqrt(pol[0])
        if d <= R and d < best:
            best, bz = d, pol[1]
    return OracleResult(best, bz, len(Z))


def robin_radius(expr: E.Expr, mu: E.Expr, x, R: float, domain: Box, *, n: int = 40000,
                 seed: int = 0, pts: np.ndarray | None = None, polish: bool = True) -> OracleResult:
    """Minimum of the Robin radius objective over the zero set within ``B(x, R)``."""
    x = np.asarray(x, float)
    Z = dense_surface(expr, domain, n, np.random.default_rng(seed)) if pts is None else pts
    r = np.linalg.norm(Z - x, axis=1)
    Z = Z[r <= R]
    if len(Z) == 0:
        return OracleResult(math.inf, None, 0)
    obj = rrbq_objective(expr, mu, x, Z)
    k = int(np.argmin(obj))
    best, bz = float(obj[k]), Z[k]
    if polish and math.isfinite(best):
        f = _one(expr)

        def fun(z):
            v = rrbq_objective(expr, mu, x, z[None, :])[0]
            return float(v) if np.isfinite(v) else 1e300

        cons = [_zero_set(expr), {"type": "ineq", "fun": lambda z: R - np.linalg.norm(z - x)}]
        pol = _polish(fun, bz, cons, lambda z: abs(f(z)) < 1e-10 and np.linalg.norm(z - x) <= R)
        if pol is not None and pol[0] < best:
            best, bz = pol
    return OracleResult(best, bz, len(Z))


def ray_first_hit(expr: E.Expr, x, v, t_max: float, *, step: float = 1e-4) -> float | None:
    """First sign change of the field along ``x + t v`` by marching, refined with Brent's method."""
    x = np.asarray(x, float)
    v = np.asarray(v, float)
    t = np.arange(0.0, t_max + step, step)
    t[-1] = min(t[-1], t_max)
    vals = E.eval_points(expr, x + t[:, None] * v)
    s = np.sign(vals)
    idx = np.flatnonzero(s[:-1] * s[1:] < 0)
    zero = np.flatnonzero(vals == 0.0)
    cands = []
    if len(idx):
        i = int(idx[0])
        g = lambda tt: float(E.eval_points(expr, (x + tt * v)[None, :])[0])
        cands.append(brentq(g, t[i], t[i + 1], xtol=1e-15))
    if len(zero):
        cands.append(float(t[zero[0]]))
    return min(cands) if cands else None
