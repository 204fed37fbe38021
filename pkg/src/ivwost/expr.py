"""Expression trees for implicit fields and their compilation to tapes.

Expressions are immutable and hash-consed on compile, so a subexpression used
twice is evaluated once. The numpy evaluators here are written independently of
the compiled kernels and double as the reference for point values in tests.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from ._kernels import tape as _t

Number = (int, float)


class Expr:
    """Scalar expression node over coordinates ``x0 .. x{d-1}``."""

    __slots__ = ("op", "args", "value", "_key")

    def __init__(self, op: int, args: tuple = (), value: float = 0.0):
        self.op = op
        self.args = args
        self.value = float(value)
        self._key = None

    @property
    def key(self) -> tuple:
        if self._key is None:
            self._key = (self.op, self.value, tuple(a.key for a in self.args))
        return self._key

    # -- construction helpers -------------------------------------------------
    def __add__(self, other):
        return Expr(_t.ADD, (self, as_expr(other)))

    def __radd__(self, other):
        return Expr(_t.ADD, (as_expr(other), self))

    def __sub__(self, other):
        return Expr(_t.SUB, (self, as_expr(other)))

    def __rsub__(self, other):
        return Expr(_t.SUB, (as_expr(other), self))

    def __mul__(self, other):
        return Expr(_t.MUL, (self, as_expr(other)))

    def __rmul__(self, other):
        return Expr(_t.MUL, (as_expr(other), self))

    def __truediv__(self, other):
        return Expr(_t.DIV, (self, as_expr(other)))

    def __rtruediv__(self, other):
        return Expr(_t.DIV, (as_expr(other), self))

    def __neg__(self):
        if self.op == _t.CONST:
            return const(-self.value)
        return Expr(_t.NEG, (self,))

    def __pos__(self):
        return self

    def __pow__(self, n):
        if isinstance(n, Expr):
            if n.op != _t.CONST:
                raise ValueError("exponent must be a constant")
            n = n.value
        if n == 0.5:
            return sqrt(self)
        if float(n) != int(n) or n < 0:
            raise ValueError(f"only non-negative integer powers (or 0.5) are supported, got {n}")
        n = int(n)
        if n == 2:
            return sqr(self)
        return Expr(_t.POWN, (self,), n)

    def __repr__(self) -> str:
        name = _t.OP_NAMES[self.op]
        if self.op == _t.CONST:
            return repr(self.value)
        if self.op == _t.VAR:
            return f"x{int(self.value)}"
        if self.op == _t.POWN:
            return f"pown({self.args[0]!r}, {int(self.value)})"
        return f"{name}({', '.join(repr(a) for a in self.args)})"

    def max_var(self) -> int:
        """Largest coordinate index referenced, or -1."""
        best = -1
        stack = [self]
        seen = set()
        while stack:
            e = stack.pop()
            if id(e) in seen:
                continue
            seen.add(id(e))
            if e.op == _t.VAR:
                best = max(best, int(e.value))
            stack.extend(e.args)
        return best


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    if isinstance(v, Number) or isinstance(v, np.floating):
        return const(float(v))
    raise TypeError(f"cannot use {type(v).__name__} in a scalar expression")


def const(c: float) -> Expr:
    return Expr(_t.CONST, (), float(c))


def var(i: int) -> Expr:
    return Expr(_t.VAR, (), i)


def coords(d: int) -> tuple[Expr, ...]:
    return tuple(var(i) for i in range(d))


def sqr(a) -> Expr:
    return Expr(_t.SQR, (as_expr(a),))


def sqrt(a) -> Expr:
    return Expr(_t.SQRT, (as_expr(a),))


def exp(a) -> Expr:
    return Expr(_t.EXP, (as_expr(a),))


def log(a) -> Expr:
    return Expr(_t.LOG, (as_expr(a),))


def abs_(a) -> Expr:
    return Expr(_t.ABS, (as_expr(a),))


def minimum(*xs) -> Expr:
    out = as_expr(xs[0])
    for x in xs[1:]:
        out = Expr(_t.MIN, (out, as_expr(x)))
    return out


def maximum(*xs) -> Expr:
    out = as_expr(xs[0])
    for x in xs[1:]:
        out = Expr(_t.MAX, (out, as_expr(x)))
    return out


def smooth_min(a, b, k: float) -> Expr:
    """Polynomial smooth minimum ``min(a,b) - max(k-|a-b|, 0)^2 / (4k)``.

    Equal to ``min(a, b)`` once ``|a-b| >= k`` and to ``a - k/4`` when ``a == b``.
    """
    if k <= 0:
        raise ValueError("smooth-min blend k must be positive")
    a = as_expr(a)
    b = as_expr(b)
    h = maximum(const(k) - abs_(a - b), 0.0)
    return minimum(a, b) - sqr(h) / (4.0 * k)


def smooth_max(a, b, k: float) -> Expr:
    return -smooth_min(-as_expr(a), -as_expr(b), k)


def dot(u: Sequence, v: Sequence) -> Expr:
    if len(u) != len(v):
        raise ValueError("dot of vectors with different lengths")
    terms = [as_expr(a) * as_expr(b) for a, b in zip(u, v)]
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out


def norm_sq(u: Sequence) -> Expr:
    out = sqr(u[0])
    for a in u[1:]:
        out = out + sqr(a)
    return out


def norm(u: Sequence) -> Expr:
    return sqrt(norm_sq(u))


# ---------------------------------------------------------------------------
# primitives


def circle(center: Sequence[float], radius: float) -> Expr:
    """``||p - c||^2 - R^2``; a circle in 2D, a sphere in 3D."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    x = coords(len(center))
    return norm_sq([xi - float(ci) for xi, ci in zip(x, center)]) - float(radius) ** 2


sphere = circle


def plane(normal: Sequence[float], offset: float = 0.0) -> Expr:
    x = coords(len(normal))
    return dot([float(n) for n in normal], x) - float(offset)


def torus(center: Sequence[float], major: float, minor: float) -> Expr:
    """Torus around the z axis through ``center``."""
    if len(center) != 3:
        raise ValueError("torus is a 3D primitive")
    if not 0 < minor < major:
        raise ValueError("torus needs 0 < minor < major")
    x, y, z = coords(3)
    cx, cy, cz = (float(c) for c in center)
    ring = sqrt(sqr(x - cx) + sqr(y - cy)) - float(major)
    return sqr(ring) + sqr(z - cz) - float(minor) ** 2


RBF_KERNELS = ("gaussian", "harmonic")


def rbf(centers: Sequence[Sequence[float]], weights: Sequence[float], kernel: str = "gaussian",
        scale: float = 1.0, offset: float = 0.0) -> Expr:
    """Radial basis sum ``offset + sum_i w_i phi(||p - c_i||)``.

    ``gaussian``: ``exp(-(r/scale)^2)``. ``harmonic``: ``log r`` in 2D and ``1/r`` in 3D,
    the free-space Green's function up to constants.
    """
    if kernel not in RBF_KERNELS:
        raise ValueError(f"unknown RBF kernel {kernel!r}")
    if len(centers) != len(weights) or not centers:
        raise ValueError("rbf needs equally many centers and weights")
    d = len(centers[0])
    x = coords(d)
    out = const(float(offset))
    for c, w in zip(centers, weights):
        if len(c) != d:
            raise ValueError("rbf centers have mixed dimensions")
        r2 = norm_sq([xi - float(ci) for xi, ci in zip(x, c)])
        if kernel == "gaussian":
            phi = exp(-r2 / (float(scale) ** 2))
        elif d == 2:
            phi = 0.5 * log(r2)
        else:
            phi = 1.0 / sqrt(r2)
        out = out + float(w) * phi
    return out


# ---------------------------------------------------------------------------
# compilation


def compile_tape(expr: Expr) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Linearise ``expr`` into ``(ops, ia, ib, cst)`` with local indices, root last."""
    index: dict[tuple, int] = {}
    ops: list[int] = []
    ia: list[int] = []
    ib: list[int] = []
    cst: list[float] = []

    # iterative post-order keeps deep RBF sums off the recursion limit
    stack = [(expr, False)]
    while stack:
        e, expanded = stack.pop()
        k = e.key
        if k in index:
            continue
        if not expanded and e.args:
            stack.append((e, True))
            for a in reversed(e.args):
                if a.key not in index:
                    stack.append((a, False))
            continue
        args = [index[a.key] for a in e.args]
        index[k] = len(ops)
        ops.append(e.op)
        ia.append(args[0] if len(args) > 0 else (int(e.value) if e.op == _t.VAR else -1))
        ib.append(args[1] if len(args) > 1 else -1)
        cst.append(e.value)
    return (np.asarray(ops, dtype=np.int64), np.asarray(ia, dtype=np.int64),
            np.asarray(ib, dtype=np.int64), np.asarray(cst, dtype=np.float64))


def build_program(exprs: Iterable[Expr | None]):
    """Concatenate tapes into the program tuple consumed by the kernels."""
    parts = []
    starts = []
    ends = []
    offset = 0
    for e in exprs:
        if e is None:
            starts.append(-1)
            ends.append(-1)
            continue
        ops, ia, ib, cst = compile_tape(e)
        shift = np.where(ops == _t.VAR, 0, offset)
        ia = np.where(ia >= 0, ia + shift, ia)
        ib = np.where(ib >= 0, ib + offset, ib)
        parts.append((ops, ia, ib, cst))
        starts.append(offset)
        offset += len(ops)
        ends.append(offset)
    if parts:
        ops, ia, ib, cst = (np.concatenate([p[i] for p in parts]) for i in range(4))
    else:
        ops = np.zeros(0, np.int64)
        ia = np.zeros(0, np.int64)
        ib = np.zeros(0, np.int64)
        cst = np.zeros(0)
    return (ops, ia, ib, cst, np.asarray(starts, np.int64), np.asarray(ends, np.int64))


# ---------------------------------------------------------------------------
# vectorised numpy evaluation (independent of the compiled kernels)


def eval_points(expr: Expr, pts: np.ndarray) -> np.ndarray:
    """Evaluate at each row of ``pts``; returns shape ``(n,)``."""
    val, _ = _eval_np(expr, np.atleast_2d(np.asarray(pts, dtype=float)), grad=False)
    return val


def grad_points(expr: Expr, pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Values ``(n,)`` and gradients ``(n, d)`` at each row of ``pts``."""
    return _eval_np(expr, np.atleast_2d(np.asarray(pts, dtype=float)), grad=True)


def _eval_np(expr: Expr, P: np.ndarray, grad: bool):
    ops, ia, ib, cst = compile_tape(expr)
    n, d = P.shape
    vals: list[np.ndarray] = []
    grads: list[np.ndarray | None] = []
    with np.errstate(all="ignore"):
        for op, a, b, c in zip(ops, ia, ib, cst):
            g = None
            if op == _t.CONST:
                v = np.full(n, c)
                if grad:
                    g = np.zeros((n, d))
            elif op == _t.VAR:
                v = P[:, a].copy()
                if grad:
                    g = np.zeros((n, d))
                    g[:, a] = 1.0
            else:
                va = vals[a]
                ga = grads[a]
                vb = vals[b] if b >= 0 else None
                gb = grads[b] if b >= 0 else None
                if op == _t.ADD:
                    v = va + vb
                    g = ga + gb if grad else None
                elif op == _t.SUB:
                    v = va - vb
                    g = ga - gb if grad else None
                elif op == _t.MUL:
                    v = va * vb
                    g = ga * vb[:, None] + va[:, None] * gb if grad else None
                elif op == _t.DIV:
                    v = va / vb
                    g = (ga - v[:, None] * gb) / vb[:, None] if grad else None
                elif op == _t.NEG:
                    v = -va
                    g = -ga if grad else None
                elif op == _t.SQR:
                    v = va * va
                    g = 2.0 * va[:, None] * ga if grad else None
                elif op == _t.SQRT:
                    v = np.sqrt(va)
                    g = ga / (2.0 * v[:, None]) if grad else None
                elif op == _t.EXP:
                    v = np.exp(va)
                    g = v[:, None] * ga if grad else None
                elif op == _t.LOG:
                    v = np.log(va)
                    g = ga / va[:, None] if grad else None
                elif op == _t.ABS:
                    v = np.abs(va)
                    g = np.sign(va)[:, None] * ga if grad else None
                elif op == _t.MIN:
                    take_a = va <= vb
                    v = np.where(take_a, va, vb)
                    g = np.where(take_a[:, None], ga, gb) if grad else None
                elif op == _t.MAX:
                    take_a = va >= vb
                    v = np.where(take_a, va, vb)
                    g = np.where(take_a[:, None], ga, gb) if grad else None
                elif op == _t.POWN:
                    m = int(c)
                    v = va ** m
                    g = (m * va ** (m - 1))[:, None] * ga if grad and m > 0 else (np.zeros((n, d)) if grad else None)
                else:  # pragma: no cover
                    raise ValueError(f"bad opcode {op}")
            vals.append(v)
            grads.append(g)
    return vals[-1], (grads[-1] if grad else None)


def uses_only(expr: Expr, d: int) -> bool:
    return expr.max_var() < d


def is_constant(expr: Expr) -> bool:
    return expr.op == _t.CONST


def constant_value(expr: Expr) -> float:
    if expr.op != _t.CONST:
        raise ValueError("not a constant expression")
    return expr.value


PI = math.pi
