"""Implicit boundary geometry: fields, scenes and the scene-file parser.

A scene file is a sequence of assignments in a small expression language (a
restricted subset of Python syntax, parsed with :mod:`ast`), for example::

    dimension = 2
    domain = [[-1.5, 1.5], [-1.5, 1.5]]
    epsilon_shell = 1e-3
    dirichlet = circle([0, 0], 1)
    dirichlet_data = x

See ``docs/scene_format.md`` for the full grammar.
"""

from __future__ import annotations

import ast
import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import expr as E
from ._kernels import tape as _tape
from .interval import Box, DualInterval, Interval

__all__ = [
    "ImplicitField",
    "RobinCoefficientField",
    "Scene",
    "SceneError",
    "SurfaceSample",
    "parse_scene",
    "load_scene",
    "surface_samples",
    "F_D",
    "F_R",
    "MU",
    "G",
    "H",
]

# field slots in a scene program
F_D, F_R, MU, G, H = range(5)

PROJECT_ITERS = 20
PROJECT_FTOL = 1e-12
REGULARITY_SAMPLES = 1000
GRAD_MIN = 1e-8


class SceneError(ValueError):
    """Invalid scene description; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        self.message = message
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class SurfaceSample:
    position: np.ndarray
    field_value: float
    gradient: np.ndarray
    unit_normal: np.ndarray


class ImplicitField:
    """Scalar field over R^d backed by an expression tree."""

    def __init__(self, expr: E.Expr, dim: int, name: str = "f"):
        expr = E.as_expr(expr)
        if not E.uses_only(expr, dim):
            raise SceneError(f"field {name!r} references coordinate x{expr.max_var()} in {dim}D")
        self.expr = expr
        self.dim = dim
        self.name = name

    @cached_property
    def program(self):
        return E.build_program([self.expr])

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name}, d={self.dim})"

    def eval_value(self, p: Sequence[float]) -> float:
        """Point value; ``+inf`` marks a pole of a harmonic kernel."""
        v = _tape.eval_point(self.program, 0, _pt(p, self.dim))
        return math.inf if math.isnan(v) else float(v)

    def eval_values(self, pts: np.ndarray) -> np.ndarray:
        return E.eval_points(self.expr, pts)

    def gradient(self, p: Sequence[float]) -> tuple[float, np.ndarray]:
        g = np.empty(self.dim)
        v = _tape.eval_point_grad(self.program, 0, _pt(p, self.dim), g)
        return float(v), g

    def eval_interval(self, Y: Box) -> Interval:
        lo, hi = Y.arrays()
        return Interval(*_tape.eval_interval(self.program, 0, lo, hi))

    def eval_gradient(self, Y: Box) -> DualInterval:
        lo, hi = Y.arrays()
        glo = np.empty(self.dim)
        ghi = np.empty(self.dim)
        v = _tape.eval_dual(self.program, 0, lo, hi, glo, ghi)
        return DualInterval(Interval(*v), tuple(Interval(a, b) for a, b in zip(glo, ghi)))

    def project(self, p: Sequence[float], max_iter: int = PROJECT_ITERS,
                ftol: float = PROJECT_FTOL) -> SurfaceSample | None:
        """Newton projection onto the zero set; ``None`` if it fails to converge."""
        q, _, ok = _tape.project_to_surface(self.program, 0, _pt(p, self.dim), max_iter, ftol)
        if not ok:
            return None
        return self.sample_at(q)

    def sample_at(self, q: np.ndarray) -> SurfaceSample:
        v, g = self.gradient(q)
        n = np.linalg.norm(g)
        return SurfaceSample(np.asarray(q, float), v, g, g / n if n > 0 else g)


class RobinCoefficientField(ImplicitField):
    """Extension of the Robin coefficient to all of R^d."""

    @property
    def is_constant(self) -> bool:
        return E.is_constant(self.expr)

    @property
    def is_zero(self) -> bool:
        return self.is_constant and E.constant_value(self.expr) == 0.0


def _pt(p, d: int) -> np.ndarray:
    a = np.asarray(p, dtype=float).reshape(-1)
    if a.shape[0] != d:
        raise ValueError(f"expected a {d}D point, got {a.shape[0]} coordinates")
    return a


@dataclass
class Scene:
    """Boundary geometry and data of a Laplace problem.

    ``dirichlet_side``/``reflecting_side`` give the sign of the corresponding field
    inside the domain: ``-1`` means the domain lies where the field is negative.
    """

    dimension: int
    domain: Box
    epsilon_shell: float
    f_D: ImplicitField | None = None
    f_R: ImplicitField | None = None
    mu: RobinCoefficientField | None = None
    dirichlet_data: ImplicitField | None = None
    robin_data: ImplicitField | None = None
    dirichlet_side: int = -1
    reflecting_side: int = -1
    source: str = ""
    path: str | None = None
    harmonic_poles: list = field(default_factory=list)

    def __post_init__(self):
        if self.dimension not in (2, 3):
            raise SceneError(f"dimension must be 2 or 3, got {self.dimension}")
        if self.domain.dim != self.dimension:
            raise SceneError("domain box dimension does not match scene dimension")
        if any(b - a <= 0 for a, b in zip(self.domain.lo, self.domain.hi)):
            raise SceneError("domain box needs positive width in every dimension")
        if not (self.epsilon_shell > 0 and math.isfinite(self.epsilon_shell)):
            raise SceneError("epsilon_shell must be positive")
        if self.f_D is None and self.f_R is None:
            raise SceneError("scene needs a dirichlet or a reflecting boundary")
        if self.mu is not None and self.f_R is None:
            raise SceneError("a Robin coefficient needs a reflecting boundary")
        for f in (self.f_D, self.f_R, self.mu, self.dirichlet_data, self.robin_data):
            if f is not None and f.dim != self.dimension:
                raise SceneError(f"field {f.name!r} has dimension {f.dim}, scene has {self.dimension}")
        if self.dirichlet_side not in (-1, 1) or self.reflecting_side not in (-1, 1):
            raise SceneError("boundary sides must be -1 or 1")

    @property
    def tol(self) -> float:
        """Query tolerance: one tenth of the epsilon shell."""
        return self.epsilon_shell / 10.0

    @property
    def is_robin(self) -> bool:
        return self.f_R is not None and self.mu is not None and not self.mu.is_zero

    @property
    def is_neumann(self) -> bool:
        return self.f_R is not None and not self.is_robin

    @cached_property
    def program(self):
        """All scene fields compiled into one program, in slot order D, R, mu, g, h."""
        return E.build_program([
            _expr_or_none(self.f_D),
            _expr_or_none(self.f_R),
            _expr_or_none(self.mu) if self.is_robin else E.const(0.0),
            _expr_or_none(self.dirichlet_data) or E.const(0.0),
            _expr_or_none(self.robin_data) or E.const(0.0),
        ])

    @property
    def digest(self) -> str:
        return hashlib.sha256(self.source.encode()).hexdigest()

    def inside(self, pts: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Mask of points in the domain by boundary-field signs.

        With ``margin > 0`` points within ``margin`` of a boundary (first-order
        distance estimate ``|f|/||grad f||``) are excluded too.
        """
        pts = np.atleast_2d(np.asarray(pts, float))
        ok = np.all((pts >= np.asarray(self.domain.lo)) & (pts <= np.asarray(self.domain.hi)), axis=1)
        for f, side in ((self.f_D, self.dirichlet_side), (self.f_R, self.reflecting_side)):
            if f is None:
                continue
            v, g = E.grad_points(f.expr, pts)
            with np.errstate(all="ignore"):
                ok &= side * v > 0
                if margin > 0:
                    ok &= np.abs(v) / np.linalg.norm(g, axis=1) > margin
        return ok

    def validate(self, rng: np.random.Generator | None = None, n: int = REGULARITY_SAMPLES) -> None:
        """Sampled checks of regularity, Robin positivity and containment."""
        rng = rng or np.random.default_rng(0)
        for pole in self.harmonic_poles:
            if self.domain.contains(pole):
                raise SceneError(f"harmonic RBF pole {tuple(pole)} lies inside the domain box")
        for f in (self.f_D, self.f_R):
            if f is None:
                continue
            samples = surface_samples(f, self.domain, n, rng)
            if not samples:
                raise SceneError(f"no zero set of {f.name!r} found inside the domain box")
            gmin = min(np.linalg.norm(s.gradient) for s in samples)
            if not gmin > GRAD_MIN:
                raise SceneError(f"{f.name!r} violates the regularity condition (|grad f| = {gmin:.3g})")
            for s in samples:
                if _gradient_may_vanish(f, s.position, self.epsilon_shell):
                    raise SceneError(f"{f.name!r} violates the regularity condition: the gradient may "
                                     f"vanish near {tuple(np.round(s.position, 6))}")
            _check_contained(f, self.domain)
            if f is self.f_R and self.is_robin:
                mus = np.array([self.mu.eval_value(s.position) for s in samples])
                if not np.all(mus > 0):
                    raise SceneError(f"Robin coefficient is not positive on the reflecting boundary "
                                     f"(min {mus.min():.3g})")


def _gradient_may_vanish(f: ImplicitField, p: np.ndarray, half: float) -> bool:
    """True unless some partial derivative provably keeps its sign on the box of
    half-width ``half`` around ``p``."""
    d = f.eval_gradient(Box.around(p, half))
    return all(g.lo <= 0.0 <= g.hi for g in d.partials)


def _expr_or_none(f):
    return None if f is None else f.expr


def _check_contained(f: ImplicitField, domain: Box, per_dim: int = 64) -> None:
    """The zero set must not cross the domain box faces (sampled on a face grid)."""
    d = domain.dim
    lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
    axes = [np.linspace(lo[i], hi[i], per_dim) for i in range(d)]
    signs = []
    for i in range(d):
        for val in (lo[i], hi[i]):
            grids = np.meshgrid(*[axes[j] if j != i else np.array([val]) for j in range(d)], indexing="ij")
            pts = np.stack([g.ravel() for g in grids], axis=1)
            signs.append(np.sign(E.eval_points(f.expr, pts)))
    s = np.concatenate(signs)
    if np.any(s == 0) or (np.any(s > 0) and np.any(s < 0)):
        raise SceneError(f"zero set of {f.name!r} is not contained in the domain box")


def surface_samples(f: ImplicitField, domain: Box, n: int, rng: np.random.Generator,
                    ftol: float = PROJECT_FTOL) -> list[SurfaceSample]:
    """Up to ``n`` points on the zero set: random seeds near the surface, Newton-projected."""
    d = domain.dim
    lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
    out: list[SurfaceSample] = []
    for _ in range(8):
        seeds = lo + (hi - lo) * rng.random((max(20 * n, 20000), d))
        v, g = E.grad_points(f.expr, seeds)
        with np.errstate(all="ignore"):
            dist = np.abs(v) / np.linalg.norm(g, axis=1)
        h = 0.05 * float(np.min(hi - lo))
        near = seeds[np.isfinite(dist) & (dist < h)]
        for p in near:
            s = f.project(p, ftol=ftol)
            if s is not None and domain.contains(s.position):
                out.append(s)
                if len(out) >= n:
                    return out
    return out


# ---------------------------------------------------------------------------
# parser

_KEYS = {
    "dimension", "domain", "epsilon_shell", "dirichlet", "dirichlet_inside", "reflecting",
    "reflecting_inside", "robin", "dirichlet_data", "robin_data",
}
_SIDES = {"negative": -1, "positive": 1}


class _Evaluator:
    def __init__(self, dim_hint: int | None):
        self.env: dict[str, object] = {}
        self.dim = dim_hint
        self.poles: list[tuple[float, ...]] = []

    # functions available in expressions; each receives evaluated arguments
    def call(self, name: str, args: list, kwargs: dict, line: int):
        d = self._need_dim(line)
        try:
            if name == "circle" or name == "sphere":
                c, r = _args(args, kwargs, ("center", "radius"), line, name)
                self._vec(c, line, name)
                if name == "sphere" and d != 3:
                    raise SceneError("sphere is a 3D primitive; use circle in 2D", line)
                return E.circle(c, float(r))
            if name == "plane":
                nrm, off = _args(args, kwargs, ("normal", "offset"), line, name, defaults={"offset": 0.0})
                self._vec(nrm, line, name)
                return E.plane(nrm, float(off))
            if name == "torus":
                if d != 3:
                    raise SceneError("torus is a 3D primitive", line)
                c, R, r = _args(args, kwargs, ("center", "major", "minor"), line, name)
                return E.torus(c, float(R), float(r))
            if name == "rbf":
                c, w, kern, scale, off = _args(
                    args, kwargs, ("centers", "weights", "kernel", "scale", "offset"), line, name,
                    defaults={"kernel": "gaussian", "scale": 1.0, "offset": 0.0})
                for ci in c:
                    self._vec(ci, line, name)
                if kern == "harmonic":
                    self.poles.extend(tuple(float(v) for v in ci) for ci in c)
                return E.rbf(c, w, kern, float(scale), float(off))
            if name in ("union", "min"):
                return E.minimum(*args)
            if name in ("intersection", "max"):
                return E.maximum(*args)
            if name == "difference":
                a, b = _args(args, kwargs, ("a", "b"), line, name)
                return E.maximum(a, -E.as_expr(b))
            if name in ("smooth_union", "smin"):
                a, b, k = _args(args, kwargs, ("a", "b", "k"), line, name)
                return E.smooth_min(a, b, float(k))
            if name == "smooth_intersection":
                a, b, k = _args(args, kwargs, ("a", "b", "k"), line, name)
                return E.smooth_max(a, b, float(k))
            if name in ("exp", "sqrt", "log", "abs"):
                (a,) = _args(args, kwargs, ("a",), line, name)
                return {"exp": E.exp, "sqrt": E.sqrt, "log": E.log, "abs": E.abs_}[name](a)
            if name == "dot":
                u, v = _args(args, kwargs, ("u", "v"), line, name)
                return E.dot(u, v)
            if name == "norm":
                (u,) = _args(args, kwargs, ("u",), line, name)
                return E.norm(u)
        except SceneError:
            raise
        except (ValueError, TypeError) as exc:
            raise SceneError(f"{name}: {exc}", line) from None
        raise SceneError(f"unknown function {name!r}", line)

    def _need_dim(self, line: int) -> int:
        if self.dim is None:
            raise SceneError("dimension must be assigned before any geometry", line)
        return self.dim

    def _vec(self, v, line: int, name: str) -> None:
        if not isinstance(v, (list, tuple)) or len(v) != self.dim:
            raise SceneError(f"{name}: expected a {self.dim}-vector", line)

    def eval(self, node: ast.AST):
        line = getattr(node, "lineno", None)
        if isinstance(node, ast.Constant):
            if isinstance(node.value, bool) or not isinstance(node.value, (int, float, str)):
                raise SceneError(f"unsupported literal {node.value!r}", line)
            return node.value
        if isinstance(node, (ast.List, ast.Tuple)):
            return [self.eval(e) for e in node.elts]
        if isinstance(node, ast.Name):
            return self._name(node.id, line)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = self.eval(node.operand)
            return _arith(lambda a: -a if isinstance(node.op, ast.USub) else a, v, line)
        if isinstance(node, ast.BinOp):
            a = self.eval(node.left)
            b = self.eval(node.right)
            return _binop(node.op, a, b, line)
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name):
                raise SceneError("only plain function calls are allowed", line)
            args = [self.eval(a) for a in node.args]
            kwargs = {kw.arg: self.eval(kw.value) for kw in node.keywords}
            if None in kwargs:
                raise SceneError("**kwargs is not supported", line)
            return self.call(node.func.id, args, kwargs, line)
        if isinstance(node, ast.Subscript):
            base = self.eval(node.value)
            idx = self.eval(node.slice)
            if not isinstance(base, list) or not isinstance(idx, int):
                raise SceneError("indexing needs a vector and an integer", line)
            try:
                return base[idx]
            except IndexError:
                raise SceneError(f"index {idx} out of range", line) from None
        raise SceneError(f"unsupported syntax {type(node).__name__}", line)

    def _name(self, name: str, line):
        if name in self.env:
            return self.env[name]
        if name in ("x", "y", "z", "p"):
            d = self._need_dim(line)
            xs = list(E.coords(d))
            if name == "p":
                return xs
            i = "xyz".index(name)
            if i >= d:
                raise SceneError(f"coordinate {name!r} does not exist in {d}D", line)
            return xs[i]
        if name == "pi":
            return math.pi
        if name == "e":
            return math.e
        raise SceneError(f"undefined name {name!r}", line)


def _args(args, kwargs, names, line, fname, defaults=None):
    defaults = defaults or {}
    if len(args) > len(names):
        raise SceneError(f"{fname}: too many arguments", line)
    out = dict(zip(names, args))
    for k, v in kwargs.items():
        if k not in names:
            raise SceneError(f"{fname}: unknown argument {k!r}", line)
        if k in out:
            raise SceneError(f"{fname}: argument {k!r} given twice", line)
        out[k] = v
    for k in names:
        if k not in out:
            if k in defaults:
                out[k] = defaults[k]
            else:
                raise SceneError(f"{fname}: missing argument {k!r}", line)
    return [out[k] for k in names]


def _arith(fn, v, line):
    if isinstance(v, list):
        return [_arith(fn, e, line) for e in v]
    if isinstance(v, str):
        raise SceneError("arithmetic on a string", line)
    return fn(v)


_OPS = {
    ast.Add: lambda a, b: a + b,
    ast.Sub: lambda a, b: a - b,
    ast.Mult: lambda a, b: a * b,
    ast.Div: lambda a, b: a / b,
    ast.Pow: lambda a, b: a ** b,
}


def _binop(op, a, b, line):
    fn = _OPS.get(type(op))
    if fn is None:
        raise SceneError(f"unsupported operator {type(op).__name__}", line)
    if isinstance(a, str) or isinstance(b, str):
        raise SceneError("arithmetic on a string", line)
    if isinstance(a, list) or isinstance(b, list):
        if isinstance(op, ast.Pow):
            raise SceneError("power of a vector", line)
        if isinstance(a, list) and isinstance(b, list):
            if len(a) != len(b):
                raise SceneError("vector length mismatch", line)
            return [_binop(op, x, y, line) for x, y in zip(a, b)]
        if isinstance(a, list):
            return [_binop(op, x, b, line) for x in a]
        return [_binop(op, a, y, line) for y in b]
    try:
        if isinstance(op, ast.Div) and not isinstance(b, E.Expr) and b == 0:
            raise SceneError("division by the constant zero", line)
        return fn(a, b)
    except (ValueError, TypeError) as exc:
        raise SceneError(str(exc), line) from None


def parse_scene(text: str, path: str | None = None, validate: bool = True) -> Scene:
    """Parse and validate a scene description."""
    try:
        tree = ast.parse(text, filename=path or "<scene>")
    except SyntaxError as exc:
        raise SceneError(f"syntax error: {exc.msg}", exc.lineno) from None
    ev = _Evaluator(None)
    values: dict[str, tuple[object, int]] = {}
    for stmt in tree.body:
        line = stmt.lineno
        if not isinstance(stmt, ast.Assign) or len(stmt.targets) != 1 or not isinstance(stmt.targets[0], ast.Name):
            raise SceneError("each statement must be a single 'name = expression' assignment", line)
        name = stmt.targets[0].id
        if name in values or name in ev.env:
            raise SceneError(f"{name!r} assigned twice", line)
        if name in ("x", "y", "z", "p", "pi", "e"):
            raise SceneError(f"{name!r} is reserved", line)
        val = ev.eval(stmt.value)
        if name == "dimension":
            if not isinstance(val, int) or val not in (2, 3):
                raise SceneError("dimension must be 2 or 3", line)
            ev.dim = val
        if name in _KEYS:
            values[name] = (val, line)
        else:
            ev.env[name] = val

    def get(key, required=False, default=None):
        if key not in values:
            if required:
                raise SceneError(f"missing required key {key!r}")
            return default, None
        return values[key]

    dim, _ = get("dimension", required=True)
    dom, dline = get("domain", required=True)
    if (not isinstance(dom, list) or len(dom) != dim
            or any(not isinstance(iv, list) or len(iv) != 2 for iv in dom)):
        raise SceneError(f"domain must be a list of {dim} [lo, hi] pairs", dline)
    try:
        domain = Box(tuple(float(a) for a, _ in dom), tuple(float(b) for _, b in dom))
    except (ValueError, TypeError) as exc:
        raise SceneError(f"domain: {exc}", dline) from None
    eps, eline = get("epsilon_shell", required=True)
    if not isinstance(eps, (int, float)) or not eps > 0:
        raise SceneError("epsilon_shell must be a positive number", eline)

    def fld(key, cls=ImplicitField):
        val, line = get(key)
        if val is None:
            return None
        if isinstance(val, (list, str)):
            raise SceneError(f"{key} must be a scalar expression", line)
        try:
            return cls(E.as_expr(val), dim, key)
        except SceneError as exc:
            raise SceneError(exc.message, line) from None

    def side(key):
        val, line = get(key, default="negative")
        if val not in _SIDES:
            raise SceneError(f"{key} must be 'negative' or 'positive'", line)
        return _SIDES[val]

    mu = fld("robin", RobinCoefficientField)
    mu_val, mu_line = get("robin")
    if mu is not None and mu.is_constant and E.constant_value(mu.expr) < 0:
        raise SceneError("Robin coefficient must be positive (or 0 for Neumann)", mu_line)
    try:
        scene = Scene(
            dimension=dim, domain=domain, epsilon_shell=float(eps),
            f_D=fld("dirichlet"), f_R=fld("reflecting"), mu=mu,
            dirichlet_data=fld("dirichlet_data"), robin_data=fld("robin_data"),
            dirichlet_side=side("dirichlet_inside"), reflecting_side=side("reflecting_inside"),
            source=text, path=path, harmonic_poles=ev.poles,
        )
    except SceneError as exc:
        if exc.line is None:
            raise SceneError(exc.message, mu_line if "Robin" in exc.message else None) from None
        raise
    if validate:
        try:
            scene.validate()
        except SceneError as exc:
            line = mu_line if "Robin" in exc.message else None
            raise SceneError(exc.message, exc.line or line) from None
    return scene


def load_scene(path: str | Path, validate: bool = True) -> Scene:
    p = Path(path)
    return parse_scene(p.read_text(), str(p), validate=validate)
