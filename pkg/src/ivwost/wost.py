"""Walk-on-stars estimator for Laplace problems with Dirichlet and Neumann/Robin boundaries.

Each step bounds a star-shaped ball around the walker with the interval queries
(Dirichlet distance, silhouette bound, Robin radius bound), picks a uniform
direction and follows it until it leaves the ball or meets the reflecting
boundary. A reflection multiplies the throughput by the Robin reflectance
``rho = 1 - mu G/P`` and adds the boundary data term ``h G/P``, where ``G`` and
``P`` are the Green's function and Poisson kernel of the ball. The Robin
condition reads ``du/dn + mu u = h`` with ``n`` the outward normal of the domain.

The compiled walk lives in :mod:`ivwost._kernels.walk`; this module holds the
configuration, the per-walk seeding and the reductions.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._kernels import walk as _W
from .queries import SHRINK_FACTOR, SHRINK_ROUNDS
from .scene import Scene

__all__ = [
    "PDEProblem",
    "WalkConfig",
    "EstimateStats",
    "GridEstimate",
    "WalkError",
    "walk_once",
    "estimate",
    "grid_estimate",
    "reflectance",
]


class WalkError(RuntimeError):
    """The estimator could not produce a value (for instance, every walk was truncated)."""


@dataclass(frozen=True)
class PDEProblem:
    """Laplace problem posed by a scene: ``g`` on the Dirichlet boundary and
    ``du/dn + mu u = h`` on the reflecting boundary (``mu = 0`` is Neumann)."""

    scene: Scene

    def __post_init__(self):
        if self.scene.f_D is None:
            raise ValueError("the estimator needs a Dirichlet boundary to terminate walks")

    @property
    def mode(self) -> str:
        if self.scene.f_R is None:
            return "dirichlet"
        return "robin" if self.scene.is_robin else "neumann"


@dataclass(frozen=True)
class WalkConfig:
    """Walk controls; ``None`` entries take defaults from the scene
    (``epsilon_shell`` from the scene, ``r_min = epsilon_shell / 2``)."""

    n_walks: int = 1000
    seed: int = 0
    epsilon_shell: float | None = None
    r_min: float | None = None
    max_steps: int = 10_000
    threads: int = 1
    query_gap: float = 0.1
    query_budget: int = 100_000
    query_tol: float | None = None

    def __post_init__(self):
        if self.n_walks < 1:
            raise ValueError("n_walks must be at least 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be at least 1")
        if self.threads < 1:
            raise ValueError("threads must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    def resolved(self, scene: Scene) -> "WalkConfig":
        eps = self.epsilon_shell or scene.epsilon_shell
        r_min = self.r_min if self.r_min is not None else eps / 2
        if not 0 < r_min < eps:
            raise ValueError("r_min must lie in (0, epsilon_shell)")
        tol = self.query_tol or eps / 10
        return WalkConfig(self.n_walks, self.seed, eps, r_min, self.max_steps, self.threads,
                          self.query_gap, self.query_budget, tol)

    def kernel_array(self, scene: Scene) -> np.ndarray:
        c = self.resolved(scene)
        C = np.zeros(_W.N_CONFIG)
        C[_W.C_EPS] = c.epsilon_shell
        C[_W.C_RMIN] = c.r_min
        C[_W.C_MAXSTEPS] = c.max_steps
        C[_W.C_TOL] = c.query_tol
        C[_W.C_GAP] = c.query_gap
        C[_W.C_BUDGET] = c.query_budget
        C[_W.C_SIDE] = scene.reflecting_side
        C[_W.C_ROBIN] = 1.0 if scene.is_robin else 0.0
        C[_W.C_SHRINK] = SHRINK_FACTOR
        C[_W.C_ROUNDS] = SHRINK_ROUNDS
        return C


@dataclass
class EstimateStats:
    mean: float
    std_error: float
    n_walks: int
    mean_steps: float
    truncated_walks: int
    reflections: int = 0
    clipped_reflectance: int = 0
    nonconverged_queries: int = 0
    started_near_reflecting: bool = False

    @property
    def truncated_fraction(self) -> float:
        return self.truncated_walks / self.n_walks

    def as_dict(self) -> dict:
        return {
            "mean": self.mean,
            "std_error": self.std_error,
            "n_walks": self.n_walks,
            "mean_steps": self.mean_steps,
            "truncated_walks": self.truncated_walks,
            "reflections": self.reflections,
            "clipped_reflectance": self.clipped_reflectance,
            "nonconverged_queries": self.nonconverged_queries,
        }


def reflectance(mu: float, r: float, cos_theta: float, R: float, d: int) -> float:
    """Throughput factor ``1 - mu G/P`` of a reflection at distance ``r`` in a ball of radius ``R``."""
    return 1.0 - mu * _W.green_over_poisson(r, cos_theta, R, d)


def _check_start(scene: Scene, x: np.ndarray, r_min: float) -> bool:
    if x.shape != (scene.dimension,):
        raise ValueError(f"expected a {scene.dimension}D point")
    if not scene.inside(x)[0]:
        raise ValueError(f"point {tuple(x)} is outside the domain")
    if scene.f_R is None:
        return False
    v, g = scene.f_R.gradient(x)
    return abs(v) / max(float(np.linalg.norm(g)), 1e-300) < r_min


def _run_walks(scene: Scene, x: np.ndarray, C: np.ndarray, seed: int, n: int, threads: int):
    values = np.zeros(n)
    counters = np.zeros((n, _W.N_COUNTERS), dtype=np.int64)
    lo, hi = scene.domain.arrays()
    prog = scene.program
    args = (prog, x, lo, hi, C, np.uint64(seed))
    if threads == 1 or n < 2:
        _W.walk_batch(*args, 0, n, values, counters)
    else:
        chunks = np.array_split(np.arange(n), min(threads * 4, n))
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_W.walk_batch, *args, int(c[0]), len(c), values, counters)
                       for c in chunks if len(c)]
            for f in futures:
                f.result()
    return values, counters


def walk_once(problem: PDEProblem, x0: Sequence[float], cfg: WalkConfig, index: int = 0) -> tuple[float, int]:
    """Contribution and step count of walk ``index`` of the stream seeded by ``cfg.seed``."""
    scene = problem.scene
    x = np.asarray(x0, float)
    _check_start(scene, x, cfg.resolved(scene).r_min)
    C = cfg.kernel_array(scene)
    counters = np.zeros(_W.N_COUNTERS, dtype=np.int64)
    lo, hi = scene.domain.arrays()
    state = np.uint64(_W.stream_seed(np.uint64(cfg.seed), np.uint64(index)))
    val = _W.walk_once(scene.program, x, lo, hi, C, state, counters)
    return float(val), int(counters[_W.W_STEPS])


def estimate(problem: PDEProblem, x: Sequence[float], cfg: WalkConfig) -> EstimateStats:
    """Monte Carlo estimate of ``u(x)`` over ``cfg.n_walks`` walks.

    Walk ``i`` draws from a stream keyed by ``(cfg.seed, i)``, and the reduction
    runs over the array of per-walk values, so the result is bit-identical for
    any thread count.
    """
    scene = problem.scene
    x = np.asarray(x, float)
    res = cfg.resolved(scene)
    near = _check_start(scene, x, res.r_min)
    values, counters = _run_walks(scene, x, cfg.kernel_array(scene), cfg.seed, cfg.n_walks, cfg.threads)
    return _reduce(values, counters, near)


def _reduce(values: np.ndarray, counters: np.ndarray, near: bool) -> EstimateStats:
    n = values.shape[0]
    truncated = int(counters[:, _W.W_TRUNCATED].sum())
    if truncated == n:
        raise WalkError("every walk hit max_steps; increase max_steps")
    if values.min() == values.max():
        # identical walks: avoid the rounding residue of sum / n and std
        mean, se = float(values[0]), 0.0 if n > 1 else math.inf
    else:
        mean = float(np.sum(values) / n)
        se = float(np.std(values, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return EstimateStats(
        mean=mean,
        std_error=se,
        n_walks=n,
        mean_steps=float(np.sum(counters[:, _W.W_STEPS]) / n),
        truncated_walks=truncated,
        reflections=int(counters[:, _W.W_REFLECTIONS].sum()),
        clipped_reflectance=int(counters[:, _W.W_CLIPPED].sum()),
        nonconverged_queries=int(counters[:, _W.W_NONCONVERGED].sum()),
        started_near_reflecting=near,
    )


@dataclass
class GridEstimate:
    """Estimates on a regular grid; nodes outside the domain hold ``nan``."""

    axes: list[np.ndarray]
    mean: np.ndarray
    std_error: np.ndarray
    inside: np.ndarray
    truncated_walks: int = 0

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


def grid_estimate(problem: PDEProblem, shape: Sequence[int], cfg: WalkConfig,
                  bounds: Sequence[Sequence[float]] | None = None) -> GridEstimate:
    """Estimate ``u`` at the nodes of a grid of ``shape`` spanning ``bounds`` (default: domain box).

    A node is inside when the boundary fields have their interior signs there and
    it lies farther than ``epsilon_shell`` from every boundary (first-order
    distance estimate). Node ``k`` uses the seed derived from ``(cfg.seed, k)``.
    """
    scene = problem.scene
    d = scene.dimension
    if len(shape) != d or any(n < 1 for n in shape):
        raise ValueError(f"grid shape must have {d} positive entries")
    if bounds is None:
        bounds = list(zip(scene.domain.lo, scene.domain.hi))
    axes = [np.linspace(b[0], b[1], n) for b, n in zip(bounds, shape)]
    res = cfg.resolved(scene)
    grid = GridEstimate(axes, np.full(tuple(shape), np.nan), np.full(tuple(shape), np.nan),
                        np.zeros(tuple(shape), bool))
    pts = grid.points()
    inside = scene.inside(pts, margin=res.epsilon_shell)
    grid.inside = inside.reshape(tuple(shape))
    C = cfg.kernel_array(scene)
    mean = grid.mean.reshape(-1)
    se = grid.std_error.reshape(-1)
    for k in np.flatnonzero(inside):
        seed = int(np.random.SeedSequence([cfg.seed, int(k)]).generate_state(1, np.uint64)[0])
        values, counters = _run_walks(scene, pts[k], C, seed, cfg.n_walks, cfg.threads)
        st = _reduce(values, counters, False)
        mean[k] = st.mean
        se[k] = st.std_error
        grid.truncated_walks += st.truncated_walks
    return grid
