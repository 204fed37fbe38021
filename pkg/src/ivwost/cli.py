"""Command-line interface: ``ivwost {query,solve,oracle,validate,replay}``.

Exit codes: 0 success, 2 invalid input (scene or parameters), 3 a search or
walk did not converge (partial results are still printed and written).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import sys
import time
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from . import expr as E
from . import oracles
from . import queries as Q
from ._kernels import engine as K
from .globalopt import DEFAULT_BUDGET
from .interval import Interval
from .scene import RobinCoefficientField, Scene, SceneError, load_scene, parse_scene
from .wost import PDEProblem, WalkConfig, WalkError, estimate, grid_estimate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NONCONVERGED = 3

EVENT_NAMES = {K.EV_KEPT: "kept", K.EV_PRUNE_CON: "pruned_constraint", K.EV_PRUNE_BOUND: "pruned_bound",
               K.EV_ACCEPT: "accepted", K.EV_PRUNE_POP: "pruned_bound_at_pop"}


class InputError(ValueError):
    pass


# ---------------------------------------------------------------------------
# argument helpers


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from e


def _grid(text: str) -> list[int]:
    try:
        parts = [int(t) for t in text.lower().split("x")]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected a grid like 64x64, got {text!r}") from e
    if any(p < 1 for p in parts):
        raise argparse.ArgumentTypeError("grid sizes must be positive")
    return parts


def resolve_scene_path(name: str) -> Path:
    """A scene file path, or the name of a bundled scene (``unit_circle``)."""
    p = Path(name)
    if p.exists():
        return p
    bundled = resources.files("ivwost") / "scenes" / f"{p.stem}.scene"
    if bundled.is_file():
        return Path(str(bundled))
    raise InputError(f"scene {name!r} not found (neither a file nor a bundled scene)")


def _load(args) -> Scene:
    scene = load_scene(resolve_scene_path(args.scene))
    if getattr(args, "mu", None) is not None:
        if scene.f_R is None:
            raise InputError("--mu needs a scene with a reflecting boundary")
        if args.mu < 0:
            raise InputError("--mu must be non-negative")
        scene = dataclasses.replace(scene, mu=RobinCoefficientField(E.const(args.mu), scene.dimension, "robin"))
    return scene


def _point(args, scene: Scene, name: str = "point") -> np.ndarray:
    v = getattr(args, name)
    if v is None:
        raise InputError(f"--{name} is required")
    if len(v) != scene.dimension:
        raise InputError(f"--{name} needs {scene.dimension} coordinates")
    return np.asarray(v, float)


def _fmt(v) -> str:
    if isinstance(v, Interval):
        return f"[{v.lo!r}, {v.hi!r}]"
    if isinstance(v, (np.ndarray, list, tuple)):
        return ", ".join(repr(float(t)) for t in v)
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _emit(out, record: dict) -> None:
    for k, v in record.items():
        out.write(f"{k}: {_fmt(v) if v is not None else 'none'}\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(path: Path, *, argv: Sequence[str], scene_path: Path, scene: Scene, command: str,
                   params: dict, seed: int | None, outputs: list[Path], wall: float) -> None:
    manifest = {
        "tool": "ivwost",
        "version": __version__,
        "command": command,
        "argv": list(argv),
        "scene": str(scene_path),
        "scene_sha256": scene.digest,
        "parameters": params,
        "seed": seed,
        "wall_clock_seconds": wall,
        "outputs": {p.name: _sha256(p) for p in outputs},
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_trace(path: Path, trace: np.ndarray, dim: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["event", "a", "b"] + [f"lo{i}" for i in range(dim)] + [f"hi{i}" for i in range(dim)])
        for row in trace:
            w.writerow([EVENT_NAMES[int(row[0])], repr(float(row[1])), repr(float(row[2]))]
                       + [repr(float(t)) for t in row[3:3 + dim]] + [repr(float(t)) for t in row[6:6 + dim]])


def trace_counts(trace: np.ndarray) -> dict:
    """Box statistics recomputed from a trace (they match the engine's counters)."""
    ev = trace[:, 0].astype(int) if len(trace) else np.zeros(0, int)
    n = {k: int(np.sum(ev == k)) for k in EVENT_NAMES}
    return {
        "boxes_explored": n[K.EV_KEPT] + n[K.EV_PRUNE_CON] + n[K.EV_PRUNE_BOUND],
        "boxes_pruned_constraint": n[K.EV_PRUNE_CON],
        "boxes_pruned_bound": n[K.EV_PRUNE_BOUND] + n[K.EV_PRUNE_POP],
        "boxes_accepted": n[K.EV_ACCEPT],
    }


# ---------------------------------------------------------------------------
# query


def _opts(args, scene: Scene, trace: bool) -> Q.QueryOptions:
    tol = args.tol_override or scene.tol
    if not tol > 0:
        raise InputError("--tol-override must be positive")
    return Q.QueryOptions(tol=tol, budget=args.budget, trace=trace)


def _field(scene: Scene, which: str | None, default: str):
    """The requested boundary field; without ``--boundary`` fall back to the other one."""
    fields = {"dirichlet": scene.f_D, "reflecting": scene.f_R}
    if which is not None:
        if fields[which] is None:
            raise InputError(f"scene has no {which} boundary")
        return fields[which]
    f = fields[default] or fields["reflecting" if default == "dirichlet" else "dirichlet"]
    if f is None:
        raise InputError("scene has no boundary")
    return f


def _dirichlet_radius(scene: Scene, x, opts) -> float:
    if scene.f_D is None:
        return math.inf
    return Q.cpq(scene.f_D, x, domain=scene.domain, opts=opts).R_D.lo


def cmd_query(args, out) -> int:
    scene = _load(args)
    trace = args.trace is not None
    opts = _opts(args, scene, trace)
    x = _point(args, scene)
    record: dict = {"query": args.kind, "scene": args.scene, "point": x}
    converged = True
    tr = None
    if args.kind == "cpq":
        f = _field(scene, args.boundary, "dirichlet")
        r = Q.cpq(f, x, domain=scene.domain, opts=opts)
        record.update(R_D=r.R_D, closest=r.closest, dirichlet_absent=r.dirichlet_absent)
        converged, stats, tr = r.converged, r.stats, r.trace
    elif args.kind == "ray":
        f = _field(scene, args.boundary, "reflecting")
        v = _point(args, scene, "dir")
        n = np.linalg.norm(v)
        if not n > 0:
            raise InputError("--dir must be nonzero")
        t_max = args.radius or float(np.linalg.norm(np.subtract(scene.domain.hi, scene.domain.lo)))
        hit = Q.ray_intersect(f, x, v / n, t_max, opts=opts)
        record["hit"] = hit is not None
        if hit is not None:
            record.update(t=hit.t, hit_point=hit.point, normal=hit.normal, grazing=hit.grazing)
        stats = hit.stats if hit is not None else None
    elif args.kind == "silhouette":
        f = _field(scene, args.boundary, "reflecting")
        R_D = args.radius or _dirichlet_radius(scene, x, opts)
        r = Q.cspq(f, x, R_D, domain=scene.domain, opts=opts, robin=scene.is_robin)
        record.update(R_D_cap=R_D, R_S=r.R_S, R_S_unshrunk=r.R_S_raw, witness=r.witness,
                      silhouette_found=r.feasible, certified=r.certified, shrink_rounds=r.shrink_rounds)
        converged, stats, tr = r.converged, r.stats, r.trace
    elif args.kind == "robin-radius":
        f = _field(scene, args.boundary, "reflecting")
        if scene.mu is None or not scene.is_robin:
            raise InputError("robin-radius needs a Robin coefficient (scene robin or --mu > 0)")
        R_S = args.radius
        if R_S is None:
            R_D = _dirichlet_radius(scene, x, opts)
            R_S = Q.cspq(f, x, R_D, domain=scene.domain, opts=Q.QueryOptions(tol=opts.tol, budget=opts.budget),
                         robin=True).R_S
        r = Q.rrbq(f, scene.mu, x, R_S, domain=scene.domain, opts=opts)
        record.update(R_S_cap=R_S, R_R=r.R_R, bound=r.bound, unbounded=r.unbounded, witness=r.witness)
        converged, stats, tr = r.converged, r.stats, r.trace
    elif args.kind == "sample-gamma":
        f = _field(scene, args.boundary, "reflecting")
        if args.radius is None:
            raise InputError("sample-gamma needs --radius")
        rng = np.random.default_rng(args.seed)
        samples = Q.sample_gamma(f, x, args.radius, args.samples, rng, domain=scene.domain, opts=opts)
        record["samples"] = len(samples)
        if samples:
            record["pdf_estimate"] = samples[0].pdf_estimate
        for i, s in enumerate(samples):
            record[f"sample_{i}"] = s.point
        stats = None
    else:  # star
        if scene.f_D is None and scene.f_R is None:
            raise InputError("scene has no boundary")
        s = Q.star_radius(scene, x, opts=opts)
        record.update(R_D=s.R_D, closest_dirichlet=s.closest_dirichlet, R_S=s.R_S, R_R=s.R_R,
                      dirichlet_absent=s.dirichlet_absent, reflecting_absent=s.reflecting_absent,
                      rrbq_unbounded=s.rrbq_unbounded, near_reflecting=s.near_reflecting)
        converged, stats = s.converged, None
    if stats is not None:
        record.update(stats.as_dict())
    record["converged"] = converged
    _emit(out, record)
    if trace:
        if tr is None:
            raise InputError(f"--trace is not available for {args.kind}")
        write_trace(Path(args.trace), tr, scene.dimension)
        if args.figure:
            from .plotting import trace_figure

            trace_figure(tr, scene, Path(args.trace).with_suffix(".png"), point=x)
    return EXIT_OK if converged else EXIT_NONCONVERGED


# ---------------------------------------------------------------------------
# solve


def write_field_csv(path: Path, pts: np.ndarray, mean: np.ndarray, se: np.ndarray, n: int, dim: int) -> None:
    names = ["x", "y", "z"][:dim]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["estimate", "std_error", "n"])
        for p, m, s in zip(pts, mean, se):
            ok = np.isfinite(m)
            w.writerow([repr(float(t)) for t in p] + ([repr(float(m)), repr(float(s)), n] if ok else ["", "", 0]))


def write_pgm(path: Path, image: np.ndarray) -> tuple[float, float]:
    """8-bit binary PGM of a 2D array (rows top to bottom); nan pixels are black.

    Finite values map linearly from [min, max] to [1, 255]; returns (min, max).
    """
    finite = np.isfinite(image)
    if finite.any():
        lo, hi = float(image[finite].min()), float(image[finite].max())
    else:
        lo = hi = 0.0
    span = hi - lo
    px = np.zeros(image.shape, np.uint8)
    if span > 0:
        px[finite] = np.clip(np.rint(1 + 254 * (image[finite] - lo) / span), 1, 255).astype(np.uint8)
    else:
        px[finite] = 128
    h, w = image.shape
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + px.tobytes())
    return lo, hi


def cmd_solve(args, out, argv) -> int:
    scene = _load(args)
    t0 = time.perf_counter()
    try:
        problem = PDEProblem(scene)
    except ValueError as e:
        raise InputError(str(e)) from e
    cfg = WalkConfig(n_walks=args.walks, seed=args.seed, max_steps=args.max_steps, threads=args.threads,
                     query_tol=args.tol_override)
    if args.point is not None:
        st = estimate(problem, _point(args, scene), cfg)
        _emit(out, {"scene": args.scene, "point": np.asarray(args.point), **st.as_dict()})
        return EXIT_NONCONVERGED if st.truncated_walks or st.nonconverged_queries else EXIT_OK
    shape = args.grid or [32] * scene.dimension
    if len(shape) == 1:
        shape = shape * scene.dimension
    if len(shape) != scene.dimension:
        raise InputError(f"--grid needs {scene.dimension} sizes")
    g = grid_estimate(problem, shape, cfg)
    outdir = Path(args.out or ".")
    outdir.mkdir(parents=True, exist_ok=True)
    # row-major: last axis fastest after transposing to (y, x) / (z, y, x)
    order = tuple(reversed(range(scene.dimension)))
    mean = np.transpose(g.mean, order)
    se = np.transpose(g.std_error, order)
    mesh = np.meshgrid(*g.axes, indexing="ij")
    pts = np.stack([np.transpose(m, order).ravel() for m in mesh], axis=1)
    csv_path = outdir / "field.csv"
    write_field_csv(csv_path, pts, mean.ravel(), se.ravel(), args.walks, scene.dimension)
    img = mean if scene.dimension == 2 else mean[mean.shape[0] // 2]
    pgm_path = outdir / "field.pgm"
    vmin, vmax = write_pgm(pgm_path, img[::-1])
    outputs = [csv_path, pgm_path]
    if args.figure:
        from .plotting import field_figure

        fig_path = outdir / "field.png"
        field_figure(g, scene, fig_path)
        outputs.append(fig_path)
    params = {"grid": list(shape), "walks": args.walks, "max_steps": args.max_steps,
              "tol": args.tol_override or scene.tol, "threads": args.threads,
              "image_min": vmin, "image_max": vmax, "truncated_walks": g.truncated_walks}
    write_manifest(outdir / "manifest.json", argv=argv, scene_path=resolve_scene_path(args.scene), scene=scene,
                   command="solve", params=params, seed=args.seed, outputs=outputs,
                   wall=time.perf_counter() - t0)
    n_in = int(g.inside.sum())
    _emit(out, {"scene": args.scene, "grid": "x".join(map(str, shape)), "nodes_inside": n_in,
                "walks_per_node": args.walks, "truncated_walks": g.truncated_walks,
                "image_min": vmin, "image_max": vmax, "csv": csv_path, "image": pgm_path,
                "manifest": outdir / "manifest.json"})
    return EXIT_NONCONVERGED if g.truncated_walks else EXIT_OK


# ---------------------------------------------------------------------------
# oracle / validate / replay


def cmd_oracle(args, out) -> int:
    scene = _load(args)
    if args.density < 1000:
        raise InputError("--density must be at least 1000")
    x = _point(args, scene)
    rec: dict = {"oracle": args.kind, "scene": args.scene, "point": x, "density": args.density}
    if args.kind == "cpq":
        f = _field(scene, args.boundary, "dirichlet")
        r = oracles.closest_point(f.expr, x, scene.domain, n=args.density, seed=args.seed)
        rec.update(distance=r.value, argmin=r.point)
    elif args.kind == "silhouette":
        f = _field(scene, args.boundary, "reflecting")
        R = args.radius or math.inf
        r = oracles.silhouette(f.expr, x, R, scene.domain, n=args.density, seed=args.seed)
        rec.update(distance=r.value, argmin=r.point)
    elif args.kind == "robin-radius":
        f = _field(scene, args.boundary, "reflecting")
        if scene.mu is None or not scene.is_robin:
            raise InputError("robin-radius needs a Robin coefficient (scene robin or --mu > 0)")
        R = args.radius or math.inf
        r = oracles.robin_radius(f.expr, scene.mu.expr, x, R, scene.domain, n=args.density, seed=args.seed)
        rec.update(minimum=r.value, argmin=r.point)
    elif args.kind == "ray":
        f = _field(scene, args.boundary, "reflecting")
        v = _point(args, scene, "dir")
        v = v / np.linalg.norm(v)
        t_max = args.radius or float(np.linalg.norm(np.subtract(scene.domain.hi, scene.domain.lo)))
        t = oracles.ray_first_hit(f.expr, x, v, t_max, step=t_max / args.density)
        rec.update(hit=t is not None, t=t)
    else:  # gamma membership
        f = _field(scene, args.boundary, "reflecting")
        if args.radius is None or args.center is None:
            raise InputError("gamma needs --center and --radius (membership of --point)")
        c = _point(args, scene, "center")
        fv = abs(float(E.eval_points(f.expr, x[None, :])[0]))
        r = float(np.linalg.norm(x - c))
        tol = args.tol_override or scene.tol
        rec.update(field_value=fv, distance=r, member=bool(fv <= tol and r <= args.radius + tol))
    _emit(out, rec)
    return EXIT_OK


def cmd_validate(args, out) -> int:
    path = resolve_scene_path(args.scene)
    scene = parse_scene(path.read_text(), path=str(path), validate=True)
    _emit(out, {"scene": str(path), "valid": True, "dimension": scene.dimension,
                "dirichlet": scene.f_D is not None, "reflecting": scene.f_R is not None,
                "mode": PDEProblem(scene).mode if scene.f_D is not None else "none",
                "epsilon_shell": scene.epsilon_shell, "tol": scene.tol, "sha256": scene.digest})
    return EXIT_OK


def cmd_replay(args, out) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    argv = list(manifest["argv"])
    if args.out is not None:
        if "--out" in argv:
            argv[argv.index("--out") + 1] = args.out
        else:
            argv += ["--out", args.out]
    return main(argv, out)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ivwost", description="Interval walk-on-stars queries and solver.")
    p.add_argument("--version", action="version", version=f"ivwost {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, walks=False):
        sp.add_argument("--scene", required=True, help="scene file or bundled scene name")
        sp.add_argument("--point", type=_floats, help="query point, e.g. 0.3,0.4")
        sp.add_argument("--mu", type=float, help="constant Robin coefficient overriding the scene")
        sp.add_argument("--tol-override", type=float, help="query tolerance (default: epsilon_shell / 10)")
        sp.add_argument("--seed", type=int, default=0)

    q = sub.add_parser("query", help="run one geometric query")
    q.add_argument("kind", choices=["cpq", "ray", "silhouette", "robin-radius", "sample-gamma", "star"])
    common(q)
    q.add_argument("--dir", type=_floats, help="ray direction")
    q.add_argument("--radius", type=float, help="ball radius cap (R_D, R_S or the gamma radius)")
    q.add_argument("--boundary", choices=["dirichlet", "reflecting"])
    q.add_argument("--samples", type=int, default=8, help="number of gamma samples")
    q.add_argument("--budget", type=int, default=DEFAULT_BUDGET)
    q.add_argument("--trace", help="write the box trace as CSV")
    q.add_argument("--figure", action="store_true", help="also render the trace (needs matplotlib)")

    s = sub.add_parser("solve", help="estimate the PDE solution on a grid or at a point")
    common(s)
    s.add_argument("--walks", type=int, default=256)
    s.add_argument("--grid", type=_grid, help="grid size, e.g. 64x64")
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--max-steps", type=int, default=10_000)
    s.add_argument("--out", help="output directory")
    s.add_argument("--figure", action="store_true", help="also write field.png (needs matplotlib)")

    o = sub.add_parser("oracle", help="brute-force reference answer")
    o.add_argument("kind", choices=["cpq", "ray", "silhouette", "robin-radius", "gamma"])
    common(o)
    o.add_argument("--dir", type=_floats)
    o.add_argument("--center", type=_floats, help="ball centre for gamma membership")
    o.add_argument("--radius", type=float)
    o.add_argument("--boundary", choices=["dirichlet", "reflecting"])
    o.add_argument("--density", type=int, default=40_000, help="surface samples")

    v = sub.add_parser("validate", help="parse and lint a scene")
    v.add_argument("--scene", required=True)

    r = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    r.add_argument("manifest")
    r.add_argument("--out", help="output directory for the re-run")
    return p



def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code else EXIT_OK
    try:
        if args.command == "query":
            return cmd_query(args, out)
        if args.command == "solve":
            return cmd_solve(args, out, argv)
        if args.command == "oracle":
            return cmd_oracle(args, out)
        if args.command == "validate":
            return cmd_validate(args, out)
        return cmd_replay(args, out)
    except (SceneError, InputError, ValueError, OSError) as e:
        sys.stderr.write(f"ivwost: error: {e}\n")
        return EXIT_INPUT
    except WalkError as e:
        sys.stderr.write(f"ivwost: error: {e}\n")
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
