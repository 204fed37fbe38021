"""Optional figures; matplotlib is imported only when a figure is requested."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ._kernels import engine as K


def _pyplot():
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as e:  # pragma: no cover - depends on the environment
        raise RuntimeError("figures need matplotlib (pip install matplotlib)") from e
    return plt


def trace_figure(trace: np.ndarray, scene, path: Path, point=None) -> Path:
    """Boxes of a 2D search coloured by their fate (accepted boxes on top)."""
    plt = _pyplot()
    from matplotlib.collections import PatchCollection
    from matplotlib.patches import Rectangle

    colors = {K.EV_KEPT: "#cccccc", K.EV_PRUNE_CON: "#9ecae1", K.EV_PRUNE_BOUND: "#fdae6b",
              K.EV_PRUNE_POP: "#fdae6b", K.EV_ACCEPT: "#d62728"}
    fig, ax = plt.subplots(figsize=(6, 6))
    for ev in (K.EV_KEPT, K.EV_PRUNE_CON, K.EV_PRUNE_BOUND, K.EV_PRUNE_POP, K.EV_ACCEPT):
        rows = trace[trace[:, 0] == ev]
        rects = [Rectangle((r[3], r[4]), r[6] - r[3], r[7] - r[4]) for r in rows]
        ax.add_collection(PatchCollection(rects, facecolor="none", edgecolor=colors[ev], linewidth=0.4))
    if point is not None:
        ax.plot([point[0]], [point[1]], "k+")
    ax.set_xlim(scene.domain.lo[0], scene.domain.hi[0])
    ax.set_ylim(scene.domain.lo[1], scene.domain.hi[1])
    ax.set_aspect("equal")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def field_figure(grid, scene, path: Path) -> Path:
    """Colour map of a 2D grid estimate (middle slice in 3D)."""
    plt = _pyplot()
    mean = grid.mean if scene.dimension == 2 else grid.mean[:, :, grid.mean.shape[2] // 2]
    fig, ax = plt.subplots(figsize=(6, 5))
    ext = [grid.axes[0][0], grid.axes[0][-1], grid.axes[1][0], grid.axes[1][-1]]
    im = ax.imshow(mean.T, origin="lower", extent=ext, cmap="viridis")
    fig.colorbar(im, ax=ax)
    ax.set_aspect("equal")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
