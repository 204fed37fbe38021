import numpy as np
import pytest
from hypothesis import settings

from ivwost.cli import resolve_scene_path
from ivwost.scene import load_scene

# kernels compile on first use, which would trip per-example deadlines
settings.register_profile("ivwost", deadline=None, max_examples=200)
settings.load_profile("ivwost")

SCENES = [
    "annulus_neumann",
    "annulus_robin",
    "blobs_robin",
    "circle_robin",
    "harmonic_rbf",
    "rbf_robin",
    "sphere_robin",
    "teaser3d",
    "torus3d",
    "two_circles",
    "unit_circle",
]

ROBIN_SCENES = [n for n in SCENES if n.endswith("_robin") or n == "teaser3d"]


def bundled(name: str):
    return load_scene(resolve_scene_path(name))


@pytest.fixture(scope="session")
def corpus():
    return {name: bundled(name) for name in SCENES}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """Collect the one-line verdicts recorded by the acceptance suite."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            for name, value in getattr(rep, "user_properties", []):
                if name == "acceptance":
                    lines.append(value)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
