import math

import numpy as np
import pytest

from conftest import bundled
from ivwost._kernels import walk as W
from ivwost.wost import (PDEProblem, WalkConfig, WalkError, estimate, grid_estimate, reflectance,
                         walk_once)

MASK = (1 << 64) - 1


def splitmix64(state):
    """Reference SplitMix64 in plain integers."""
    state = (state + 0x9E3779B97F4A7C15) & MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return state, z ^ (z >> 31)


def test_generator_matches_reference_splitmix64():
    s = np.uint64(1234567)
    ref = 1234567
    _, first = splitmix64(ref)
    assert first == 6457827717110365317
    for _ in range(100):
        s, u = W.next_uniform(np.uint64(s))
        ref, z = splitmix64(ref)
        assert int(s) % 2**64 == ref
        assert u == (z >> 11) / 2.0 ** 53


def test_streams_differ_per_walk_and_seed():
    seeds = {int(W.stream_seed(np.uint64(7), np.uint64(i))) for i in range(1000)}
    assert len(seeds) == 1000
    assert W.stream_seed(np.uint64(7), np.uint64(0)) != W.stream_seed(np.uint64(8), np.uint64(0))


@pytest.mark.parametrize("d", [2, 3])
def test_random_directions_are_unit_and_centred(d):
    s = np.uint64(99)
    V = np.empty((20_000, d))
    for i in range(len(V)):
        s, V[i] = W.random_direction(np.uint64(s), d)
    assert np.allclose(np.linalg.norm(V, axis=1), 1.0)
    assert np.all(np.abs(V.mean(axis=0)) < 0.02)
    assert np.allclose(V.T @ V / len(V), np.eye(d) / d, atol=0.02)


def test_green_over_poisson_matches_closed_forms():
    assert W.green_over_poisson(0.5, 1.0, 1.0, 2) == pytest.approx(0.5 * math.log(2))
    assert W.green_over_poisson(0.5, 0.5, 1.0, 3) == pytest.approx(0.5 * 0.5 / 0.5)
    assert reflectance(2.0, 0.5, 1.0, 1.0, 3) == pytest.approx(1 - 2 * 0.25)


def test_config_validation_and_defaults():
    sc = bundled("unit_circle")
    c = WalkConfig().resolved(sc)
    assert c.epsilon_shell == 1e-3 and c.r_min == 5e-4 and c.query_tol == 1e-4
    for bad in (dict(n_walks=0), dict(max_steps=0), dict(threads=0), dict(seed=-1)):
        with pytest.raises(ValueError):
            WalkConfig(**bad)
    with pytest.raises(ValueError):
        WalkConfig(r_min=2e-3).resolved(sc)


def test_problem_needs_dirichlet_boundary():
    with pytest.raises(ValueError):
        PDEProblem(bundled("circle_robin"))
    assert PDEProblem(bundled("annulus_robin")).mode == "robin"
    assert PDEProblem(bundled("annulus_neumann")).mode == "neumann"
    assert PDEProblem(bundled("unit_circle")).mode == "dirichlet"


def test_start_point_checks():
    p = PDEProblem(bundled("unit_circle"))
    with pytest.raises(ValueError, match="outside"):
        estimate(p, (2.0, 0.0), WalkConfig(n_walks=2))
    with pytest.raises(ValueError, match="2D"):
        estimate(p, (0.0, 0.0, 0.0), WalkConfig(n_walks=2))


def test_harmonic_data_on_disk():
    p = PDEProblem(bundled("unit_circle"))
    st = estimate(p, (0.3, 0.4), WalkConfig(n_walks=2000, seed=1))
    assert abs(st.mean - 0.3) <= 4 * st.std_error
    assert st.truncated_walks == 0 and st.reflections == 0
    assert st.std_error == pytest.approx(st.as_dict()["std_error"])


def test_neumann_constant_has_zero_variance():
    p = PDEProblem(bundled("annulus_neumann"))
    st = estimate(p, (0.0, 0.75), WalkConfig(n_walks=50, seed=3))
    assert st.mean == 0.7 and st.std_error == 0.0
    assert st.reflections > 0 and st.clipped_reflectance == 0


def test_estimates_are_bit_identical_across_runs_and_threads():
    p = PDEProblem(bundled("unit_circle"))
    a = estimate(p, (0.1, -0.2), WalkConfig(n_walks=300, seed=11))
    b = estimate(p, (0.1, -0.2), WalkConfig(n_walks=300, seed=11))
    c = estimate(p, (0.1, -0.2), WalkConfig(n_walks=300, seed=11, threads=4))
    assert a.mean == b.mean == c.mean
    assert a.std_error == b.std_error == c.std_error
    d = estimate(p, (0.1, -0.2), WalkConfig(n_walks=300, seed=12))
    assert d.mean != a.mean


def test_single_walk_reproduces_its_batch_entry():
    p = PDEProblem(bundled("unit_circle"))
    cfg = WalkConfig(n_walks=5, seed=4)
    vals = [walk_once(p, (0.2, 0.2), cfg, i)[0] for i in range(5)]
    st = estimate(p, (0.2, 0.2), cfg)
    assert st.mean == pytest.approx(np.sum(vals) / 5, abs=0)


def test_truncation_is_reported():
    p = PDEProblem(bundled("unit_circle"))
    st = estimate(p, (0.0, 0.0), WalkConfig(n_walks=200, seed=2, max_steps=10))
    assert 0 < st.truncated_walks < 200
    assert st.truncated_fraction == st.truncated_walks / 200
    with pytest.raises(WalkError):
        estimate(p, (0.0, 0.0), WalkConfig(n_walks=20, seed=2, max_steps=1))


def test_grid_estimate_masks_exterior_nodes():
    p = PDEProblem(bundled("unit_circle"))
    g = grid_estimate(p, (5, 5), WalkConfig(n_walks=100, seed=5))
    assert g.mean.shape == (5, 5)
    assert np.isnan(g.mean[0, 0]) and not g.inside[0, 0]
    assert g.inside[2, 2] and abs(g.mean[2, 2]) <= 4 * g.std_error[2, 2]
    assert g.points().shape == (25, 2)
    again = grid_estimate(p, (5, 5), WalkConfig(n_walks=100, seed=5, threads=3))
    assert np.array_equal(g.mean, again.mean, equal_nan=True)
    with pytest.raises(ValueError):
        grid_estimate(p, (5,), WalkConfig(n_walks=10))


def test_robin_walks_reflect_and_stay_in_range():
    p = PDEProblem(bundled("annulus_robin"))
    st = estimate(p, (0.75, 0.0), WalkConfig(n_walks=100, seed=6))
    assert st.reflections > 0
    assert 0.0 <= st.mean <= 1.0
