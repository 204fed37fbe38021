import math

import numpy as np
import pytest

from ivwost import expr as E
from ivwost._kernels import tape as T
from ivwost.interval import Box

x, y, z = E.coords(3)


def test_operator_overloads_build_expected_values():
    f = (x + 2) * (y - 1) / (z + 4) - 3 + (-x) ** 2
    p = np.array([[1.0, 2.0, 0.0]])
    assert E.eval_points(f, p)[0] == pytest.approx(3 * 1 / 4 - 3 + 1)


def test_common_subexpressions_share_one_tape_slot():
    r = E.sqr(x) + E.sqr(y)
    f = E.sqrt(r) + E.exp(r)
    ops, _, _, _ = E.compile_tape(f)
    g = E.sqrt(E.sqr(x) + E.sqr(y)) + E.exp(E.sqr(x) + E.sqr(y))
    assert len(E.compile_tape(g)[0]) == len(ops)


def test_primitives():
    c = E.circle([1, 0], 2)
    assert E.eval_points(c, np.array([[3.0, 0.0], [1.0, 0.0]])).tolist() == pytest.approx([0, -4])
    t = E.torus([0, 0, 0], 1.0, 0.25)
    assert E.eval_points(t, np.array([[1.25, 0.0, 0.0]]))[0] == pytest.approx(0, abs=1e-14)
    pl = E.plane([0, 0, 2], 1.0)
    assert E.eval_points(pl, np.array([[0, 0, 1.0]]))[0] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        E.torus([0, 0, 0], 0.5, 1.0)


def test_smooth_min_bounds_the_hard_minimum():
    a, b = E.circle([0, 0], 1), E.circle([1, 0], 1)
    P = np.random.default_rng(0).uniform(-2, 3, (500, 2))
    hard = E.eval_points(E.minimum(a, b), P)
    soft = E.eval_points(E.smooth_min(a, b, 0.3), P)
    assert np.all(soft <= hard + 1e-12)
    assert np.all(soft >= hard - 0.3)


def test_rbf_kernels():
    g = E.rbf([[0, 0]], [2.0], kernel="gaussian", scale=0.5, offset=-1)
    assert E.eval_points(g, np.array([[0.5, 0.0]]))[0] == pytest.approx(2 * math.exp(-1) - 1)
    h2 = E.rbf([[0, 0]], [1.0], kernel="harmonic")
    assert E.eval_points(h2, np.array([[math.e, 0.0]]))[0] == pytest.approx(1.0)
    h3 = E.rbf([[0, 0, 0]], [1.0], kernel="harmonic")
    assert E.eval_points(h3, np.array([[0, 0, 4.0]]))[0] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        E.rbf([[0, 0]], [1.0], kernel="cubic")


def test_compiled_point_evaluation_matches_numpy():
    f = E.smooth_min(E.circle([0, 0, 0], 1), E.torus([0.5, 0, 0], 0.8, 0.2), 0.2) + E.abs_(x - y) * E.log(z * z + 2)
    prog = E.build_program([f])
    P = np.random.default_rng(1).uniform(-1.5, 1.5, (200, 3))
    want, grad = E.grad_points(f, P)
    for p, w, gw in zip(P, want, grad):
        g = np.empty(3)
        assert T.eval_point(prog, 0, p) == pytest.approx(w, rel=1e-12, abs=1e-12)
        assert T.eval_point_grad(prog, 0, p, g) == pytest.approx(w, rel=1e-12, abs=1e-12)
        assert np.allclose(g, gw, rtol=1e-10, atol=1e-10)


def test_program_slots_and_missing_fields():
    prog = E.build_program([E.circle([0, 0], 1), None, E.const(2.0)])
    assert T.has_field(prog, 0) and not T.has_field(prog, 1) and T.has_field(prog, 2)
    assert T.eval_point(prog, 2, np.zeros(2)) == 2.0


def test_interval_and_dual_evaluation_enclose_samples():
    f = E.sqrt(E.sqr(x) + E.sqr(y) + 0.1) * E.exp(-y) - E.maximum(x, y)
    prog = E.build_program([f])
    rng = np.random.default_rng(2)
    for _ in range(50):
        c = rng.uniform(-1, 1, 2)
        h = rng.uniform(1e-3, 0.5)
        b = Box.around(c, h)
        lo, hi = b.arrays()
        fl, fh = T.eval_interval(prog, 0, lo, hi)
        glo, ghi = np.empty(2), np.empty(2)
        dl, dh = T.eval_dual(prog, 0, lo, hi, glo, ghi)
        assert dl <= fh and fl <= dh
        P = lo + (hi - lo) * rng.random((200, 2))
        v, g = E.grad_points(f, P)
        assert np.all((v >= fl) & (v <= fh))
        assert np.all((g >= glo - 1e-12) & (g <= ghi + 1e-12))


def test_projection_reaches_the_zero_set():
    prog = E.build_program([E.circle([0, 0], 1)])
    q, _, ok = T.project_to_surface(prog, 0, np.array([2.0, 1.0]), 20, 1e-12)
    assert ok
    assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)


def test_uses_only_and_constants():
    assert E.uses_only(x + y, 2) and not E.uses_only(x + z, 2)
    assert E.is_constant(E.const(2.0)) and not E.is_constant(E.const(2.0) * x)
    assert E.constant_value(E.const(2.0)) == 2.0
    with pytest.raises(ValueError):
        E.constant_value(x)
