import math

import numpy as np
import pytest

from conftest import SCENES
from ivwost.interval import Box
from ivwost.scene import F_D, F_R, MU, SceneError, load_scene, parse_scene, surface_samples

HEADER = "dimension = 2\ndomain = [[-2, 2], [-2, 2]]\nepsilon_shell = 1e-3\n"


def test_corpus_loads_and_validates(corpus):
    assert set(corpus) == set(SCENES)
    for name, sc in corpus.items():
        assert sc.f_D is not None or sc.f_R is not None, name
        sc.validate()


def test_scene_properties(corpus):
    ar = corpus["annulus_robin"]
    assert ar.is_robin and not ar.is_neumann
    assert corpus["annulus_neumann"].is_neumann
    assert ar.tol == pytest.approx(1e-4)
    assert ar.reflecting_side == 1 and ar.dirichlet_side == -1
    assert corpus["two_circles"].dirichlet_side == 1
    assert len(ar.digest) == 64


def test_inside_mask(corpus):
    ar = corpus["annulus_robin"]
    pts = np.array([[0.75, 0.0], [0.25, 0.0], [1.1, 0.0], [0.9995, 0.0]])
    assert ar.inside(pts).tolist() == [True, False, False, True]
    assert ar.inside(pts, margin=1e-3).tolist() == [True, False, False, False]


def test_program_slot_order(corpus):
    from ivwost._kernels import tape as T
    ar = corpus["annulus_robin"]
    p = np.array([0.75, 0.0])
    assert T.eval_point(ar.program, F_D, p) == pytest.approx(0.75 ** 2 - 1)
    assert T.eval_point(ar.program, F_R, p) == pytest.approx(0.75 ** 2 - 0.25)
    assert T.eval_point(ar.program, MU, p) == 1.0


def test_field_helpers(corpus):
    f = corpus["unit_circle"].f_D
    v, g = f.gradient([0.5, 0.0])
    assert v == pytest.approx(-0.75) and np.allclose(g, [1.0, 0.0])
    s = f.project([2.0, 0.0])
    assert s is not None and np.allclose(s.position, [1, 0]) and np.allclose(s.unit_normal, [1, 0])
    iv = f.eval_interval(Box((0.5, 0.0), (1.0, 0.5)))
    assert iv.lo <= -0.75 and iv.hi >= 0.25
    samples = surface_samples(f, corpus["unit_circle"].domain, 50, np.random.default_rng(0))
    assert samples and all(abs(np.linalg.norm(s.position) - 1) < 1e-10 for s in samples)


def test_harmonic_scene_records_poles_outside_the_domain(corpus):
    sc = corpus["harmonic_rbf"]
    assert len(sc.harmonic_poles) == 3
    assert not any(sc.domain.contains(p) for p in sc.harmonic_poles)


@pytest.mark.parametrize("body, line, fragment", [
    ("dirichlet = circle([0, 0], 1)\ndirichlet = circle([0, 0], 2)\n", 5, "assigned twice"),
    ("dirichlet = blob([0, 0], 1)\n", 4, "unknown function"),
    ("dirichlet = circle([0, 0, 0], 1)\n", 4, "2-vector"),
    ("dirichlet = circle([0, 0], 1) + w\n", 4, "undefined name"),
    ("dirichlet = z\n", 4, "does not exist in 2D"),
    ("dirichlet = circle([0, 0], 1)\nreflecting_inside = 'up'\n", 5, "'negative' or 'positive'"),
    ("dirichlet = circle([0, 0], 1)\nfor i in x: pass\n", 5, "single 'name = expression'"),
    ("dirichlet = circle([0, 0], 1) +\n", 4, "syntax error"),
    ("dirichlet = circle([0, 0], 1) / 0\n", 4, "division by the constant zero"),
    ("dirichlet = circle([0, 0], 1)\nreflecting = circle([0, 0], 0.5)\nrobin = -1\n", 6, "Robin"),
    ("dirichlet = circle([0, 0], 1)\nreflecting = circle([0, 0], 0.5)\nrobin = x\n", 6, "Robin"),
    ("pi = 3\n", 4, "reserved"),
])
def test_parse_errors_carry_line_numbers(body, line, fragment):
    with pytest.raises(SceneError) as info:
        parse_scene(HEADER + body)
    assert info.value.line == line
    assert fragment in str(info.value)
    assert str(info.value).startswith(f"line {line}:")


def test_geometry_before_dimension_is_rejected():
    with pytest.raises(SceneError, match="dimension must be assigned"):
        parse_scene("a = circle([0, 0], 1)\ndimension = 2\n")


@pytest.mark.parametrize("text, fragment", [
    ("dimension = 2\nepsilon_shell = 1e-3\ndirichlet = circle([0, 0], 1)\n", "domain"),
    ("dimension = 4\n", "dimension must be 2 or 3"),
    (HEADER.replace("1e-3", "0") + "dirichlet = circle([0, 0], 1)\n", "epsilon_shell"),
    (HEADER, "dirichlet or a reflecting"),
    (HEADER + "dirichlet = circle([0, 0], 3)\n", "zero set"),
    (HEADER + "dirichlet = x * x + y * y\n", "regularity"),
    (HEADER + "dirichlet = (x * x + y * y - 1) * (x * x + y * y - 1)\n", "regularity"),
    ("dimension = 2\ndomain = [[-2, 2], [-2, 2]]\nepsilon_shell = 1e-3\n"
     "dirichlet = rbf([[0.5, 0]], [1.0], kernel='harmonic')\n", "pole"),
])
def test_invalid_scenes(text, fragment):
    with pytest.raises(SceneError, match=fragment):
        parse_scene(text)


def test_language_features():
    sc = parse_scene(HEADER + "c = [0.1, -0.2]\nr = 0.5 * 2\n"
                     "a = circle(center=c, radius=r)\nb = circle([c[0] + 0.8, c[1]], 0.6)\n"
                     "dirichlet = smooth_union(a, b, k=0.1)\ndirichlet_data = exp(x) * cos_free\n"
                     .replace(" * cos_free", " + abs(y) - pi + e"))
    v = sc.dirichlet_data.eval_value([0.0, -1.0])
    assert v == pytest.approx(1 + 1 - math.pi + math.e)


def test_load_from_file(tmp_path):
    p = tmp_path / "s.scene"
    p.write_text(HEADER + "dirichlet = circle([0, 0], 1)\n")
    sc = load_scene(p)
    assert sc.path == str(p) and sc.f_D is not None
