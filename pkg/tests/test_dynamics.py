from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oselab.dynamics import (LATTICE_MODULUS, circle_rotation, doubling_map, evaluate_map, full_shift,
                             lipschitz_estimate, metric, nearby_lattice, sample_points)
from oselab.errors import DegeneratePair, NegativeIterateOfNonInvertible, SpaceMismatch

lattice = st.integers(min_value=0, max_value=LATTICE_MODULUS - 1)


def test_identity_rotation_fixes_points():
    rot = circle_rotation(0.0)
    x = rot.point([0.37])
    assert evaluate_map(rot, x, 5) == x


def test_cat_map_fixes_origin(cat):
    origin = cat.point([0.0, 0.0])
    assert evaluate_map(cat, origin, 3) == origin
    assert evaluate_map(cat, origin, -3) == origin


def test_doubling_map_in_exact_arithmetic(doubling):
    x = doubling.point([0.3])
    y = evaluate_map(doubling, x, 2)
    exact = (4 * Fraction(x.lattice[0], LATTICE_MODULUS)) % 1
    assert doubling.exact_coords(y)[0] == exact
    # snapping 0.3 to the lattice costs at most a few ulps; doubling twice scales it by 4
    snap = abs(Fraction(x.lattice[0], LATTICE_MODULUS) - Fraction(3, 10))
    assert abs(exact - Fraction(1, 5)) <= 4 * snap


def test_doubling_map_has_no_backward_iterates(doubling):
    with pytest.raises(NegativeIterateOfNonInvertible):
        evaluate_map(doubling, doubling.point([0.1]), -1)


def test_circle_metric_wraps_around():
    rot = circle_rotation(0.1)
    assert metric(rot, rot.point([0.1]), rot.point([0.9])) == pytest.approx(0.2, abs=1e-15)
    x = rot.point([0.25])
    assert metric(rot, x, x) == 0.0


def test_points_from_other_spaces_are_rejected(cat):
    with pytest.raises(SpaceMismatch):
        metric(cat, cat.point([0.1, 0.2]), doubling_map().point([0.1]))


@given(lattice, lattice, lattice, lattice, lattice, lattice)
def test_torus_metric_triangle_inequality(a1, a2, b1, b2, c1, c2):
    from oselab.dynamics import CAT_MAP, toral_automorphism
    T = toral_automorphism(CAT_MAP)
    x, y, z = T.from_lattice([a1, a2]), T.from_lattice([b1, b2]), T.from_lattice([c1, c2])
    assert metric(T, x, z) <= metric(T, x, y) + metric(T, y, z) + 1e-15


@given(lattice, lattice, st.integers(min_value=-40, max_value=40))
def test_cat_map_iterates_invert_exactly(a, b, n):
    from oselab.dynamics import CAT_MAP, toral_automorphism
    T = toral_automorphism(CAT_MAP)
    x = T.from_lattice([a, b])
    assert evaluate_map(T, evaluate_map(T, x, n), -n) == x


def test_sampling_is_reproducible(cat):
    a = sample_points(cat, "iid_uniform", 3, 0)
    b = sample_points(cat, "iid_uniform", 3, 0)
    assert len(a) == 3 and a.points == b.points
    assert sample_points(cat, "iid_uniform", 3, 1).points != a.points


def test_birkhoff_sampling_follows_the_orbit(cat):
    start = cat.point([0.1, 0.2])
    s = sample_points(cat, "orbit_birkhoff", 4, 0, start=start)
    assert s.points == tuple(evaluate_map(cat, start, n) for n in range(4))


def test_lipschitz_of_rotation_is_one():
    rot = circle_rotation(0.3)
    pts = sample_points(rot, "iid_uniform", 20, 2).points
    pairs = list(zip(pts[:10], pts[10:]))
    assert lipschitz_estimate(rot, pairs) == pytest.approx((1.0, 1.0))


def test_lipschitz_of_cat_map_reaches_the_spectral_radius(cat):
    w, V = np.linalg.eigh(np.array([[2.0, 1.0], [1.0, 1.0]]))
    top = V[:, np.argmax(w)]
    x = cat.point([0.3, 0.4])
    y = cat.point(np.array([0.3, 0.4]) + 1e-7 * top)
    fwd, bwd = lipschitz_estimate(cat, [(x, y)])
    assert fwd >= (3 + np.sqrt(5)) / 2 - 1e-6
    assert bwd >= 1.0


def test_lipschitz_of_doubling_map(doubling):
    rng = np.random.default_rng(0)
    pts = sample_points(doubling, "iid_uniform", 10, 4)
    pairs = [(p, doubling.from_lattice(nearby_lattice(doubling, np.asarray(p.lattice), 1e-6, rng)))
             for p in pts.points]
    fwd, bwd = lipschitz_estimate(doubling, pairs)
    assert fwd >= 2 - 1e-6 and bwd is None


def test_lipschitz_rejects_repeated_points(cat):
    x = cat.point([0.1, 0.1])
    with pytest.raises(DegeneratePair):
        lipschitz_estimate(cat, [(x, x)])


def test_nearby_lattice_hits_the_requested_distance(cat):
    rng = np.random.default_rng(1)
    x = cat.point([0.5, 0.5])
    for d in (1e-12, 1e-6, 1e-2):
        y = cat.from_lattice(nearby_lattice(cat, np.asarray(x.lattice), d, rng))
        assert metric(cat, x, y) == pytest.approx(d, rel=1e-3)


def test_full_shift_steps_left():
    sh = full_shift(2, 8)
    x = sh.point([1, 0, 1, 1, 0, 0, 1, 0])
    y = evaluate_map(sh, x, 1)
    assert y.lattice[:7] == x.lattice[1:]
