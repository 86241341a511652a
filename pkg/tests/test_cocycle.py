import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oselab.cocycle import (ALPHA_FLOOR, ConjugatorField, cocycle, constant_generator, evaluate_generator,
                            growth_rates, kuratowski_estimate, operator_metric, propagated_holder_constant,
                            rotation_conjugated_generator, scenario_growth_constant,
                            truncated_diagonal_generator, verify_cocycle_holder)
from oselab.dynamics import evaluate_map, nearby_lattice, sample_points
from oselab.errors import DegeneratePair, NegativeIterateOfNonInvertible, SingularGenerator
from oselab.norms import operator_norm

CAT_RATE = np.log((3 + np.sqrt(5)) / 2)


def _conj(gen, system, x):
    coords = system.field_coords(np.asarray(x.lattice))
    return gen.conjugator.matrix(coords)


def test_constant_generator_ignores_the_point(cat):
    M = np.array([[2.0, 1.0], [1.0, 1.0]])
    gen = constant_generator(M)
    for x in sample_points(cat, "iid_uniform", 3, 0).points:
        assert np.array_equal(evaluate_generator(gen, cat, x), M)


def test_coboundary_generator_is_the_three_factor_product(cat, cat_coboundary):
    x = cat.point([0.21, 0.68])
    fx = evaluate_map(cat, x, 1)
    oracle = _conj(cat_coboundary, cat, fx) @ np.diag(cat_coboundary.diagonal) @ np.linalg.inv(
        _conj(cat_coboundary, cat, x))
    assert np.allclose(evaluate_generator(cat_coboundary, cat, x), oracle, atol=1e-13)


def test_zero_angle_rotation_conjugation_is_the_diagonal(cat):
    field = ConjugatorField(3, 2, 0.5, 0.0, kind="rotation")
    gen = rotation_conjugated_generator(field, [2.0, 1.0, 0.5])
    A = evaluate_generator(gen, cat, cat.point([0.4, 0.1]))
    assert np.allclose(A, np.diag([2.0, 1.0, 0.5]), atol=1e-15)


def test_singular_constant_generator_is_rejected(cat):
    with pytest.raises(SingularGenerator):
        evaluate_generator(constant_generator(np.array([[1.0, 2.0], [2.0, 4.0]])), cat, cat.point([0.1, 0.2]))


def test_cocycle_basics(cat):
    M = np.array([[2.0, 1.0], [1.0, 1.0]])
    gen = constant_generator(M)
    x = cat.point([0.3, 0.7])
    assert np.array_equal(cocycle(gen, cat, x, 0), np.eye(2))
    assert np.allclose(cocycle(gen, cat, x, 3), np.linalg.matrix_power(M, 3))
    assert np.allclose(cocycle(gen, cat, x, -2), np.linalg.matrix_power(np.linalg.inv(M), 2))


@pytest.mark.parametrize("n", range(1, 9))
def test_coboundary_cocycle_telescopes(cat, cat_coboundary, n):
    x = cat.point([0.11, 0.52])
    fnx = evaluate_map(cat, x, n)
    D = np.diag(cat_coboundary.diagonal ** n)
    oracle = _conj(cat_coboundary, cat, fnx) @ D @ np.linalg.inv(_conj(cat_coboundary, cat, x))
    assert np.allclose(cocycle(cat_coboundary, cat, x, n), oracle, rtol=1e-12, atol=1e-12 * np.abs(oracle).max())


def test_backward_cocycle_needs_an_invertible_base(doubling, doubling_coboundary):
    with pytest.raises(NegativeIterateOfNonInvertible):
        cocycle(doubling_coboundary, doubling, doubling.point([0.3]), -1)


@given(st.integers(0, 2 ** 40), st.integers(-16, 16), st.integers(-16, 16))
def test_cocycle_law_on_the_cat_coboundary(seed, n, k):
    from oselab.cocycle import ConjugatorField, coboundary_generator
    from oselab.dynamics import CAT_MAP, toral_automorphism
    T = toral_automorphism(CAT_MAP)
    gen = coboundary_generator(ConjugatorField(3, 2, 0.5, 0.3, seed=7), [np.e, 1.0, 1 / np.e])
    x = sample_points(T, "iid_uniform", 1, seed).points[0]
    lhs = cocycle(gen, T, x, n + k)
    outer, inner = cocycle(gen, T, evaluate_map(T, x, k), n), cocycle(gen, T, x, k)
    # rounding in a product scales with the sizes of its factors
    scale = max(1.0, np.linalg.norm(outer, 2) * np.linalg.norm(inner, 2))
    assert np.max(np.abs(lhs - outer @ inner)) <= 1e-10 * scale


def test_operator_metric_examples():
    assert operator_metric(np.eye(3), np.eye(3)) == 0.0
    assert operator_metric(np.array([[2.0]]), np.array([[1.0]])) == pytest.approx(1.5)
    rng = np.random.default_rng(3)
    A = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    B = rng.standard_normal((4, 4)) + 4 * np.eye(4)
    for kind in ("l1", "l2", "linf"):
        direct = operator_norm(A - B, kind) + operator_norm(np.linalg.inv(A) - np.linalg.inv(B), kind)
        assert operator_metric(A, B, kind) == pytest.approx(direct, rel=1e-13)
        assert operator_metric(A, B, kind) == pytest.approx(operator_metric(B, A, kind), rel=1e-13)


def test_kuratowski_examples():
    T = np.random.default_rng(0).standard_normal((4, 4))
    assert kuratowski_estimate(T, 4) == 0.0
    gen = truncated_diagonal_generator(6, decay_rate=0.5, lead=2.0, block_size=2)
    assert kuratowski_estimate(gen.matrix, 2) == pytest.approx(0.5, abs=1e-15)
    assert kuratowski_estimate(np.diag([3.0, 3.0, 3.0]), 1) == pytest.approx(3.0)


@given(arrays(np.float64, (5, 5), elements=st.floats(-3, 3)), st.integers(1, 4))
def test_kuratowski_surrogate_is_below_the_norm(T, b):
    assert kuratowski_estimate(T, b) <= operator_norm(T) + 1e-12


@given(arrays(np.float64, (4, 4), elements=st.floats(-3, 3)),
       arrays(np.float64, (4, 4), elements=st.floats(-3, 3)),
       st.sampled_from(["l1", "l2", "linf"]))
def test_operator_norm_is_submultiplicative(T, S, kind):
    assert operator_norm(T @ S, kind) <= operator_norm(T, kind) * operator_norm(S, kind) * (1 + 1e-10) + 1e-12


def test_growth_rates_of_exact_powers(cat):
    gen = constant_generator(np.diag([np.e, 1 / np.e]))
    x = cat.point([0.2, 0.3])
    for N in (8, 100, 1000):
        g = growth_rates(gen, cat, x, N)
        assert g.lambda_hat == pytest.approx(1.0, abs=1e-9)
        assert g.alpha_hat == ALPHA_FLOOR


def test_growth_rate_of_the_cat_cocycle(cat):
    gen = constant_generator(np.array([[2.0, 1.0], [1.0, 1.0]]))
    g = growth_rates(gen, cat, cat.point([0.2, 0.3]), 4096)
    assert abs(g.lambda_hat - CAT_RATE) <= 1e-3


def test_growth_rates_of_the_compact_tail():
    from oselab.dynamics import circle_rotation
    rot = circle_rotation(0.4)
    gen = truncated_diagonal_generator(6, decay_rate=0.5, lead=2.0, block_size=2)
    g = growth_rates(gen, rot, rot.point([0.1]), 64)
    assert g.lambda_hat == pytest.approx(np.log(2.0), abs=1e-12)
    assert g.alpha_hat == pytest.approx(np.log(0.5), abs=1e-12)
    assert g.alpha_hat <= g.lambda_hat + 1e-9


def test_propagated_constant_examples():
    assert propagated_holder_constant(0, 1, 1, 1) == 1
    assert propagated_holder_constant(1, 2, 1, 1) == 3


@given(st.floats(0, 10), st.floats(0.1, 10), st.floats(1, 4), st.floats(0.05, 1))
def test_propagated_constant_certifies_the_recursion(a1, supA, L, nu):
    a = propagated_holder_constant(a1, supA, L, nu)
    for n in range(51):
        assert a >= a1 * (supA * L ** nu / a) ** n + supA - 1e-12 * a


def test_cocycle_holder_rejects_coincident_points(cat, cat_coboundary):
    x = cat.point([0.5, 0.5])
    with pytest.raises(DegeneratePair):
        verify_cocycle_holder(cat_coboundary, cat, x, x, 4, 10.0)


def test_constant_cocycle_has_zero_holder_ratios(cat):
    gen = constant_generator(np.array([[2.0, 1.0], [1.0, 1.0]]))
    rep = verify_cocycle_holder(gen, cat, cat.point([0.1, 0.2]), cat.point([0.1, 0.2001]), 10, 3.0)
    assert rep.passed and rep.worst == 0.0


def test_rotation_conjugated_holder_propagation(cat):
    gen = rotation_conjugated_generator(ConjugatorField(3, 2, 0.5, 0.4, kind="rotation", seed=3), [2.0, 1.0, 0.5])
    a = scenario_growth_constant(gen, cat)
    rng = np.random.default_rng(0)
    for x in sample_points(cat, "iid_uniform", 5, 9).points:
        y = cat.from_lattice(nearby_lattice(cat, np.asarray(x.lattice), 1e-5, rng))
        rep = verify_cocycle_holder(gen, cat, x, y, 20, a)
        assert rep.passed
        assert set(rep.ratios) == set(range(-20, 21))
