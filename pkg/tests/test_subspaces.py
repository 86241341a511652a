import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oselab.errors import AmbientMismatch, NormMismatch, SeriesDivergence
from oselab.norms import operator_norm, vector_norm
from oselab.subspaces import (DirectSum, Subspace, complementation_persists, deviation, gap,
                              graph_operator, hausdorff_bracket, hausdorff_distance, neumann_inverse,
                              neumann_series, projection, projections, sphere_grid)


def line(theta, norm="l2"):
    return Subspace.span(np.array([np.cos(theta), np.sin(theta)]), norm)


def random_subspace(rng, d, k, norm="l2"):
    return Subspace.span(rng.standard_normal((d, k)), norm)


def test_self_distances_vanish():
    E = random_subspace(np.random.default_rng(0), 4, 2)
    assert deviation(E, E) == pytest.approx(0, abs=1e-14)
    assert gap(E, E) == pytest.approx(0, abs=1e-14)
    assert hausdorff_distance(E, E) == pytest.approx(0, abs=1e-7)


@pytest.mark.parametrize("theta", [0.0, 1e-6, 0.3, 1.0, np.pi / 2])
def test_planar_line_oracles(theta):
    E, F = line(0.0), line(theta)
    assert deviation(E, F) == pytest.approx(np.sin(theta), abs=1e-12)
    assert hausdorff_distance(E, F) == pytest.approx(2 * np.sin(theta / 2), abs=1e-12)


def test_perpendicular_lines_have_unit_gap():
    assert gap(line(0.0), line(np.pi / 2)) == pytest.approx(1.0)


def test_mismatched_pairs_are_rejected():
    with pytest.raises(NormMismatch):
        deviation(line(0.0), line(0.1, "l1"))
    with pytest.raises(AmbientMismatch):
        deviation(line(0.0), Subspace.span(np.ones(3)))


def test_deviation_matches_brute_force_sphere_enumeration():
    rng = np.random.default_rng(5)
    E, F = random_subspace(rng, 3, 2), random_subspace(rng, 3, 2)
    W, eta = sphere_grid(E.basis, "l2", target=10_000)
    P = F.projector()
    brute = float(np.max(np.linalg.norm(W - W @ P, axis=1)))
    assert brute <= deviation(E, F) + 1e-12
    assert deviation(E, F) <= brute + eta


@given(st.integers(0, 2 ** 32), st.integers(2, 5))
def test_gap_is_symmetric(seed, d):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, d))
    E, F = random_subspace(rng, d, k), random_subspace(rng, d, k)
    assert gap(E, F) == gap(F, E)


@given(st.integers(0, 2 ** 32), st.integers(2, 6))
def test_gap_sandwich_under_l2(seed, d):
    rng = np.random.default_rng(seed)
    E = random_subspace(rng, d, int(rng.integers(1, d)))
    F = random_subspace(rng, d, int(rng.integers(1, d)))
    g, h = gap(E, F), hausdorff_distance(E, F)
    assert g <= h + 1e-12
    assert h <= 2 * g + 1e-12


@given(st.integers(0, 2 ** 32), st.integers(2, 4), st.sampled_from(["l1", "linf"]))
def test_gap_sandwich_under_polyhedral_norms(seed, d, kind):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(1, d))
    E, F = random_subspace(rng, d, k, kind), random_subspace(rng, d, k, kind)
    g = gap(E, F)
    b = hausdorff_bracket(E, F)
    assert b.lower <= b.value <= b.upper
    assert g <= b.upper + 1e-12
    assert b.lower <= 2 * g + 1e-12


def test_polyhedral_deviation_of_lines_is_exact():
    # unit l1 vector (1, 0); nearest l1 point on the diagonal is at distance 1
    E = Subspace.span(np.array([1.0, 0.0]), "l1")
    F = Subspace.span(np.array([1.0, 1.0]), "l1")
    assert deviation(E, F) == pytest.approx(1.0, abs=1e-12)
    G = Subspace.span(np.array([1.0, 0.0]), "linf")
    H = Subspace.span(np.array([1.0, 1.0]), "linf")
    assert deviation(G, H) == pytest.approx(0.5, abs=1e-12)


def test_coordinate_projections():
    parts = [Subspace.span(np.eye(3)[:, [j]]) for j in range(3)]
    split = DirectSum.of(parts)
    for j in range(3):
        expected = np.zeros((3, 3))
        expected[j, j] = 1.0
        assert np.allclose(projection(split, j), expected)


@given(st.integers(0, 2 ** 32), st.integers(2, 6))
def test_projections_are_complementary(seed, d):
    rng = np.random.default_rng(seed)
    cut = int(rng.integers(1, d))
    B = rng.standard_normal((d, d)) + 2 * np.eye(d)
    split = DirectSum.of([Subspace.span(B[:, :cut]), Subspace.span(B[:, cut:])])
    P = projections(split)
    assert np.allclose(P[0] @ P[1], 0, atol=1e-9 * max(1, np.abs(P[0]).max() ** 2))
    assert np.allclose(P[0] + P[1], np.eye(d), atol=1e-9 * max(1, np.abs(P[0]).max()))


def test_orthogonal_projections_have_unit_norm():
    Q, _ = np.linalg.qr(np.random.default_rng(2).standard_normal((5, 5)))
    split = DirectSum.of([Subspace.span(Q[:, :2]), Subspace.span(Q[:, 2:])])
    for p in projections(split):
        assert operator_norm(p) == pytest.approx(1.0, abs=1e-12)


def test_complementation_persistence_examples():
    E, F = line(0.0), line(np.pi / 2)
    same = complementation_persists(E, E, F)
    assert same.hypothesis and same.conclusion
    tilt = complementation_persists(E, line(1e-3), F)
    assert tilt.hypothesis and tilt.conclusion
    bad = complementation_persists(E, F, F)
    assert not bad.hypothesis and not bad.conclusion and not bad.falsified
    assert bad.distance >= 1.0 >= bad.threshold


def test_graph_operator_of_identical_spaces_vanishes():
    E, F = line(0.0), line(np.pi / 2)
    L = graph_operator(E, F, E)
    assert L.norm_value == pytest.approx(0.0, abs=1e-15)


@pytest.mark.parametrize("t", [1e-8, 0.01, 0.3, -0.7])
def test_planar_graph_operator_is_the_slope(t):
    E, F = Subspace.span(np.array([1.0, 0.0])), Subspace.span(np.array([0.0, 1.0]))
    Y = Subspace.span(np.array([1.0, t]))
    L = graph_operator(E, F, Y)
    assert L.matrix[0, 0] * np.sign(F.basis[1, 0] * E.basis[0, 0]) == pytest.approx(t, rel=1e-12)
    assert L.norm_value == pytest.approx(abs(t), rel=1e-12)
    assert L.graph_residual <= 1e-9


def test_graph_round_trip_in_higher_dimension():
    rng = np.random.default_rng(7)
    P, M = random_subspace(rng, 5, 2), random_subspace(rng, 5, 3)
    Y = Subspace.span(P.basis + 0.05 * M.basis @ rng.standard_normal((3, 2)))
    L = graph_operator(P, M, Y)
    graph = Subspace.span(P.basis + L.apply(P.basis))
    assert hausdorff_distance(graph, Y) <= 1e-9


def test_neumann_examples():
    assert np.allclose(neumann_series(np.zeros((2, 2))), 0)
    assert neumann_series(np.array([[0.5]]))[0, 0] == pytest.approx(-1 / 3, abs=1e-15)
    with pytest.raises(SeriesDivergence):
        neumann_series(np.array([[1.5]]))


def test_neumann_inverse_composes_to_identity():
    rng = np.random.default_rng(11)
    Q, _ = np.linalg.qr(rng.standard_normal((4, 4)))
    P, M = Subspace.span(Q[:, :2]), Subspace.span(Q[:, 2:])
    G = rng.standard_normal((2, 2))
    G *= 0.4 / np.linalg.norm(G, 2)
    Y = Subspace.span(P.basis + M.basis @ G)
    L = graph_operator(P, M, Y)
    assert L.norm_value == pytest.approx(0.4, rel=1e-12)
    inv = neumann_inverse(L)
    Phi = np.eye(4) + L.ambient
    assert np.max(np.abs(Phi @ inv.phi_inverse - np.eye(4))) <= 1e-10
    assert inv.composition_residual <= 1e-10 and inv.bound_holds
    assert inv.operator.norm_value <= 0.4 / 0.6 + 1e-12


def test_sphere_grid_covers_the_sphere():
    rng = np.random.default_rng(3)
    Q = random_subspace(rng, 3, 2).basis
    for kind in ("l1", "l2", "linf"):
        W, eta = sphere_grid(Q, kind, target=2000)
        assert np.allclose(vector_norm(W, kind), 1.0)
        probes = rng.standard_normal((200, 2)) @ Q.T
        probes /= vector_norm(probes, kind)[:, None]
        near = np.min(vector_norm(probes[:, None, :] - W[None], kind), axis=1)
        assert np.all(near <= eta + 1e-12)
