import numpy as np
import pytest

from oselab.cocycle import ConjugatorField, constant_generator, rotation_conjugated_generator
from oselab.dynamics import circle_rotation, evaluate_map, sample_points
from oselab.errors import NegativeIterateOfNonInvertible
from oselab.oseledets import (LyapunovSpectrum, block_cocycle, choose_complements, coboundary_oracle,
                              fast_slow, filtration, filtrations_at, group_exponents, lyapunov_spectrum,
                              operational_ell, oseledets_splitting, splittings_at)
from oselab.subspaces import Subspace, deviation, hausdorff_distance, span_sum

CAT_RATE = np.log((3 + np.sqrt(5)) / 2)


def coordinate(d, cols):
    return Subspace.span(np.eye(d)[:, cols])


def test_grouping_merges_close_exponents():
    ex, mult = group_exponents([1.0, 0.999, 0.0, -1.0], 0.01)
    assert mult == (2, 1, 1)
    assert ex[0] == pytest.approx(0.9995)


def test_constant_diagonal_spectrum_is_exact(cat, diag_constant):
    sp = lyapunov_spectrum(diag_constant, cat, cat.point([0.3, 0.6]), 4096)
    assert sp.multiplicities == (1, 1, 1)
    assert np.max(np.abs(np.array(sp.exponents) - [2.0, 0.0, -1.0])) <= 1e-12


def test_cat_constant_spectrum(cat):
    gen = constant_generator(np.array([[2.0, 1.0], [1.0, 1.0]]))
    sp = lyapunov_spectrum(gen, cat, cat.point([0.1, 0.2]), 4096)
    assert np.max(np.abs(np.array(sp.exponents) - [CAT_RATE, -CAT_RATE])) <= 1e-3


def test_coboundary_spectrum_is_that_of_the_diagonal(cat_spectrum):
    assert np.max(np.abs(np.array(cat_spectrum.exponents) - [1.0, 0.0, -1.0])) <= 2e-3
    assert cat_spectrum.k == 3 and cat_spectrum.slow_dim == 0


def test_spectrum_round_trips_through_json(cat_spectrum):
    assert LyapunovSpectrum.from_json(cat_spectrum.to_json()) == cat_spectrum


def test_constant_diagonal_splitting_is_coordinate(cat, diag_constant):
    s = oseledets_splitting(diag_constant, cat, cat.point([0.3, 0.6]), 256)
    for j, part in enumerate(s.parts.parts):
        assert hausdorff_distance(part, coordinate(3, [j])) <= 1e-12


def test_coboundary_splitting_matches_the_oracle(cat, cat_coboundary, cat_spectrum):
    pts = sample_points(cat, "iid_uniform", 12, 21)
    for s in splittings_at(cat_coboundary, cat, pts.lattice, cat_spectrum, 1024):
        ref, _ = coboundary_oracle(cat_coboundary.conjugator, cat_coboundary.diagonal, cat, s.at)
        for E, O in zip(s.parts.parts, ref.parts.parts):
            assert hausdorff_distance(E, O) <= 1e-6
        assert max(s.certificates["equivariance"]) <= 1e-6


def test_splitting_is_equivariant_by_recomputation(cat, cat_coboundary, cat_spectrum):
    from oselab.cocycle import evaluate_generator
    x = cat.point([0.77, 0.12])
    here = oseledets_splitting(cat_coboundary, cat, x, 1024, cat_spectrum)
    there = oseledets_splitting(cat_coboundary, cat, evaluate_map(cat, x, 1), 1024, cat_spectrum)
    A = evaluate_generator(cat_coboundary, cat, x)
    for E, F in zip(here.parts.parts, there.parts.parts):
        assert hausdorff_distance(E.image(A), F) <= 1e-6


def test_fast_slow_dimensions(cat, cat_coboundary, cat_spectrum):
    s = oseledets_splitting(cat_coboundary, cat, cat.point([0.4, 0.9]), 512, cat_spectrum)
    E1 = s.parts.parts[0]
    plus, minus = fast_slow(s, 1)
    assert hausdorff_distance(plus, E1) <= 1e-12
    for i in (1, 2, 3):
        plus, minus = fast_slow(s, i)
        assert plus.dim == sum(cat_spectrum.multiplicities[:i])
        assert plus.dim + minus.dim == 3
    plus, minus = fast_slow(s, 3)
    assert plus.dim == 3 and minus.dim == 0


def test_diagonal_filtration_is_coordinate(cat):
    gen = constant_generator(np.diag([4.0, 2.0, 1.0]))
    f = filtration(gen, cat, cat.point([0.2, 0.2]), 256)
    assert hausdorff_distance(f.space(2), coordinate(3, [1, 2])) <= 1e-12
    assert hausdorff_distance(f.space(3), coordinate(3, [2])) <= 1e-12


def test_doubling_filtration_matches_the_oracle(doubling, doubling_coboundary, doubling_spectrum):
    pts = sample_points(doubling, "iid_uniform", 12, 8)
    for f in filtrations_at(doubling_coboundary, doubling, pts.lattice, doubling_spectrum, 1024):
        _, ref = coboundary_oracle(doubling_coboundary.conjugator, doubling_coboundary.diagonal, doubling, f.at)
        for i in (2, 3):
            assert hausdorff_distance(f.space(i), ref.space(i)) <= 1e-6
        assert max(f.certificates["invariance"]) <= 1e-6


def test_filtration_growth_certificate(doubling, doubling_coboundary, doubling_spectrum):
    f = filtration(doubling_coboundary, doubling, doubling.point([0.123]), 1024, doubling_spectrum)
    assert np.allclose(f.certificates["growth"], doubling_spectrum.exponents, atol=0.05)


def test_rotation_conjugated_filtration_has_constant_codims(doubling):
    gen = rotation_conjugated_generator(ConjugatorField(3, 1, 0.5, 0.3, kind="rotation", seed=1), [2.0, 1.0, 0.5])
    pts = sample_points(doubling, "iid_uniform", 6, 2)
    sp = lyapunov_spectrum(gen, doubling, pts.points[0], 2048)
    codims = {f.codims for f in filtrations_at(gen, doubling, pts.lattice, sp, 512)}
    assert len(codims) == 1


def test_splittings_need_an_invertible_base(doubling, doubling_coboundary, doubling_spectrum):
    with pytest.raises(NegativeIterateOfNonInvertible):
        splittings_at(doubling_coboundary, doubling, np.array([[5]]), doubling_spectrum, 64)


def test_complements_of_an_orthogonal_filtration(cat):
    gen = constant_generator(np.diag([4.0, 2.0, 1.0]))
    f = choose_complements(filtration(gen, cat, cat.point([0.2, 0.2]), 256))
    assert all(v == pytest.approx(1.0) for v in f.projection_norms["u"] if v)
    assert f.ell == pytest.approx(1.0)


def test_complements_fill_each_layer(doubling, doubling_coboundary, doubling_spectrum):
    pts = sample_points(doubling, "iid_uniform", 5, 9)
    fs = [choose_complements(f) for f in filtrations_at(doubling_coboundary, doubling, pts.lattice,
                                                          doubling_spectrum, 512)]
    ell = operational_ell(fs)
    for f in fs:
        assert f.ell <= ell
        for i, U in enumerate(f.complements, start=1):
            nxt = f.space(i + 1)
            layer = span_sum([nxt, U]) if nxt.dim else U
            assert layer.dim == f.space(i).dim
            assert deviation(layer, f.space(i)) <= 1e-10


def test_diagonal_blocks_do_not_couple(cat, diag_constant):
    for n in (1, 3, 8):
        b = block_cocycle(diag_constant, cat, cat.point([0.1, 0.3]), 2, n, 256)
        assert np.max(np.abs(b.C_n)) <= 1e-12
        assert b.identity_residual <= 1e-12


def test_one_step_blocks_rebuild_the_generator(doubling, doubling_coboundary, doubling_spectrum):
    b = block_cocycle(doubling_coboundary, doubling, doubling.point([0.31]), 2, 1, 512, doubling_spectrum)
    assert b.one_step_residual <= 1e-12
    assert b.identity_residual <= 1e-12


def test_block_recursion_for_an_upper_triangular_generator():
    rot = circle_rotation(0.3)
    rng = np.random.default_rng(4)
    M = np.triu(rng.uniform(-0.5, 0.5, (3, 3)), 1) + np.diag([3.0, 1.2, 0.4])
    gen = constant_generator(M)
    b = block_cocycle(gen, rot, rot.point([0.2]), 2, 5, 256)
    assert b.recursion_residual <= 1e-12
    assert np.allclose(b.C_n, b.C_direct, atol=1e-12 * np.abs(b.full).max())


def test_identity_conjugator_oracle_is_coordinate(cat):
    field = ConjugatorField(3, 2, 0.5, 0.0)
    split, filt = coboundary_oracle(field, [3.0, 1.0, 0.2], cat, cat.point([0.5, 0.5]))
    for j, part in enumerate(split.parts.parts):
        assert hausdorff_distance(part, coordinate(3, [j])) <= 1e-15
    assert hausdorff_distance(filt.space(2), coordinate(3, [1, 2])) <= 1e-15


def test_rotation_conjugator_oracle_rotates_the_first_axis(cat):
    field = ConjugatorField(2, 2, 0.5, 0.4, kind="rotation", seed=2, offset=0.3)
    x = cat.point([0.25, 0.6])
    split, _ = coboundary_oracle(field, [2.0, 0.5], cat, x)
    theta = float(field.angle(cat.field_coords(np.asarray(x.lattice))))
    expected = Subspace.span(np.array([np.cos(theta), np.sin(theta)]))
    assert hausdorff_distance(split.parts.parts[0], expected) <= 1e-14
