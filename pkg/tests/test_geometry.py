import math
import pickle

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tdoaspace.errors import ValidationError
from tdoaspace.geometry import (GroupKind, PairIndex, SensorArray, TdoaSet, TripleClass, TripleGroup,
                                aligned_distance, classify_triple, hexagon_facets, mean_tdoa_error,
                                relation_space_dimension, simplified_distance, strip_distance_general,
                                tdoa_map, tdoa_vector, theta1_interval, theta2_membership,
                                triangle_facets, zsc_plane_distance, zsc_residuals)
from tdoaspace.simharness import sample_source
from tdoaspace.stattests import CovarianceModel

SIGMA = 0.007
ISO2 = SIGMA ** 2 * np.eye(2)


# Arrays and pairs

def test_pair_order_and_count():
    array = SensorArray([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    assert array.n == 3
    assert array.q == 6
    assert [tuple(p) for p in array.pairs()] == [(1, 0), (2, 0), (3, 0), (2, 1), (3, 1), (3, 2)]
    assert array.pair_position(PairIndex(2, 1)) == 3


def test_pair_index_rejects_bad_pairs():
    with pytest.raises(ValidationError):
        PairIndex.of(0, 1)
    with pytest.raises(ValidationError):
        PairIndex.of(2, 2)
    assert PairIndex.oriented(0, 3) == (PairIndex(3, 0), -1)


def test_array_validation():
    with pytest.raises(ValidationError):
        SensorArray([[0, 0, 0]])
    with pytest.raises(ValidationError):
        SensorArray([[0, 0, 0], [1, 0, 0], [0, 0, 0]])
    with pytest.raises(ValidationError):
        SensorArray([[0, 0, float("nan")], [1, 0, 0]])
    planar = SensorArray([[0, 0], [1, 0]])
    assert planar.positions.shape == (2, 3)


def test_relabeled_moves_sensors(cross7):
    perm = [3, 0, 1, 2, 6, 5, 4]
    moved = cross7.relabeled(perm)
    for old, new in enumerate(perm):
        assert np.array_equal(moved.positions[new], cross7.positions[old])
    with pytest.raises(ValidationError):
        cross7.relabeled([0, 0, 1, 2, 3, 4, 5])


def test_scaled_array_scales_intervals(cross7):
    doubled = cross7.scaled(2.0)
    for pair in cross7.pairs():
        assert theta1_interval(pair, doubled).high == pytest.approx(2.0 * theta1_interval(pair, cross7).high)


def test_tdoa_set_signed_access():
    tdoas = TdoaSet({(1, 0): 0.2, (2, 1): -0.1})
    assert tdoas.value(1, 0) == 0.2
    assert tdoas.value(0, 1) == -0.2
    assert tdoas.value(1, 2) == pytest.approx(0.1)
    assert [tuple(p) for p in tdoas] == [(1, 0), (2, 1)]
    with pytest.raises(ValidationError):
        TdoaSet({(0, 1): 0.2})


def test_tdoa_vector_matches_definition(cross7):
    x = np.array([0.7, -0.4, 0.25])
    vector = tdoa_vector(x, cross7)
    for k, pair in enumerate(cross7.pairs()):
        expected = np.linalg.norm(x - cross7.positions[pair.j]) - np.linalg.norm(x - cross7.positions[pair.i])
        assert vector[k] == pytest.approx(expected, abs=1e-15)


# Feasibility of noiseless measurements

@pytest.mark.parametrize("preset", ["linear7", "cross7"])
def test_noiseless_tdoas_are_feasible(preset, request, rng):
    array = request.getfixturevalue(preset)
    planar = preset == "linear7"
    scale_tol = 1e-12 * array.scale
    for trial in range(1000):
        x = sample_source(array, planar, rng)
        tdoas = tdoa_map(x, array)
        for pair, value in tdoas.items():
            assert abs(value) <= theta1_interval(pair, array).high + scale_tol
        assert all(abs(r) < 1e-9 for r in zsc_residuals(tdoas).values())
        if trial >= 200:
            continue
        for i in range(array.count):
            for j in range(array.count):
                for k in range(j + 1, array.count):
                    if i in (j, k):
                        continue
                    group = TripleGroup.shared_pair(i, j, k)
                    geom = array.triple_geometry(i, j, k)
                    tau = group.oriented(tdoas)
                    assert theta2_membership(tau, geom, group)
                    assert simplified_distance(tau, geom, ISO2) == 0.0


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3))
def test_tdoas_bounded_by_sensor_distance(x, y, z):
    array = SensorArray([[0, 0, 0], [0.3, 0, 0], [0, 0.4, 0], [0.1, 0.1, 0.5]])
    tdoas = tdoa_map([x, y, z], array)
    for pair, value in tdoas.items():
        assert abs(value) <= array.distance(pair.j, pair.i) + 1e-12


# Triple classification and facets

def test_classify_triple():
    array = SensorArray([[0, 0, 0], [1, 0, 0], [2, 0, 0], [0, 1, 0]])
    assert classify_triple(0, 1, 2, array).classification is TripleClass.ALIGNED_SHARED_OUTSIDE
    assert classify_triple(1, 0, 2, array).classification is TripleClass.ALIGNED_SHARED_BETWEEN
    general = classify_triple(0, 1, 3, array)
    assert general.classification is TripleClass.GENERAL
    assert general.W == pytest.approx(1.0)
    with pytest.raises(ValidationError):
        classify_triple(0, 0, 1, array)


def test_vertices_satisfy_facets():
    array = SensorArray([[0, 0, 0], [1, 0, 0], [1, 1, 0], [2, 0, 0]])
    general = array.triple_geometry(0, 1, 2)
    A, b = hexagon_facets(general)
    for vertex in general.vertices:
        assert np.all(A @ vertex <= b + 1e-12)
    aligned = array.triple_geometry(0, 1, 3)
    A, b = triangle_facets(aligned)
    for vertex in aligned.vertices:
        assert np.all(A @ vertex <= b + 1e-12)


def test_membership_general_regions():
    array = SensorArray([[0, 0, 0], [1, 0, 0], [1, 1, 0]])
    geom = array.triple_geometry(0, 1, 2)
    # Source at the shared sensor, and inside the triangle
    assert theta2_membership(geom.vertices[0], geom)
    inside = tdoa_map([0.4, 0.4, 0.0], array)
    assert theta2_membership([inside[PairIndex(1, 0)], inside[PairIndex(2, 0)]], geom)
    # Outside the hexagon
    assert not theta2_membership([1.0, -1.0], geom)
    with pytest.raises(ValidationError):
        theta2_membership([0.1, 0.2], geom, TripleGroup.shared_pair(1, 0, 2))


def test_aligned_distance_shared_outside():
    array = SensorArray([[0, 0, 0], [1, 0, 0], [2, 0, 0]])
    geom = array.triple_geometry(0, 1, 2)
    assert geom.classification is TripleClass.ALIGNED_SHARED_OUTSIDE
    # Violates 2 tau_ji <= tau_ki only
    tau = [0.5, 0.2]
    expected = 1.6 / (SIGMA * math.sqrt(20.0))
    assert aligned_distance(tau, geom, ISO2) == pytest.approx(expected, rel=1e-12)
    assert aligned_distance([0.0, 1.0], geom, ISO2) == 0.0


def test_aligned_distance_shared_between():
    array = SensorArray([[-1, 0, 0], [0, 0, 0], [1, 0, 0]])
    geom = array.triple_geometry(1, 0, 2)
    assert geom.classification is TripleClass.ALIGNED_SHARED_BETWEEN
    tau = [-0.3, -0.2]
    assert aligned_distance(tau, geom, ISO2) == pytest.approx(1.0 / (SIGMA * 2.0 * math.sqrt(2.0)), rel=1e-12)
    assert aligned_distance([0.5, 0.1], geom, ISO2) == 0.0


def test_strip_distance_general():
    array = SensorArray([[0, 0, 0], [1, 0, 0], [0, 1, 0]])
    geom = array.triple_geometry(0, 1, 2)
    expected = (2.0 - math.sqrt(2.0)) / (SIGMA * math.sqrt(2.0))
    assert strip_distance_general([-1.0, 1.0], geom, ISO2) == pytest.approx(expected, rel=1e-12)
    assert strip_distance_general([0.2, 0.3], geom, ISO2) == 0.0
    with pytest.raises(ValidationError):
        strip_distance_general([0.2, 0.3], geom, np.array([[1.0, 2.0], [2.0, 1.0]]))


def test_zsc_plane_distance():
    cov3 = SIGMA ** 2 * np.eye(3)
    assert zsc_plane_distance([0.1, 0.0, 0.0], cov3) == pytest.approx(0.1 / (SIGMA * math.sqrt(3.0)))
    assert zsc_plane_distance([0.3, 0.5, 0.2], cov3) == pytest.approx(0.0, abs=1e-12)


def test_plane_distance_invariant_under_relabeling(random_array):
    array = random_array(3, seed=4)
    rng = np.random.default_rng(5)
    pairs = array.pairs()
    root = rng.normal(size=(len(pairs), len(pairs)))
    cov = root @ root.T * 1e-4 + 1e-5 * np.eye(len(pairs))
    tdoas = TdoaSet({p: v for p, v in zip(pairs, rng.normal(scale=0.1, size=len(pairs)))})

    perm = [2, 0, 3, 1]
    moved_entries = {}
    signs = {}
    for pair in pairs:
        new, sign = PairIndex.oriented(perm[pair.j], perm[pair.i])
        moved_entries[new] = sign * tdoas[pair]
        signs[new] = (pair, sign)
    moved_pairs = sorted(moved_entries, key=lambda p: (p.i, p.j))
    moved_cov = np.empty_like(cov)
    for a, pa in enumerate(moved_pairs):
        for b, pb in enumerate(moved_pairs):
            (oa, sa), (ob, sb) = signs[pa], signs[pb]
            moved_cov[a, b] = sa * sb * cov[pairs.index(oa), pairs.index(ob)]
    moved = TdoaSet(moved_entries)

    before = CovarianceModel.full(cov, pairs)
    after = CovarianceModel.full(moved_cov, moved_pairs)
    for i, j, k in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)]:
        group = TripleGroup.triple(i, j, k)
        ni, nj, nk = sorted((perm[i], perm[j], perm[k]))
        moved_group = TripleGroup.triple(ni, nj, nk)
        d_before = zsc_plane_distance(group.oriented(tdoas), before.group_block(group))
        d_after = zsc_plane_distance(moved_group.oriented(moved), after.group_block(moved_group))
        assert d_after == pytest.approx(d_before, rel=1e-9)


def test_group_members_and_signs():
    group = TripleGroup.shared_pair(2, 0, 3)
    assert group.kind is GroupKind.SHARED_PAIR
    assert group.members == (PairIndex(2, 0), PairIndex(3, 2))
    assert group.signs == (-1, 1)
    tdoas = TdoaSet({(2, 0): 0.1, (3, 2): 0.05})
    assert np.allclose(group.oriented(tdoas), [-0.1, 0.05])
    with pytest.raises(ValidationError):
        TripleGroup.triple(2, 1, 0)


# Linear relations

@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_relation_space_dimension(n, random_array):
    array = random_array(n, seed=n)
    assert relation_space_dimension(array, num_sources=200, rng_seed=n) == array.q - n


def test_relation_space_needs_enough_sources(random_array):
    with pytest.raises(ValidationError):
        relation_space_dimension(random_array(6), num_sources=10)


def test_mean_tdoa_error():
    clean = TdoaSet({(1, 0): 0.1, (2, 0): 0.2})
    measured = TdoaSet({(1, 0): 0.15, (2, 0): 0.1})
    assert mean_tdoa_error(measured, clean) == pytest.approx(0.075)
    with pytest.raises(ValidationError):
        mean_tdoa_error(TdoaSet(), clean)


# Distance properties

def shared_pair_samples(array, num=20000, seed=8):
    """(tau_10, tau_20) for sources spread from the array out to the far field"""
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=(num, 3))
    directions /= np.linalg.norm(directions, axis=1)[:, None]
    sources = directions * np.geomspace(1e-3, 1e4, num)[:, None]
    ranges = np.linalg.norm(sources[:, None, :] - array.positions[None, :3, :], axis=-1)
    return np.column_stack([ranges[:, 1] - ranges[:, 0], ranges[:, 2] - ranges[:, 0]])


@pytest.mark.parametrize("positions", [[[0, 0, 0], [1, 0, 0], [0.3, 0.8, 0]],
                                       [[0, 0, 0], [1, 0, 0], [2, 0, 0]],
                                       [[0, 0, 0], [-1, 0, 0], [2, 0, 0]]])
def test_simplified_distance_never_exceeds_true_distance(positions):
    array = SensorArray(positions)
    geom = array.triple_geometry(0, 1, 2)
    sigma = 0.1
    feasible = shared_pair_samples(array)
    rng = np.random.default_rng(9)
    for tau in rng.uniform(-2.5, 2.5, size=(300, 2)):
        # Nearest sampled feasible point bounds the distance to the set from above
        nearest = np.min(np.linalg.norm(feasible - tau, axis=1)) / sigma
        assert simplified_distance(tau, geom, sigma ** 2 * np.eye(2)) <= nearest + 1e-9


@pytest.mark.parametrize("c", [0.01, 3.7, 250.0])
def test_distances_invariant_under_common_scaling(c, cross7):
    cov2 = np.array([[4.0, 1.0], [1.0, 3.0]]) * 1e-5
    cov3 = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 2.0]]) * 1e-5
    tau_pair = np.array([0.41, -0.35])
    tau_triple = np.array([0.2, -0.1, 0.05])
    bigger = cross7.scaled(c)
    for shared, j, k in [(0, 1, 2), (0, 1, 3), (1, 3, 5)]:
        before = simplified_distance(tau_pair, cross7.triple_geometry(shared, j, k), cov2)
        after = simplified_distance(c * tau_pair, bigger.triple_geometry(shared, j, k), c ** 2 * cov2)
        assert after == pytest.approx(before, rel=1e-9, abs=1e-9)
    assert zsc_plane_distance(c * tau_triple, c ** 2 * cov3) == pytest.approx(
        zsc_plane_distance(tau_triple, cov3), rel=1e-9)


@given(st.floats(-1, 1), st.floats(-1, 1))
def test_plane_distance_ignores_zero_sum_components(a, b):
    cov3 = np.array([[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 2.0]]) * 1e-5
    tau = np.array([0.2, -0.1, 0.05])
    # Both directions satisfy tau_ji - tau_ki + tau_kj = 0
    shift = a * np.array([1.0, 1.0, 0.0]) + b * np.array([0.0, 1.0, 1.0])
    assert zsc_plane_distance(tau + shift, cov3) == pytest.approx(zsc_plane_distance(tau, cov3),
                                                                  rel=1e-7, abs=1e-9)


def test_array_survives_pickling(cross7):
    cross7.triple_geometry(0, 1, 2)
    copy = pickle.loads(pickle.dumps(cross7))
    assert np.array_equal(copy.positions, cross7.positions)
    assert copy.name == "cross7"
    assert copy.triple_geometry(0, 1, 2).classification is cross7.triple_geometry(0, 1, 2).classification
