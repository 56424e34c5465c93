import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sddtmpc import setops
from sddtmpc.setops import (Ellipse2, SetError, TemplatePolytope, box, circumscribe_ellipse, embed_position_disturbance,
                            is_subset, linear_map, minkowski_sum, pontryagin_diff, support)

from conftest import brute_vertices, random_octagon, random_polygon


def test_box_sum_is_interval_sum():
    S = minkowski_sum(box([-1, -1], [1, 1]), box([-0.5, -0.5], [0.5, 0.5]))
    assert np.allclose(S.offsets, 1.5)


def test_sum_with_origin_keeps_offsets(rng):
    P = random_octagon(rng)
    S = minkowski_sum(P, setops.singleton(2))
    assert np.allclose(S.offsets, P.offsets, atol=1e-12)


def test_octagon_sum_matches_vertex_pairs(rng):
    for _ in range(50):
        P, Q = random_octagon(rng), random_octagon(rng)
        S = minkowski_sum(P, Q)
        VP, VQ = brute_vertices(P), brute_vertices(Q)
        pair = (VP[:, None, :] + VQ[None, :, :]).reshape(-1, 2)
        assert np.allclose(S.offsets, np.max(pair @ P.normals.T, axis=0), atol=1e-9)


def test_pontryagin_box():
    D = pontryagin_diff(box([-2, -2], [2, 2]), box([-0.5, -0.5], [0.5, 0.5]))
    assert np.allclose(D.offsets, 1.5)
    X = random_polygon(np.random.default_rng(1))
    assert np.allclose(pontryagin_diff(X, setops.singleton(2)).offsets, X.offsets)


def test_difference_then_sum_stays_inside(rng):
    for _ in range(20):
        X = random_octagon(rng, 2.0)
        E = random_octagon(rng, 0.2)
        D = pontryagin_diff(X, E)
        if D.is_empty():
            continue
        R = minkowski_sum(D, E)
        assert is_subset(R, X)
        # Monte-Carlo membership of the recombined set
        VD, VE = brute_vertices(D), brute_vertices(E)
        a = rng.dirichlet(np.ones(len(VD)), 500) @ VD
        b = rng.dirichlet(np.ones(len(VE)), 500) @ VE
        pts = a + b
        assert np.all(X.normals @ pts.T <= X.offsets[:, None] + 1e-9)


def test_difference_can_be_empty_without_raising():
    D = pontryagin_diff(box([-1, -1], [1, 1]), box([-2, -2], [2, 2]))
    assert D.is_empty()


def test_support_examples():
    B = box([-1, -1], [1, 1])
    assert support(B, [1, 0]) == pytest.approx(1.0)
    assert support(B, [np.sqrt(0.5), np.sqrt(0.5)]) == pytest.approx(np.sqrt(2))


def test_support_matches_vertex_oracle(rng):
    for _ in range(1000):
        P = random_polygon(rng)
        d = rng.normal(size=2)
        d /= np.linalg.norm(d)
        assert support(P, d) == pytest.approx(np.max(brute_vertices(P) @ d), abs=1e-9)


def test_support_of_unbounded_set_raises():
    half = TemplatePolytope([[1.0, 0.0]], [1.0])
    with pytest.raises(SetError):
        support(half, [-1.0, 0.0])


def test_linear_map_examples(rng):
    P = random_octagon(rng)
    assert np.allclose(linear_map(np.eye(2), P).offsets, P.offsets)
    assert np.allclose(linear_map(2 * np.eye(3), box(-np.ones(3), np.ones(3))).offsets, 2.0)


def test_rotated_square_under_octagon_template():
    c = s = np.sqrt(0.5)
    Rm = np.array([[c, -s], [s, c]])
    T = setops.polygon_template(8)
    sq = box([-1, -1], [1, 1])
    img = linear_map(Rm, sq, template=T)
    corners = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1.0]]) @ Rm.T
    assert np.all(T @ corners.T <= img.offsets[:, None] + 1e-12)
    exact = np.max(T @ corners.T, axis=1)
    assert np.all(img.offsets <= 1.0001 * exact)


def test_linear_map_dimension_checks():
    with pytest.raises(SetError):
        linear_map(np.ones((2, 3)), box([-1, -1], [1, 1]))
    with pytest.raises(SetError):
        linear_map(np.ones((3, 2)), box([-1, -1], [1, 1]))


def test_subset_examples():
    unit, two = box([-1, -1], [1, 1]), box([-2, -2], [2, 2])
    assert is_subset(unit, two)
    assert not is_subset(two, unit)


def test_subset_agrees_with_vertex_membership(rng):
    for _ in range(200):
        P = random_octagon(rng)
        Q = TemplatePolytope(P.normals, P.offsets * rng.uniform(0.5, 1.0))
        assert is_subset(Q, P)
        shifted = TemplatePolytope(P.normals, P.offsets + P.normals @ rng.normal(scale=0.5, size=2))
        V = brute_vertices(shifted)
        assert is_subset(shifted, P) == bool(np.all(P.normals @ V.T <= P.offsets[:, None] + 1e-9))


def test_circumscribe_examples():
    sq = circumscribe_ellipse(Ellipse2(1.0, 1.0, 0.0), 4)
    assert np.allclose(sq.offsets, 1.0)
    assert np.allclose(np.abs(sq.normals), np.vstack([np.eye(2), np.eye(2)])[[0, 1, 2, 3]], atol=1e-12)
    z = circumscribe_ellipse(Ellipse2(0.0, 0.0), 8)
    assert np.allclose(z.offsets, 0.0)
    with pytest.raises(SetError):
        circumscribe_ellipse(Ellipse2(1, 1), 5)


def test_circumscribe_covers_ellipse_tightly():
    e = Ellipse2(0.427, 0.225, 0.0)
    P = circumscribe_ellipse(e, 8)
    th = np.linspace(0, 2 * np.pi, 10_000, endpoint=False)
    pts = np.column_stack([e.r_max * np.cos(th), e.r_min * np.sin(th)])
    assert np.all(P.contains(pts))
    assert setops.polygon_area(brute_vertices(P)) <= 1.06 * e.area


def test_circumscribed_vertex_batch_matches_polygon(rng):
    for _ in range(20):
        r1 = rng.uniform(0.1, 1)
        e = Ellipse2(r1, r1 * rng.uniform(0.1, 1), rng.uniform(-np.pi, np.pi))
        V = setops.circumscribed_vertices(e.r_max, e.r_min, e.heading)
        W = brute_vertices(circumscribe_ellipse(e))
        d = np.linalg.norm(V[:, None] - W[None], axis=2)
        assert np.max(np.min(d, axis=1)) < 1e-9


def test_embedding():
    Z = embed_position_disturbance(setops.singleton(2))
    assert np.allclose(setops.supports(Z, np.vstack([np.eye(4), -np.eye(4)])), 0.0)
    W = embed_position_disturbance(box([-0.3, -0.3], [0.3, 0.3]))
    for d, h in [([1, 0, 0, 0], 0.3), ([0, -1, 0, 0], 0.3), ([0, 0, 1, 0], 0.0), ([0, 0, 0, -1], 0.0)]:
        assert support(W, d) == pytest.approx(h, abs=1e-12)
    B = box(-np.ones(4), np.ones(4))
    S = minkowski_sum(B, W)
    assert np.allclose(S.offsets, [1.3, 1.3, 1, 1, 1.3, 1.3, 1, 1])
    with pytest.raises(SetError):
        embed_position_disturbance(B)


def test_dimension_mismatch():
    with pytest.raises(SetError):
        minkowski_sum(box([-1], [1]), box([-1, -1], [1, 1]))


def test_invalid_normals_rejected():
    with pytest.raises(SetError):
        TemplatePolytope([[2.0, 0.0]], [1.0])


def test_json_round_trip(rng):
    P = random_octagon(rng)
    Q = TemplatePolytope.from_dict(P.to_dict())
    assert np.array_equal(P.normals, Q.normals) and np.array_equal(P.offsets, Q.offsets)



@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.25), st.floats(0.0, 0.25))
def test_sum_is_monotone_under_inclusion(seed, fa, fb):
    rng = np.random.default_rng(seed)
    A, B = random_octagon(rng), random_octagon(rng)
    C = TemplatePolytope(A.normals, A.offsets - fa)
    D = TemplatePolytope(B.normals, B.offsets - fb)
    if C.is_empty() or D.is_empty():
        return
    assert is_subset(C, A) and is_subset(D, B)
    assert is_subset(minkowski_sum(C, B), minkowski_sum(A, B))
    assert is_subset(minkowski_sum(C, D), minkowski_sum(A, B))


def test_template_sum_is_sound_for_random_points(rng):
    P, Q = random_octagon(rng), random_polygon(rng)
    S = minkowski_sum(P, Q)
    VP, VQ = brute_vertices(P), brute_vertices(Q)
    pts = rng.dirichlet(np.ones(len(VP)), 10_000) @ VP + rng.dirichlet(np.ones(len(VQ)), 10_000) @ VQ
    assert np.all(S.contains(pts))
