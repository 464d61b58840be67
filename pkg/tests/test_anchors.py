import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from detpost.anchors import (
    AnchorSet,
    anchor_fitness,
    cut_tree,
    estimate_anchors,
    hc_anchors,
    kmeans_anchors,
    ward_linkage,
)
from detpost.geometry import BoxWH

import oracles

TWO_PAIRS = [BoxWH(10, 10), BoxWH(11, 11), BoxWH(100, 100), BoxWH(101, 99)]


def as_pairs(anchor_set):
    return [(a.w, a.h) for a in anchor_set.anchors]


def test_hc_two_pairs():
    anchors, steps = hc_anchors(TWO_PAIRS, 2)
    assert as_pairs(anchors) == [(10.5, 10.5), (100.5, 99.5)]
    assert len(steps) == 3
    assert oracles.best_two_partition([(b.w, b.h) for b in TWO_PAIRS]) == as_pairs(anchors)


def test_hc_k_equals_n_returns_inputs_sorted():
    boxes = [BoxWH(50, 5), BoxWH(3, 4), BoxWH(20, 20)]
    anchors, _ = hc_anchors(boxes, 3)
    assert as_pairs(anchors) == [(3, 4), (50, 5), (20, 20)]


def test_hc_k_one_is_global_mean():
    anchors, _ = hc_anchors(TWO_PAIRS, 1)
    assert as_pairs(anchors) == [pytest.approx((55.5, 55.0))]


def test_errors():
    with pytest.raises(ValueError):
        hc_anchors([], 1)
    with pytest.raises(ValueError):
        hc_anchors(TWO_PAIRS, 5)
    with pytest.raises(ValueError):
        kmeans_anchors(TWO_PAIRS, 5)
    with pytest.raises(ValueError):
        estimate_anchors(TWO_PAIRS, "genetic", 2)


def test_linkage_matches_naive_reference():
    rng = np.random.default_rng(0)
    for _ in range(50):
        pts = rng.uniform(1, 100, (int(rng.integers(2, 11)), 2))
        ours = ward_linkage(pts)
        ref = oracles.naive_ward(pts.tolist())
        assert [(s.left, s.right, s.size) for s in ours] == [(l, r, sz) for l, r, _, sz in ref]
        np.testing.assert_allclose([s.distance for s in ours], [d for _, _, d, _ in ref], rtol=1e-9)


def test_linkage_matches_scipy():
    hierarchy = pytest.importorskip("scipy.cluster.hierarchy")
    pts = np.random.default_rng(4).uniform(1, 300, (200, 2))
    ours = ward_linkage(pts)
    ref = hierarchy.linkage(pts, method="ward")
    np.testing.assert_allclose([s.distance for s in ours], ref[:, 2], rtol=1e-9)
    assert [sorted((s.left, s.right)) for s in ours] == ref[:, :2].astype(int).tolist()


def test_tie_break_prefers_smallest_pair():
    # four corners of a square: every nearest pair ties
    pts = np.array([[0, 0], [0, 1], [1, 0], [1, 1]], dtype=float)
    steps = ward_linkage(pts)
    assert (steps[0].left, steps[0].right) == (0, 1)
    assert (steps[1].left, steps[1].right) == (2, 3)
    ref = oracles.naive_ward(pts.tolist())
    assert [(s.left, s.right) for s in steps] == [(l, r) for l, r, _, _ in ref]


def test_duplicate_points_merge_first_at_zero():
    pts = np.array([[5, 5], [40, 40], [5, 5], [41, 39]], dtype=float)
    steps = ward_linkage(pts)
    assert steps[0].distance == 0.0 and {steps[0].left, steps[0].right} == {0, 2}


def test_cut_tree_partition():
    pts = np.array([[10, 10], [11, 11], [100, 100], [101, 99]], dtype=float)
    steps = ward_linkage(pts)
    assert cut_tree(4, steps, 2).tolist() == [0, 0, 1, 1]
    assert cut_tree(4, steps, 4).tolist() == [0, 1, 2, 3]
    assert cut_tree(4, steps, 1).tolist() == [0, 0, 0, 0]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(1, 500), st.floats(1, 500)), min_size=2, max_size=40),
       st.integers(1, 40))
def test_hc_properties(points, k):
    k = min(k, len(points))
    boxes = [BoxWH(w, h) for w, h in points]
    anchors, steps = hc_anchors(boxes, k)
    heights = [s.distance for s in steps]
    assert all(b >= a * (1 - 1e-12) for a, b in zip(heights, heights[1:]))
    assert anchors.k == k
    areas = [a.area for a in anchors.anchors]
    assert areas == sorted(areas)
    assert hc_anchors(boxes, k) == (anchors, steps)
    labels = cut_tree(len(points), steps, k)
    pts = np.array(points)
    for c in range(k):
        members = pts[labels == c]
        mean = members.mean(axis=0)
        assert np.all(mean >= members.min(axis=0) - 1e-9)
        assert np.all(mean <= members.max(axis=0) + 1e-9)


def test_hc_image_size_normalization():
    anchors, _ = hc_anchors(TWO_PAIRS, 2, image_size=(200, 100))
    assert as_pairs(anchors) == [pytest.approx((10.5 / 200, 10.5 / 100)),
                                 pytest.approx((100.5 / 200, 99.5 / 100))]


@pytest.mark.parametrize("init", ["random", "plusplus"])
def test_kmeans_two_pairs(init):
    anchors = kmeans_anchors(TWO_PAIRS, 2, seed=3, init=init)
    assert as_pairs(anchors) == [pytest.approx((10.5, 10.5)), pytest.approx((100.5, 99.5))]
    assert anchors.method == ("kmeans" if init == "random" else "kmeanspp")


@pytest.mark.parametrize("init", ["random", "plusplus"])
def test_kmeans_k_equals_n(init):
    boxes = [BoxWH(5, 9), BoxWH(30, 2), BoxWH(7, 7), BoxWH(60, 60)]
    anchors = kmeans_anchors(boxes, 4, seed=1, init=init)
    assert sorted(as_pairs(anchors)) == sorted((b.w, b.h) for b in boxes)


@pytest.mark.parametrize("init", ["random", "plusplus"])
def test_kmeans_deterministic(init):
    rng = np.random.default_rng(2)
    boxes = [BoxWH(*p) for p in rng.uniform(5, 200, (300, 2))]
    a = kmeans_anchors(boxes, 9, seed=42, init=init)
    b = kmeans_anchors(boxes, 9, seed=42, init=init)
    assert a == b


def test_kmeans_reseeds_empty_cluster():
    # three identical points and one outlier with k=3 forces an empty cluster
    boxes = [BoxWH(10, 10)] * 3 + [BoxWH(90, 90), BoxWH(91, 91)]
    anchors = kmeans_anchors(boxes, 3, seed=0, init="random")
    assert anchors.k == 3
    assert all(np.isfinite([a.w, a.h]).all() for a in anchors.anchors)


def test_fitness_examples():
    gts = [BoxWH(10, 20), BoxWH(30, 30), BoxWH(5, 50)]
    assert anchor_fitness(gts, gts, 0.5).achievable_recall == 1.0
    assert anchor_fitness(gts[::-1], gts, 0.5).achievable_recall == 1.0
    rep = anchor_fitness([BoxWH(10, 10)], [BoxWH(100, 100)], 0.5)
    assert rep.achievable_recall == 0.0 and rep.matched == 0 and rep.total == 1


def test_fitness_accepts_anchor_set():
    anchors, _ = hc_anchors(TWO_PAIRS, 2)
    assert isinstance(anchors, AnchorSet)
    assert anchor_fitness(anchors, TWO_PAIRS).achievable_recall == 1.0


def test_fitness_errors():
    with pytest.raises(ValueError):
        anchor_fitness([BoxWH(1, 1)], [], 0.5)
    with pytest.raises(ValueError):
        anchor_fitness([], [BoxWH(1, 1)], 0.5)
    with pytest.raises(ValueError):
        anchor_fitness([BoxWH(1, 1)], [BoxWH(1, 1)], 1.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(1, 300), st.floats(1, 300)), min_size=1, max_size=6),
       st.tuples(st.floats(1, 300), st.floats(1, 300)),
       st.lists(st.tuples(st.floats(1, 300), st.floats(1, 300)), min_size=1, max_size=30))
def test_fitness_monotone_in_anchor_set(anchors, extra, gts):
    a = [BoxWH(*p) for p in anchors]
    g = [BoxWH(*p) for p in gts]
    before = anchor_fitness(a, g).achievable_recall
    after = anchor_fitness(a + [BoxWH(*extra)], g).achievable_recall
    assert after >= before
