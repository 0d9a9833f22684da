"""Upper-level mining: box expansion, affinity propagation, recursion."""

from __future__ import annotations

import numpy as np
import pytest

from boxtaxo import boxes as bx
from boxtaxo import cluster as cl


CFG = bx.BoxAlgebraConfig(dim=2)
SHARP = bx.BoxAlgebraConfig(dim=2, vol_temp=1e-3, int_temp=1e-3)


def boxes_from(lo, hi):
    return bx.box_from_coords(np.asarray(lo, float), np.asarray(hi, float))


def two_group_setup():
    """Six leaf topics over two well-separated word clusters in [0,1]^2."""
    offsets = np.array([0.0, 0.6])
    word_lo, word_hi, leaf_lo, leaf_hi = [], [], [], []
    for off in offsets:
        for i in range(5):
            lo = np.array([0.08 + 0.01 * i, 0.08]) + off
            word_lo.append(lo)
            word_hi.append(lo + 0.18)
        for j in range(3):
            lo = np.array([0.07, 0.06 + 0.01 * j]) + off
            leaf_lo.append(lo)
            leaf_hi.append(lo + 0.24)
    words = boxes_from(np.array(word_lo), np.array(word_hi))
    leaves = boxes_from(np.array(leaf_lo), np.array(leaf_hi))
    return words, leaves


# ---------------------------------------------------------------------------
# configuration


def test_cluster_config_validation():
    with pytest.raises(ValueError, match="damping"):
        cl.ClusterConfig(damping=0.4)
    with pytest.raises(ValueError, match="damping"):
        cl.ClusterConfig(damping=1.0)
    with pytest.raises(ValueError, match="preference_mode"):
        cl.ClusterConfig(preference_mode="mean")
    with pytest.raises(ValueError, match="max_iter"):
        cl.ClusterConfig(max_iter=5, convergence_window=10)
    with pytest.raises(ValueError, match="n_expand"):
        cl.ClusterConfig(n_expand=0)


# ---------------------------------------------------------------------------
# expansion


def test_expand_topic_box_is_a_noop_for_nested_keywords():
    topic = boxes_from([0.1, 0.1], [0.8, 0.8])
    kws = boxes_from([[0.2, 0.2], [0.4, 0.5]], [[0.3, 0.3], [0.6, 0.7]])
    out = cl.expand_topic_box(topic, kws)
    assert np.allclose(out.lower_value, [0.1, 0.1])
    assert np.allclose(out.upper_value, [0.8, 0.8])


def test_expand_topic_box_stretches_to_outside_keywords():
    topic = boxes_from([0.4, 0.4], [0.6, 0.6])
    kws = boxes_from([[0.1, 0.45], [0.5, 0.5]], [[0.2, 0.55], [0.9, 0.7]])
    out = cl.expand_topic_box(topic, kws)
    assert np.allclose(out.lower_value, [0.1, 0.4])
    assert np.allclose(out.upper_value, [0.9, 0.7])


def test_expand_topic_box_requires_keywords():
    topic = boxes_from([0.4, 0.4], [0.6, 0.6])
    empty = boxes_from(np.empty((0, 2)), np.empty((0, 2)))
    with pytest.raises(ValueError, match="keyword"):
        cl.expand_topic_box(topic, empty)


def test_expand_level_matches_the_scalar_expansion():
    rng = np.random.default_rng(0)
    word_lo = rng.uniform(0.0, 0.5, size=(12, 2))
    word_hi = word_lo + rng.uniform(0.05, 0.4, size=(12, 2))
    topic_lo = rng.uniform(0.0, 0.5, size=(4, 2))
    topic_hi = topic_lo + rng.uniform(0.05, 0.4, size=(4, 2))
    kw_idx = rng.integers(0, 12, size=(4, 3))
    lo, hi = cl.expand_level(topic_lo, topic_hi, word_lo, word_hi, kw_idx)
    for t in range(4):
        one = cl.expand_topic_box(
            boxes_from(topic_lo[t], topic_hi[t]),
            boxes_from(word_lo[kw_idx[t]], word_hi[kw_idx[t]]),
        )
        assert np.allclose(lo[t], one.lower_value)
        assert np.allclose(hi[t], one.upper_value)
    assert np.all(lo <= topic_lo) and np.all(hi >= topic_hi)


# ---------------------------------------------------------------------------
# affinity matrix


def test_affinity_diagonal_is_exactly_zero():
    words, leaves = two_group_setup()
    a = cl.topic_affinity_matrix(leaves, CFG)
    assert np.array_equal(np.diag(a), np.zeros(6))


def test_affinity_of_identical_boxes_is_near_zero():
    lo = np.tile([0.2, 0.2], (3, 1))
    hi = np.tile([0.7, 0.7], (3, 1))
    a = cl.topic_affinity_matrix(boxes_from(lo, hi), SHARP)
    assert np.allclose(a, 0.0, atol=2e-2)


def test_affinity_is_a_covered_volume_fraction():
    # box 0 (tiny) sits inside box 1 (big)
    lo = np.array([[0.4, 0.4], [0.1, 0.1]])
    hi = np.array([[0.5, 0.5], [0.9, 0.9]])
    a = cl.topic_affinity_matrix(boxes_from(lo, hi), SHARP)
    assert a[0, 1] == pytest.approx(0.0, abs=2e-2)
    hard_ratio = 2 * (np.log(0.1) - np.log(0.8))
    assert a[1, 0] == pytest.approx(hard_ratio, rel=2e-2)


def test_affinity_needs_at_least_two_boxes():
    with pytest.raises(ValueError, match="2 boxes"):
        cl.topic_affinity_matrix(boxes_from([[0.1, 0.1]], [[0.5, 0.5]]), CFG)


# ---------------------------------------------------------------------------
# affinity propagation


def block_affinity(sizes, within=-0.5, across=-10.0, seed=0):
    # jitter breaks exact ties; perfectly tied messages make AP oscillate
    rng = np.random.default_rng(seed)
    n = sum(sizes)
    a = np.full((n, n), across)
    start = 0
    for size in sizes:
        a[start : start + size, start : start + size] = within
        start += size
    a += rng.uniform(0.0, 0.01, size=(n, n))
    np.fill_diagonal(a, 0.0)
    return a


def test_ap_separates_two_obvious_groups():
    a = block_affinity([3, 3])
    res = cl.affinity_propagation(a, cl.ClusterConfig())
    assert res.n_clusters == 2
    assert len(set(res.labels[:3])) == 1
    assert len(set(res.labels[3:])) == 1
    assert res.labels[0] != res.labels[3]
    assert res.converged


def test_exhaustive_exemplar_search_matches_a_hand_computed_instance():
    from oracles import exhaustive_exemplars

    # two mutually close points: one shared exemplar only pays when the
    # preference is worse than the similarity it saves
    s = np.array([[0.0, -1.0], [-1.0, 0.0]])
    labels, exemplars = exhaustive_exemplars(s, preference=-0.1)
    assert len(exemplars) == 2
    labels, exemplars = exhaustive_exemplars(s, preference=-3.0)
    assert len(exemplars) == 1
    assert len(set(labels)) == 1


def test_ap_agrees_with_the_exhaustive_search_on_two_blocks():
    from oracles import exhaustive_exemplars, partition_of

    a = block_affinity([4, 4])
    res = cl.affinity_propagation(a, cl.ClusterConfig())
    off_diag = a[~np.eye(8, dtype=bool)]
    labels, _ = exhaustive_exemplars(a, preference=float(np.median(off_diag)))
    assert partition_of(res.labels) == partition_of(labels)
    assert partition_of(res.labels) == {frozenset(range(4)), frozenset(range(4, 8))}


def test_ap_high_preference_makes_every_point_an_exemplar():
    a = block_affinity([3, 3])
    res = cl.affinity_propagation(a, cl.ClusterConfig(), preference=100.0)
    assert res.n_clusters == 6
    assert np.array_equal(np.sort(res.exemplars), np.arange(6))


def test_ap_exemplars_belong_to_their_own_cluster():
    for seed in range(3):
        a = block_affinity([4, 2, 3], seed=seed)
        res = cl.affinity_propagation(a, cl.ClusterConfig())
        assert np.array_equal(res.labels[res.exemplars], np.arange(res.n_clusters))
        assert 1 <= res.n_clusters <= 9
        assert np.all(res.labels >= 0) and np.all(res.labels < res.n_clusters)


def test_ap_single_item_short_circuits():
    res = cl.affinity_propagation(np.zeros((1, 1)), cl.ClusterConfig())
    assert res.n_clusters == 1
    assert res.labels.tolist() == [0]
    assert res.converged


def test_ap_rejects_non_square_input():
    with pytest.raises(ValueError, match="square"):
        cl.affinity_propagation(np.zeros((2, 3)), cl.ClusterConfig())


def test_ap_is_deterministic():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(10, 10)) - 5.0
    np.fill_diagonal(a, 0.0)
    r1 = cl.affinity_propagation(a, cl.ClusterConfig())
    r2 = cl.affinity_propagation(a, cl.ClusterConfig())
    assert np.array_equal(r1.labels, r2.labels)
    assert np.array_equal(r1.exemplars, r2.exemplars)
    assert r1.n_iter == r2.n_iter


# ---------------------------------------------------------------------------
# parent assignment


def test_assign_parents_picks_row_maxima():
    rng = np.random.default_rng(2)
    theta = rng.normal(size=(7, 3))
    parents = cl.assign_parents(theta)
    for i in range(7):
        best = max(range(3), key=lambda j: theta[i, j])
        assert parents[i] == best


def test_assign_parents_ties_break_low_and_empty_is_an_error():
    assert cl.assign_parents(np.zeros((4, 3))).tolist() == [0, 0, 0, 0]
    assert cl.assign_parents(np.zeros((2, 1))).tolist() == [0, 0]
    with pytest.raises(ValueError, match="empty"):
        cl.assign_parents(np.empty((0, 0)))


# ---------------------------------------------------------------------------
# recursive clustering


def test_recur_clus_recovers_two_separated_groups():
    words, leaves = two_group_setup()
    res = cl.recur_clus(words, leaves, depth=2, cluster_cfg=cl.ClusterConfig(), box_cfg=CFG)
    assert res.depth == 2
    assert not res.topped_out
    members = res.memberships[0]
    assert len(set(members[:3])) == 1
    assert len(set(members[3:])) == 1
    assert members[0] != members[3]
    parents = res.parents[0]
    assert parents[0] == parents[1] == parents[2]
    assert parents[3] == parents[4] == parents[5]
    assert parents[0] != parents[3]


def test_recur_clus_upper_boxes_average_the_expanded_members():
    words, leaves = two_group_setup()
    cfg = cl.ClusterConfig()
    res = cl.recur_clus(words, leaves, depth=2, cluster_cfg=cfg, box_cfg=CFG)
    kw_idx = cl._keyword_indices(
        leaves.lower_value, leaves.upper_value,
        words.lower_value, words.upper_value, cfg.n_expand, CFG,
    )
    exp_lo, exp_hi = cl.expand_level(
        leaves.lower_value, leaves.upper_value,
        words.lower_value, words.upper_value, kw_idx,
    )
    up_lo, up_hi = res.upper_levels[0]
    for c in range(up_lo.shape[0]):
        sel = res.memberships[0] == c
        assert np.allclose(up_lo[c], exp_lo[sel].mean(axis=0), atol=1e-12)
        assert np.allclose(up_hi[c], exp_hi[sel].mean(axis=0), atol=1e-12)


def test_recur_clus_tops_out_on_identical_leaves():
    words, _ = two_group_setup()
    lo = np.tile([0.3, 0.3], (4, 1))
    hi = np.tile([0.7, 0.7], (4, 1))
    res = cl.recur_clus(words, boxes_from(lo, hi), depth=3, cluster_cfg=cl.ClusterConfig(), box_cfg=CFG)
    assert res.topped_out
    assert res.depth == 2
    assert res.upper_levels[0][0].shape[0] == 1
    assert res.memberships[0].tolist() == [0, 0, 0, 0]
    assert res.parents[0].tolist() == [0, 0, 0, 0]


def test_recur_clus_level_sizes_never_grow():
    rng = np.random.default_rng(3)
    word_lo = rng.uniform(0.0, 0.7, size=(30, 2))
    word_hi = word_lo + rng.uniform(0.05, 0.3, size=(30, 2))
    leaf_lo = rng.uniform(0.0, 0.7, size=(12, 2))
    leaf_hi = leaf_lo + rng.uniform(0.05, 0.3, size=(12, 2))
    res = cl.recur_clus(
        boxes_from(word_lo, word_hi), boxes_from(leaf_lo, leaf_hi),
        depth=4, cluster_cfg=cl.ClusterConfig(), box_cfg=CFG,
    )
    sizes = [12] + [lo.shape[0] for lo, _ in res.upper_levels]
    assert all(a >= b for a, b in zip(sizes, sizes[1:]))
    assert len(res.parents) == len(res.upper_levels)
    if res.depth < 4:
        assert res.topped_out or res.adaptive_stop


def test_recur_clus_adaptive_mode_stops_at_the_threshold():
    words, leaves = two_group_setup()
    cfg = cl.ClusterConfig(adaptive_depth=True, top_threshold=10)
    res = cl.recur_clus(words, leaves, depth=3, cluster_cfg=cfg, box_cfg=CFG)
    assert res.adaptive_stop
    assert res.depth == 1
    assert res.upper_levels == []


def test_recur_clus_rejects_shallow_requests_and_is_deterministic():
    words, leaves = two_group_setup()
    with pytest.raises(ValueError, match="depth"):
        cl.recur_clus(words, leaves, depth=1, cluster_cfg=cl.ClusterConfig(), box_cfg=CFG)
    r1 = cl.recur_clus(words, leaves, depth=3, cluster_cfg=cl.ClusterConfig(), box_cfg=CFG)
    r2 = cl.recur_clus(words, leaves, depth=3, cluster_cfg=cl.ClusterConfig(), box_cfg=CFG)
    assert len(r1.upper_levels) == len(r2.upper_levels)
    for (lo1, hi1), (lo2, hi2) in zip(r1.upper_levels, r2.upper_levels):
        assert np.array_equal(lo1, lo2) and np.array_equal(hi1, hi2)
    for m1, m2 in zip(r1.memberships, r2.memberships):
        assert np.array_equal(m1, m2)
