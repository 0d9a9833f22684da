"""Box algebra: construction, volumes, intersections, affinities."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxtaxo import autodiff as ad
from boxtaxo import boxes as bx
from oracles import hard_box_volume, hard_intersection

CFG = bx.BoxAlgebraConfig(dim=3)
SHARP = bx.BoxAlgebraConfig(dim=3, vol_temp=1e-4, int_temp=1e-4)


def const_box(lo, hi):
    return bx.box_from_coords(np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64))


def test_config_validation():
    with pytest.raises(ValueError):
        bx.BoxAlgebraConfig(dim=0)
    with pytest.raises(ValueError):
        bx.BoxAlgebraConfig(dim=2, vol_temp=0.0)
    with pytest.raises(ValueError):
        bx.BoxAlgebraConfig(dim=2, int_temp=-1.0)
    with pytest.raises(ValueError):
        bx.BoxAlgebraConfig(dim=2, log_eps=1e-3)
    with pytest.raises(ValueError):
        bx.BoxAlgebraConfig(dim=2, log_eps=0.0)


def test_make_box_zero_params_hits_the_midpoints():
    box = bx.make_box(np.zeros(4), np.zeros(4))
    assert np.allclose(box.lower_value, 0.5)
    assert np.allclose(box.upper_value, 0.75)


def test_make_box_saturates_to_the_unit_cube():
    box = bx.make_box(np.full(3, -40.0), np.full(3, 40.0))
    assert np.allclose(box.lower_value, 0.0, atol=1e-12)
    assert np.allclose(box.upper_value, 1.0, atol=1e-12)


def test_make_box_ordering_holds_over_random_draws():
    rng = np.random.default_rng(0)
    box = bx.make_box(rng.normal(0, 4, size=(10_000, 6)), rng.normal(0, 4, size=(10_000, 6)))
    assert np.all(box.lower_value >= 0.0)
    assert np.all(box.lower_value <= box.upper_value)
    assert np.all(box.upper_value <= 1.0)


def test_make_box_rejects_mismatched_shapes():
    with pytest.raises(ValueError):
        bx.make_box(np.zeros(3), np.zeros(4))


def test_params_from_coords_round_trips():
    rng = np.random.default_rng(1)
    lo = rng.uniform(0.05, 0.5, size=(20, 4))
    hi = lo + rng.uniform(0.05, 0.4, size=(20, 4))
    pmin, psize = bx.params_from_coords(lo, hi)
    box = bx.make_box(pmin, psize)
    assert np.allclose(box.lower_value, lo, atol=1e-9)
    assert np.allclose(box.upper_value, hi, atol=1e-9)


def test_hard_volume_examples():
    assert hard_volume_of([0, 0, 0], [1, 1, 1]) == pytest.approx(1.0)
    assert hard_volume_of([0.2, 0.2], [0.6, 0.7]) == pytest.approx(0.2)
    assert hard_volume_of([0.3, 0.3], [0.3, 0.3]) == pytest.approx(0.0)


def hard_volume_of(lo, hi) -> float:
    return float(bx.hard_volume(const_box(lo, hi)))


def test_gumbel_log_volume_approaches_hard_volume_for_long_sides():
    cfg = bx.BoxAlgebraConfig(dim=2, vol_temp=1e-3)
    side = 100.0 * cfg.vol_temp
    box = const_box([0.1, 0.1], [0.1 + side, 0.1 + side])
    smooth = float(bx.gumbel_log_volume(box, cfg).value)
    hard = math.log(bx.hard_volume(box))
    assert abs(smooth - hard) / abs(hard) < 0.01


def test_gumbel_log_volume_of_degenerate_box_has_closed_form():
    box = const_box([0.4, 0.4, 0.4], [0.4, 0.4, 0.4])
    got = float(bx.gumbel_log_volume(box, CFG).value)
    want = CFG.dim * math.log(CFG.vol_temp * math.log(2.0) + CFG.log_eps)
    assert got == pytest.approx(want, rel=1e-12)


def test_gumbel_log_volume_grows_with_any_side():
    a = const_box([0.2, 0.2, 0.2], [0.5, 0.5, 0.5])
    b = const_box([0.2, 0.2, 0.2], [0.5, 0.5, 0.6])
    assert float(bx.gumbel_log_volume(b, CFG).value) > float(bx.gumbel_log_volume(a, CFG).value)


def test_intersect_with_self_stays_within_smoothing_tolerance():
    box = const_box([0.2, 0.3, 0.4], [0.6, 0.7, 0.8])
    self_int = bx.intersect(box, box, CFG)
    tol = CFG.int_temp * math.log(2.0) + 1e-12
    assert np.all(np.abs(self_int.lower_value - box.lower_value) <= tol)
    assert np.all(np.abs(self_int.upper_value - box.upper_value) <= tol)


def test_intersect_of_hard_nested_boxes_recovers_the_inner_box():
    inner = const_box([0.4, 0.4, 0.4], [0.6, 0.6, 0.6])
    outer = const_box([0.1, 0.1, 0.1], [0.9, 0.9, 0.9])
    cfg = bx.BoxAlgebraConfig(dim=3, int_temp=1e-3)
    got = bx.intersect(inner, outer, cfg)
    assert np.allclose(got.lower_value, inner.lower_value, rtol=0.01)
    assert np.allclose(got.upper_value, inner.upper_value, rtol=0.01)


def test_intersect_of_far_disjoint_boxes_has_negligible_volume():
    a = const_box([0.0, 0.0, 0.0], [0.1, 0.5, 0.5])
    b = const_box([0.9, 0.0, 0.0], [1.0, 0.5, 0.5])
    cfg = bx.BoxAlgebraConfig(dim=3, vol_temp=0.02, int_temp=0.01)
    vol = math.exp(float(bx.sym_affinity(a, b, cfg).value))
    assert vol < 1e-6


def test_intersect_rejects_mixed_dimensions():
    with pytest.raises(ValueError):
        bx.intersect(const_box([0.0], [1.0]), const_box([0, 0], [1, 1]), CFG)


def test_union_box_examples():
    a = const_box([0.0, 0.0], [0.3, 0.3])
    b = const_box([0.5, 0.5], [0.8, 0.8])
    u = bx.union_box(a, b)
    assert np.allclose(u.lower_value, [0.0, 0.0])
    assert np.allclose(u.upper_value, [0.8, 0.8])
    same = bx.union_box(a, a)
    assert np.array_equal(same.lower_value, a.lower_value)
    assert np.array_equal(same.upper_value, a.upper_value)
    ba = bx.union_box(b, a)
    assert np.array_equal(u.lower_value, ba.lower_value)
    assert np.array_equal(u.upper_value, ba.upper_value)


def test_soft_union_is_the_coordinate_mean():
    a = const_box([0.1, 0.2], [0.5, 0.6])
    b = const_box([0.3, 0.4], [0.7, 0.8])
    u = bx.soft_union([a, b])
    assert np.allclose(u.lower_value, [0.2, 0.3])
    assert np.allclose(u.upper_value, [0.6, 0.7])
    single = bx.soft_union([a])
    assert np.allclose(single.lower_value, a.lower_value)
    assert np.allclose(single.upper_value, a.upper_value)
    with pytest.raises(ValueError):
        bx.soft_union([])


def test_soft_union_stays_inside_the_hard_union_envelope():
    rng = np.random.default_rng(2)
    members = []
    for _ in range(5):
        lo = rng.uniform(0, 0.5, size=3)
        members.append(const_box(lo, lo + rng.uniform(0.05, 0.5, size=3)))
    soft = bx.soft_union(members)
    hard_lo = np.min([m.lower_value for m in members], axis=0)
    hard_hi = np.max([m.upper_value for m in members], axis=0)
    assert np.all(soft.lower_value >= hard_lo - 1e-12)
    assert np.all(soft.upper_value <= hard_hi + 1e-12)


def test_sym_affinity_is_exactly_symmetric():
    rng = np.random.default_rng(3)
    for _ in range(1000):
        lo_a = rng.uniform(0, 0.8, size=3)
        lo_b = rng.uniform(0, 0.8, size=3)
        a = const_box(lo_a, lo_a + rng.uniform(0.01, 0.2, size=3))
        b = const_box(lo_b, lo_b + rng.uniform(0.01, 0.2, size=3))
        ab = float(bx.sym_affinity(a, b, CFG).value)
        ba = float(bx.sym_affinity(b, a, CFG).value)
        assert ab == pytest.approx(ba, abs=1e-12)


def test_sym_affinity_with_self_matches_own_volume_up_to_smoothing():
    box = const_box([0.2, 0.2, 0.2], [0.7, 0.7, 0.7])
    self_aff = float(bx.sym_affinity(box, box, CFG).value)
    own = float(bx.gumbel_log_volume(box, CFG).value)
    # self-intersection shifts each corner by at most int_temp*log2
    slack = 2.0 * CFG.dim * CFG.int_temp * math.log(2.0) / 0.3
    assert abs(self_aff - own) <= slack


def test_sym_affinity_of_disjoint_pair_is_below_either_volume():
    a = const_box([0.0, 0.0, 0.0], [0.2, 0.9, 0.9])
    b = const_box([0.8, 0.0, 0.0], [1.0, 0.9, 0.9])
    aff = float(bx.sym_affinity(a, b, CFG).value)
    assert aff < float(bx.gumbel_log_volume(a, CFG).value)
    assert aff < float(bx.gumbel_log_volume(b, CFG).value)


def test_norm_sym_affinity_is_symmetric_and_matches_algebra():
    a = const_box([0.1, 0.1, 0.1], [0.5, 0.5, 0.5])
    b = const_box([0.2, 0.2, 0.2], [0.8, 0.8, 0.8])
    ab = float(bx.norm_sym_affinity(a, b, CFG).value)
    ba = float(bx.norm_sym_affinity(b, a, CFG).value)
    assert ab == pytest.approx(ba, abs=1e-12)
    want = (
        float(bx.sym_affinity(a, b, CFG).value)
        - float(bx.gumbel_log_volume(a, CFG).value)
        - float(bx.gumbel_log_volume(b, CFG).value)
    )
    assert ab == pytest.approx(want, abs=1e-12)


def test_norm_sym_affinity_of_self_is_negative_log_volume():
    box = const_box([0.2, 0.2, 0.2], [0.8, 0.8, 0.8])
    got = float(bx.norm_sym_affinity(box, box, SHARP).value)
    want = -math.log(hard_box_volume(box.lower_value, box.upper_value))
    assert got == pytest.approx(want, rel=1e-3)


def test_norm_sym_affinity_drops_when_one_box_grows_without_more_overlap():
    a = const_box([0.1, 0.1, 0.1], [0.4, 0.4, 0.4])
    b_small = const_box([0.3, 0.3, 0.3], [0.6, 0.6, 0.6])
    b_big = const_box([0.3, 0.3, 0.3], [0.9, 0.9, 0.9])
    cfg = bx.BoxAlgebraConfig(dim=3, vol_temp=1e-3, int_temp=1e-3)
    small = float(bx.norm_sym_affinity(a, b_small, cfg).value)
    big = float(bx.norm_sym_affinity(a, b_big, cfg).value)
    assert big < small


def test_asym_containment_of_self_is_near_zero():
    box = const_box([0.2, 0.2, 0.2], [0.8, 0.8, 0.8])
    got = float(bx.asym_containment(box, box, SHARP).value)
    assert got == pytest.approx(0.0, abs=1e-2)


def test_asym_containment_matches_hard_volume_ratio_when_nested():
    child = const_box([0.4, 0.4, 0.4], [0.6, 0.6, 0.6])
    parent = const_box([0.1, 0.1, 0.1], [0.9, 0.9, 0.9])
    c_in_p = float(bx.asym_containment(child, parent, SHARP).value)
    p_in_c = float(bx.asym_containment(parent, child, SHARP).value)
    want = math.log(
        hard_box_volume(child.lower_value, child.upper_value)
        / hard_box_volume(parent.lower_value, parent.upper_value)
    )
    assert c_in_p == pytest.approx(want, rel=1e-3)
    assert p_in_c == pytest.approx(0.0, abs=1e-2)


def test_asym_containment_identity_links_both_directions():
    rng = np.random.default_rng(4)
    for _ in range(100):
        lo_a = rng.uniform(0, 0.7, size=3)
        lo_b = rng.uniform(0, 0.7, size=3)
        a = const_box(lo_a, lo_a + rng.uniform(0.05, 0.3, size=3))
        b = const_box(lo_b, lo_b + rng.uniform(0.05, 0.3, size=3))
        lhs = float(bx.asym_containment(a, b, CFG).value) + float(
            bx.gumbel_log_volume(b, CFG).value
        )
        rhs = float(bx.asym_containment(b, a, CFG).value) + float(
            bx.gumbel_log_volume(a, CFG).value
        )
        assert lhs == pytest.approx(rhs, abs=1e-9)


def test_intersection_volume_bound():
    rng = np.random.default_rng(5)
    bound_slack = CFG.dim * CFG.int_temp * math.log(2.0)
    for _ in range(200):
        lo_a = rng.uniform(0, 0.6, size=3)
        lo_b = rng.uniform(0, 0.6, size=3)
        a = const_box(lo_a, lo_a + rng.uniform(0.05, 0.4, size=3))
        b = const_box(lo_b, lo_b + rng.uniform(0.05, 0.4, size=3))
        aff = float(bx.sym_affinity(a, b, CFG).value)
        va = float(bx.gumbel_log_volume(a, CFG).value)
        vb = float(bx.gumbel_log_volume(b, CFG).value)
        assert aff <= min(va, vb) + bound_slack + 1e-9


def test_pairwise_ops_match_their_scalar_forms():
    rng = np.random.default_rng(6)
    lo_a = rng.uniform(0, 0.5, size=(4, 3))
    hi_a = lo_a + rng.uniform(0.05, 0.4, size=(4, 3))
    lo_b = rng.uniform(0, 0.5, size=(5, 3))
    hi_b = lo_b + rng.uniform(0.05, 0.4, size=(5, 3))
    a_batch = bx.box_from_coords(lo_a, hi_a)
    b_batch = bx.box_from_coords(lo_b, hi_b)
    sym = bx.pairwise_sym_affinity(a_batch, b_batch, CFG).value
    norm = bx.pairwise_norm_sym_affinity(a_batch, b_batch, CFG).value
    asym = bx.pairwise_asym_containment(a_batch, b_batch, CFG).value
    for i in range(4):
        for j in range(5):
            a = const_box(lo_a[i], hi_a[i])
            b = const_box(lo_b[j], hi_b[j])
            assert sym[i, j] == pytest.approx(float(bx.sym_affinity(a, b, CFG).value), abs=1e-10)
            assert norm[i, j] == pytest.approx(
                float(bx.norm_sym_affinity(a, b, CFG).value), abs=1e-10
            )
            assert asym[i, j] == pytest.approx(
                float(bx.asym_containment(a, b, CFG).value), abs=1e-10
            )


def test_numpy_fast_paths_agree_with_the_graph():
    rng = np.random.default_rng(7)
    lo_a = rng.uniform(0, 0.5, size=(6, 3))
    hi_a = lo_a + rng.uniform(0.05, 0.4, size=(6, 3))
    lo_b = rng.uniform(0, 0.5, size=(4, 3))
    hi_b = lo_b + rng.uniform(0.05, 0.4, size=(4, 3))
    a = bx.box_from_coords(lo_a, hi_a)
    b = bx.box_from_coords(lo_b, hi_b)
    assert np.allclose(
        bx.np_log_volume(lo_a, hi_a, CFG), bx.gumbel_log_volume(a, CFG).value, atol=1e-12
    )
    assert np.allclose(
        bx.np_pairwise_sym(lo_a, hi_a, lo_b, hi_b, CFG),
        bx.pairwise_sym_affinity(a, b, CFG).value,
        atol=1e-12,
    )
    assert np.allclose(
        bx.np_pairwise_norm_sym(lo_a, hi_a, lo_b, hi_b, CFG),
        bx.pairwise_norm_sym_affinity(a, b, CFG).value,
        atol=1e-12,
    )
    assert np.allclose(
        bx.np_pairwise_asym(lo_a, hi_a, lo_b, hi_b, CFG),
        bx.pairwise_asym_containment(a, b, CFG).value,
        atol=1e-12,
    )


def test_hard_limit_consistency_against_oracles():
    # sharp temperatures + well separated coordinates: the smooth operations
    # collapse onto exact max/min/volume arithmetic
    rng = np.random.default_rng(8)
    grid = np.arange(0.05, 1.0, 0.05)
    for _ in range(100):
        cols = np.stack([rng.choice(len(grid), size=4, replace=False) for _ in range(3)])
        vals = np.sort(grid[cols], axis=1)
        pick = rng.random(3) < 0.5
        lo_a = np.where(pick, vals[:, 0], vals[:, 1])
        hi_a = np.where(pick, vals[:, 2], vals[:, 3])
        lo_b = np.where(pick, vals[:, 1], vals[:, 0])
        hi_b = np.where(pick, vals[:, 3], vals[:, 2])
        a = const_box(lo_a, hi_a)
        b = const_box(lo_b, hi_b)
        got_vol = math.exp(float(bx.gumbel_log_volume(a, SHARP).value))
        assert got_vol == pytest.approx(hard_box_volume(lo_a, hi_a), rel=1e-3)
        int_lo, int_hi = hard_intersection(lo_a, hi_a, lo_b, hi_b)
        smooth = bx.intersect(a, b, SHARP)
        assert np.allclose(smooth.lower_value, int_lo, rtol=1e-3, atol=1e-6)
        assert np.allclose(smooth.upper_value, int_hi, rtol=1e-3, atol=1e-6)
        want_overlap = hard_box_volume(int_lo, int_hi)
        got_overlap = math.exp(float(bx.sym_affinity(a, b, SHARP).value))
        if want_overlap > 0:
            assert got_overlap == pytest.approx(want_overlap, rel=1e-3)
        else:
            assert got_overlap < 1e-6


def test_gather_boxes_selects_rows_and_routes_gradients():
    pmin = ad.parameter(np.zeros((4, 2)))
    psize = ad.parameter(np.zeros((4, 2)))
    batch = bx.make_box(pmin, psize)
    picked = bx.gather_boxes(batch, np.array([2, 0, 2]))
    assert picked.lower_value.shape == (3, 2)
    ad.backward(ad.reduce_sum(picked.lower))
    assert pmin.grad is not None
    # row 2 was picked twice, so its gradient doubles row 0's
    assert np.allclose(pmin.grad[2], 2.0 * pmin.grad[0])
    assert np.allclose(pmin.grad[1], 0.0)


def test_volume_gradients_match_finite_differences():
    from oracles import gradcheck

    def build(pmin, psize):
        box = bx.make_box(pmin, psize)
        return bx.gumbel_log_volume(box, CFG)

    rng = np.random.default_rng(9)
    arrays = [rng.normal(0, 1, size=(4, 3)), rng.normal(-1, 1, size=(4, 3))]
    assert gradcheck(build, arrays) < 1e-4


def test_affinity_gradients_match_finite_differences():
    from oracles import gradcheck

    def build(pa_min, pa_size, pb_min, pb_size):
        a = bx.make_box(pa_min, pa_size)
        b = bx.make_box(pb_min, pb_size)
        return bx.pairwise_norm_sym_affinity(a, b, CFG)

    rng = np.random.default_rng(10)
    arrays = [rng.normal(0, 1, size=(3, 3)) for _ in range(2)] + [
        rng.normal(0, 1, size=(2, 3)) for _ in range(2)
    ]
    assert gradcheck(build, arrays) < 1e-4


def test_fuzzed_boxes_stay_finite():
    rng = np.random.default_rng(11)
    pmin = rng.normal(0, 5, size=(20_000, 4))
    psize = rng.normal(0, 5, size=(20_000, 4))
    cfg = bx.BoxAlgebraConfig(dim=4)
    box = bx.make_box(pmin, psize)
    vol = bx.gumbel_log_volume(box, cfg).value
    assert np.all(np.isfinite(vol))
    lo, hi = box.lower_value[:200], box.upper_value[:200]
    assert np.all(np.isfinite(bx.np_pairwise_sym(lo, hi, lo, hi, cfg)))
    assert np.all(np.isfinite(bx.np_pairwise_norm_sym(lo, hi, lo, hi, cfg)))
    assert np.all(np.isfinite(bx.np_pairwise_asym(lo, hi, lo, hi, cfg)))


coords = st.floats(min_value=-8.0, max_value=8.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(st.lists(coords, min_size=3, max_size=3), st.lists(coords, min_size=3, max_size=3))
def test_property_ordering_invariant(pmin, psize):
    box = bx.make_box(np.array(pmin), np.array(psize))
    assert np.all(box.lower_value >= 0.0)
    assert np.all(box.lower_value <= box.upper_value)
    assert np.all(box.upper_value <= 1.0)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(coords, min_size=3, max_size=3),
    st.lists(coords, min_size=3, max_size=3),
    st.lists(coords, min_size=3, max_size=3),
    st.lists(coords, min_size=3, max_size=3),
)
def test_property_symmetry_and_identity(amin, asize, bmin, bsize):
    a = bx.make_box(np.array(amin), np.array(asize))
    b = bx.make_box(np.array(bmin), np.array(bsize))
    ab = float(bx.sym_affinity(a, b, CFG).value)
    ba = float(bx.sym_affinity(b, a, CFG).value)
    assert ab == pytest.approx(ba, abs=1e-10)
    lhs = float(bx.asym_containment(a, b, CFG).value) + float(bx.gumbel_log_volume(b, CFG).value)
    rhs = float(bx.asym_containment(b, a, CFG).value) + float(bx.gumbel_log_volume(a, CFG).value)
    assert lhs == pytest.approx(rhs, abs=1e-8)
