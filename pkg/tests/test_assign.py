import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hyperspod.assign import (
    AssignResult,
    LossWeights,
    box_iou,
    ccdn_generate,
    cdn_generate,
    combined_cost,
    focal_cls_cost,
    focal_loss,
    generalized_box_iou,
    giou,
    hungarian,
    hybrid_assign,
    l1_cost,
    nms,
    nms_indices,
    set_loss,
)
from hyperspod.errors import Infeasible
from hyperspod.hsicube import BBox, Detection


def brute_force_min(cost):
    g, p = cost.shape
    return min(sum(cost[i, c] for i, c in enumerate(cols)) for cols in itertools.permutations(range(p), g))


def test_iou_and_giou_hand_values():
    a = np.array([[0.5, 0.5, 1.0, 1.0]])
    b = np.array([[1.0, 0.5, 1.0, 1.0]])
    assert box_iou(a, b)[0, 0] == pytest.approx(1 / 3)
    far = np.array([[3.5, 0.5, 1.0, 1.0]])
    # hull 4x1, union 2: GIoU = 0 - (4 - 2) / 4
    assert generalized_box_iou(a, far)[0, 0] == pytest.approx(-0.5)
    assert giou(BBox(0.5, 0.5, 1, 1), BBox(0.5, 0.5, 1, 1)) == 1.0


@given(st.lists(st.tuples(*[st.floats(0.05, 0.95)] * 2, *[st.floats(0.01, 0.5)] * 2), min_size=1, max_size=5),
       st.lists(st.tuples(*[st.floats(0.05, 0.95)] * 2, *[st.floats(0.01, 0.5)] * 2), min_size=1, max_size=5))
def test_giou_bounds_and_symmetry(a, b):
    a, b = np.array(a), np.array(b)
    iou, g = box_iou(a, b), generalized_box_iou(a, b)
    assert np.all((iou >= 0) & (iou <= 1 + 1e-12))
    assert np.all((g >= -1 - 1e-12) & (g <= iou + 1e-12))
    assert np.allclose(generalized_box_iou(b, a), g.T)


def test_focal_cost_hand_value():
    assert focal_cls_cost(np.array([0.5, 0.2]), 0) == pytest.approx(-0.25 * 0.25 * np.log(0.5))
    assert l1_cost([0.1, 0.2, 0.3, 0.4], [0.2, 0.2, 0.3, 0.1]) == pytest.approx(0.4)


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        g = int(rng.integers(1, 7))
        p = int(rng.integers(g, 9))
        cost = rng.uniform(0, 10, (g, p))
        pairs = hungarian(cost)
        assert sorted(r for r, _ in pairs) == list(range(g))
        assert len({c for _, c in pairs}) == g
        assert sum(cost[r, c] for r, c in pairs) == pytest.approx(brute_force_min(cost), abs=1e-9)


def test_hungarian_never_worse_than_random_injections():
    rng = np.random.default_rng(1)
    cost = rng.uniform(0, 1, (5, 12))
    best = sum(cost[r, c] for r, c in hungarian(cost))
    for _ in range(1000):
        cols = rng.permutation(12)[:5]
        assert best <= cost[np.arange(5), cols].sum() + 1e-12


def test_hungarian_errors():
    with pytest.raises(Infeasible):
        hungarian(np.ones((3, 2)))
    with pytest.raises(ValueError):
        hungarian(np.array([[np.inf]]))


def _random_scene(rng, n_gt, n_pred):
    gts = np.column_stack([rng.uniform(0.1, 0.9, (n_gt, 2)), rng.uniform(0.02, 0.1, (n_gt, 2))])
    jitter = rng.normal(0, 0.002, (n_pred, 4))
    src = gts[rng.integers(0, n_gt, n_pred)]
    preds = np.clip(src + jitter, 1e-3, 1)
    scores = rng.uniform(0, 1, (n_pred, 3))
    return gts, rng.integers(0, 3, n_gt), preds, scores


@pytest.mark.parametrize("weights", [None, LossWeights()])
def test_hybrid_assign_contract(weights):
    rng = np.random.default_rng(2)
    for _ in range(300):
        n_gt = int(rng.integers(1, 6))
        gts, cls, preds, scores = _random_scene(rng, n_gt, int(rng.integers(n_gt, 40)))
        res = hybrid_assign(gts, cls, preds, scores, weights, 0.95, 9)
        forced = [g for (g, _), o in zip(res.pairs, res.origins) if o == "forced"]
        assert sorted(forced) == list(range(n_gt))
        preds_used = [p for _, p in res.pairs]
        assert len(preds_used) == len(set(preds_used))
        iou = box_iou(gts, preds)
        counts = res.positives_per_gt(n_gt)
        assert np.all((counts >= 1) & (counts <= 10))
        for (g, p), o in zip(res.pairs, res.origins):
            if o == "dynamic":
                assert iou[g, p] > 0.95


def test_forced_matching_uses_unweighted_sum_by_default():
    rng = np.random.default_rng(3)
    gts, cls, preds, scores = _random_scene(rng, 3, 8)
    cost = combined_cost(preds, scores, gts, cls, LossWeights.unweighted())
    manual = (focal_cls_cost(scores, cls) + l1_cost(preds, gts) + 1 - generalized_box_iou(preds, gts)).T
    assert np.allclose(cost, manual)
    res = hybrid_assign(gts, cls, preds, scores, tau_iou=2.0)
    assert set(res.pairs) == set(hungarian(cost))


def test_dynamic_pairs_sorted_and_capped():
    gt = np.array([[0.5, 0.5, 0.2, 0.2]])
    preds = np.array([[0.5, 0.5, 0.2, 0.2 * (1 - 0.002 * k)] for k in range(15)])
    res = hybrid_assign(gt, [0], preds, np.full((15, 1), 0.5), t_cap=9)
    dyn = [p for (_, p), o in zip(res.pairs, res.origins) if o == "dynamic"]
    assert len(dyn) == 9
    iou = box_iou(gt, preds)[0]
    assert list(iou[dyn]) == sorted(iou[dyn], reverse=True)


def test_empty_gt():
    assert hybrid_assign(np.zeros((0, 4)), [], np.ones((3, 4)) * 0.5, np.ones((3, 2))) == AssignResult((), ())


def test_ccdn_regions():
    rng = np.random.default_rng(4)
    gts = np.column_stack([rng.uniform(0.2, 0.8, (50, 2)), rng.uniform(0.01, 0.2, (50, 2))])
    qs = ccdn_generate(gts, 0.5, 1.5, 200, rng)
    assert len(qs) == 2 * 50 * 200
    for q in qs:
        cx, cy, w, h = gts[q.gt_index]
        dx, dy = abs(q.box.cx - cx) / w, abs(q.box.cy - cy) / h
        if q.polarity == "positive":
            assert dx < 0.25 and dy < 0.25
        else:
            assert 0.25 <= dx + 1e-12 and dx <= 0.5 + 1e-12 and 0.25 <= dy + 1e-12 and dy <= 0.5 + 1e-12
        assert 1e-4 <= q.box.w <= 2.5 * w + 1e-12 and 1e-4 <= q.box.h <= 2.5 * h + 1e-12


@given(st.floats(0.001, 0.999), st.floats(0.001, 0.999), st.floats(0.001, 0.4), st.integers(0, 2**32 - 1))
def test_ccdn_boxes_valid_near_borders(cx, cy, w, seed):
    for q in ccdn_generate([[cx, cy, w, w]], n_pairs=5, rng=np.random.default_rng(seed)):
        b = q.box
        assert 0 < b.cx < 1 and 0 < b.cy < 1 and 0 < b.w <= 1 and 0 < b.h <= 1
        if q.polarity == "negative":
            # never inside the positive region
            assert abs(b.cx - cx) >= 0.25 * w - 1e-9 or abs(b.cy - cy) >= 0.25 * w - 1e-9 or \
                min(cx, cy, 1 - cx, 1 - cy) < 0.5 * w


def test_ccdn_rejects_bad_taus():
    with pytest.raises(ValueError):
        ccdn_generate([[0.5, 0.5, 0.1, 0.1]], tau1=0)


def test_cdn_reference_generator():
    qs = cdn_generate([[0.5, 0.5, 0.2, 0.2]], n_pairs=50, rng=np.random.default_rng(5))
    assert {q.polarity for q in qs} == {"positive", "negative"}
    assert all(0 < q.box.cx < 1 for q in qs)


def test_focal_loss_and_set_loss():
    assert focal_loss([0.5], [1]) == pytest.approx(-0.25 * 0.25 * np.log(0.5))
    assert focal_loss([0.5], [0]) == pytest.approx(-0.75 * 0.25 * np.log(0.5))
    gt = np.array([[0.5, 0.5, 0.2, 0.2]])
    res = AssignResult(((0, 0),), ("forced",))
    parts = set_loss(gt, [0], gt, np.array([[1 - 1e-12]]), res)
    assert parts["l1"] == 0 and parts["giou"] == pytest.approx(0) and parts["cls"] < 1e-9


def test_nms_basic_and_tie_break():
    boxes = np.array([[5, 5, 2, 2], [5.1, 5, 2, 2], [20, 20, 2, 2]], float)
    assert nms_indices(boxes, [0.9, 0.8, 0.7], 0.01).tolist() == [0, 2]
    assert nms_indices(boxes, [0.5, 0.5, 0.5], 0.01).tolist() == [0, 2]


@given(st.permutations(range(6)))
def test_nms_order_invariant_for_equal_disjoint_boxes(perm):
    dets = [Detection(BBox(5.0 * i + 2, 3, 2, 2), 0, 0.5) for i in range(6)]
    shuffled = [dets[i] for i in perm]
    assert set(nms(shuffled)) == set(dets)


def test_nms_is_class_aware():
    a = Detection(BBox(5, 5, 2, 2), 0, 0.9)
    b = Detection(BBox(5, 5, 2, 2), 1, 0.8)
    assert nms([a, b]) == [a, b]
    assert nms([a, b], class_aware=False) == [a]


def test_loss_weights_validation():
    assert LossWeights.unweighted() == LossWeights(1, 1, 1)
    with pytest.raises(ValueError):
        LossWeights(-1, 1, 1)
