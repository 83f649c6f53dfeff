import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coco_reference import ref_coco
from rgbp.detect_eval import Detection, GroundTruthBox, average_precision, coco_ap, greedy_match, iou, iou_matrix
from rgbp.errors import ValidationError


def test_iou_examples():
    assert iou((0, 0, 10, 10), (0, 0, 10, 10)) == 1.0
    assert iou((0, 0, 10, 10), (20, 20, 5, 5)) == 0.0
    assert iou((0, 0, 10, 10), (10, 0, 10, 10)) == 0.0
    assert iou((0, 0, 10, 10), (5, 0, 10, 10)) == pytest.approx(50 / 150)
    assert iou_matrix([(0, 0, 10, 10)], [(5, 0, 10, 10)])[0, 0] == pytest.approx(1 / 3)


def test_matching_rules():
    gt = [GroundTruthBox((0, 0, 10, 10))]
    d = [Detection((2.5, 0, 10, 10), 0.9)]  # IoU 0.6
    assert greedy_match(d, gt, 0.5) == [True]
    assert greedy_match(d, gt, 0.75) == [False]
    two = [Detection((1, 0, 10, 10), 0.9), Detection((0, 0, 10, 10 * 0.7), 0.8)]
    assert iou(two[0].box, gt[0].box) == pytest.approx(0.9 / 1.1)
    assert greedy_match(two, gt, 0.5) == [True, False]


def test_ap_examples():
    assert average_precision([True, True], 2) == 1.0
    assert average_precision([True, False], 2) == pytest.approx(51 / 101)
    assert average_precision([], 3) == 0.0


def test_coco_hand_cases():
    gt = [GroundTruthBox((0, 0, 10, 10))]
    res = coco_ap([Detection((2.5, 0, 10, 10), 0.9)], gt)
    assert res.ap50 == 1.0 and res.ap75 == 0.0 and res.ap == pytest.approx(0.3)
    exact = coco_ap([Detection(g.box, 1.0) for g in gt], gt)
    assert (exact.ap, exact.ap50, exact.ap75) == (1.0, 1.0, 1.0)
    empty = coco_ap([], gt)
    assert (empty.ap, empty.ap50, empty.ap75) == (0.0, 0.0, 0.0)
    assert exact.row() == "1.0000 1.0000 1.0000"


def test_two_gt_one_tp_one_fp():
    gts = [GroundTruthBox((0, 0, 10, 10)), GroundTruthBox((50, 50, 10, 10))]
    dets = [Detection((0, 0, 10, 10), 0.9), Detection((100, 100, 5, 5), 0.8)]
    assert coco_ap(dets, gts, image_ids=[0]).ap50 == pytest.approx(51 / 101)


def test_unknown_image_and_clipping():
    gts = [GroundTruthBox((-5, 0, 10, 10), "a")]
    with pytest.raises(ValidationError):
        coco_ap([Detection((0, 0, 5, 5), 0.5, "b")], gts)
    with pytest.warns(UserWarning):
        res = coco_ap([Detection((0, 0, 5, 10), 0.5, "a")], gts, image_sizes={"a": (20, 20)})
    assert res.ap == 1.0
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        coco_ap([], [GroundTruthBox((0, 0, 5, 5), "a")], image_sizes={"a": (20, 20)})


def test_invalid_boxes():
    with pytest.raises(ValidationError):
        Detection((0, 0, 0, 5), 0.5)
    with pytest.raises(ValidationError):
        Detection((0, 0, 5, 5), 1.5)
    with pytest.raises(ValidationError):
        GroundTruthBox((0, 0, 5, -1))


box = st.tuples(st.integers(0, 30), st.integers(0, 30), st.integers(1, 15), st.integers(1, 15))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), box), max_size=6),
       st.lists(st.tuples(st.integers(0, 2), box, st.integers(0, 20)), max_size=10))
def test_matches_reference(gts, dets):
    g = [GroundTruthBox(tuple(map(float, b)), i) for i, b in gts]
    d = [Detection(tuple(map(float, b)), s / 20, i) for i, b, s in dets]
    res = coco_ap(d, g, image_ids=[0, 1, 2])
    ref = ref_coco([(x.image_id, x.box, x.score) for x in d], [(x.image_id, x.box) for x in g])
    assert abs(res.ap - ref[0]) <= 1e-9 and abs(res.ap50 - ref[1]) <= 1e-9 and abs(res.ap75 - ref[2]) <= 1e-9


def test_ap_bounds_and_order_invariance(rng):
    g = [GroundTruthBox((float(x), float(y), 8.0, 8.0)) for x, y in rng.integers(0, 40, (5, 2))]
    d = [Detection((float(x), float(y), 8.0, 8.0), float(s)) for (x, y), s in
         zip(rng.integers(0, 40, (8, 2)), rng.uniform(0, 1, 8))]
    a = coco_ap(d, g)
    b = coco_ap(d[::-1], g)
    assert 0.0 <= a.ap <= 1.0 and a.ap == b.ap
    assert a.ap50 >= a.ap75
