import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dyntile.fusion import Detection, FusionConfig, FusionError, greedy_nms, iou, merge_tile_detections
from dyntile.tiler import BoxF, Frame, plan_tiles

from helpers import random_detections, reference_nms, shapely_iou

O = Frame.ORIGINAL


def det(x, y, w, h, score=0.9, cls=0, frame=O):
    return Detection(BoxF(x, y, w, h, frame), score, cls)


def test_iou_examples():
    assert iou(BoxF(0, 0, 10, 10), BoxF(0, 0, 10, 10)) == 1.0
    assert iou(BoxF(0, 0, 10, 10), BoxF(10, 0, 10, 10)) == 0.0  # touching edges
    assert iou(BoxF(0, 0, 10, 10), BoxF(5, 0, 10, 10)) == pytest.approx(1 / 3)
    assert iou(BoxF(0, 0, 0, 10), BoxF(0, 0, 0, 10)) == 0.0


def test_iou_refuses_mixed_frames():
    with pytest.raises(FusionError):
        iou(BoxF(0, 0, 1, 1, Frame.TILE), BoxF(0, 0, 1, 1, Frame.ORIGINAL))


@given(st.lists(st.integers(0, 100), min_size=8, max_size=8))
def test_iou_matches_polygon_reference(v):
    a = BoxF(v[0], v[1], v[2], v[3])
    b = BoxF(v[4], v[5], v[6], v[7])
    assert iou(a, b) == pytest.approx(shapely_iou(a, b), abs=1e-12)
    assert iou(a, b) == iou(b, a)


def test_nms_examples():
    a, b = det(0, 0, 10, 10, 0.9), det(1, 1, 10, 10, 0.8)
    assert greedy_nms([a, b], 0.5) == [a]
    c = det(1, 1, 10, 10, 0.8, cls=1)
    assert greedy_nms([a, c], 0.5) == [a, c]  # class-aware
    assert greedy_nms([], 0.5) == []


def test_nms_tie_breaks_by_area_then_position():
    small, big = det(0, 0, 10, 10, 0.5), det(0, 0, 11, 11, 0.5)
    assert greedy_nms([small, big], 0.5) == [big]
    first, second = det(0, 0, 10, 10, 0.5), det(0, 0, 10, 10, 0.5)
    out = greedy_nms([first, second], 0.5)
    assert len(out) == 1 and out[0] is first


def test_nms_threshold_is_inclusive_keep():
    # IoU exactly 1/3 with threshold 1/3: kept
    a, b = det(0, 0, 10, 10, 0.9), det(5, 0, 10, 10, 0.8)
    assert len(greedy_nms([a, b], iou(a.box, b.box))) == 2


def test_nms_boundaries():
    rng = np.random.default_rng(0)
    dets = random_detections(rng, 40)
    # keep iff IoU <= T_m, so T_m = 1 suppresses nothing, not even exact duplicates
    dup = dets + [dets[0]]
    assert len(greedy_nms(dup, 1.0)) == len(dup)
    # T_m = 0 leaves no two same-class survivors with any overlap
    kept = greedy_nms(dets, 0.0)
    assert all(a.class_id != b.class_id or iou(a.box, b.box) == 0 for i, a in enumerate(kept) for b in kept[i + 1:])
    # T_d = 1 leaves only perfect-confidence detections
    merged = merge_tile_detections([(plan_tiles(100, 100, 640, 0.2).tiles[0],
                                     [det(0, 0, 5, 5, 0.99, frame=Frame.TILE), det(20, 20, 5, 5, 1.0, frame=Frame.TILE)])],
                                   1.0, FusionConfig(0.5, 1.0))
    assert [d.score for d in merged] == [1.0]


def test_nms_refuses_mixed_frames():
    with pytest.raises(FusionError):
        greedy_nms([det(0, 0, 1, 1), det(0, 0, 1, 1, frame=Frame.TILE)], 0.5)


def test_nms_matches_reference_on_random_instances():
    rng = np.random.default_rng(1234)
    for _ in range(300):
        dets = random_detections(rng, int(rng.integers(0, 30)))
        T = float(rng.choice([0.0, 0.3, 0.5, 0.7, 1.0]))
        got = [id(d) for d in greedy_nms(dets, T)]
        want = [id(dets[i]) for i in reference_nms(dets, T)]
        assert got == want


@given(st.integers(0, 2**32 - 1))
def test_nms_idempotent_and_no_same_class_overlap(seed):
    rng = np.random.default_rng(seed)
    dets = random_detections(rng, 25)
    once = greedy_nms(dets, 0.5)
    assert greedy_nms(once, 0.5) == once
    for i, a in enumerate(once):
        for b in once[i + 1:]:
            if a.class_id == b.class_id:
                assert iou(a.box, b.box) <= 0.5


def test_detection_validation():
    with pytest.raises(FusionError):
        det(0, 0, 1, 1, score=1.5)
    with pytest.raises(FusionError):
        det(0, 0, 1, 1, cls=-1)


def test_merge_collapses_duplicate_from_overlapping_tiles():
    plan = plan_tiles(1152, 1152, 640, 0.2)
    left, right = plan.tiles[0], plan.tiles[1]  # row 0, cols 0 and 1; share x in [512, 640)
    # same object at original x=540..580, y=100..140, seen by both tiles
    in_left = Detection(BoxF(540, 100, 40, 40, Frame.TILE), 0.9, 2)
    in_right = Detection(BoxF(28, 100, 40, 40, Frame.TILE), 0.8, 2)
    merged = merge_tile_detections([(left, [in_left]), (right, [in_right])], 1.0)
    assert len(merged) == 1
    assert merged[0].box.as_xywh() == [540, 100, 40, 40]
    assert merged[0].box.frame is Frame.ORIGINAL
    assert merged[0].source_tile == (0, 0)


def test_merge_applies_scale_and_confidence_threshold():
    plan = plan_tiles(1152, 648, 640, 0.2)
    t = plan.tiles[1]
    keep = Detection(BoxF(10, 10, 30, 30, Frame.TILE), 0.3, 0)
    drop = Detection(BoxF(100, 100, 30, 30, Frame.TILE), 0.2, 0)
    merged = merge_tile_detections([(t, [keep, drop])], 0.3)
    assert len(merged) == 1
    b = merged[0].box
    assert (b.x, b.y, b.w, b.h) == pytest.approx(((t.x_off + 10) / 0.3, 10 / 0.3, 100, 100))


def test_fusion_config_validation():
    with pytest.raises(FusionError):
        FusionConfig(1.5, 0.25)
