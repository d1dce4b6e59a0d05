"""Detection post-processing: letterbox, decode, suppression, pipeline."""
import numpy as np
import pytest

from yotor.builder import build
from yotor.detect import (Detection, box_iou, decode, draw_detections,
                          letterbox, nms, run_pipeline, scale_boxes, to_input)
from oracles import decode_scalar, nms_quadratic


# ----------------------------------------------------------------------
# letterbox and coordinate transforms
# ----------------------------------------------------------------------
def test_letterbox_identity_when_sized(rng):
    img = rng.integers(0, 255, (64, 64, 3), dtype=np.uint8)
    out, ratio, pad = letterbox(img, (64, 64))
    assert ratio == 1.0 and pad == (0.0, 0.0)
    np.testing.assert_array_equal(out, img)


def test_letterbox_pads_shorter_side(rng):
    img = rng.integers(0, 255, (240, 320, 3), dtype=np.uint8)
    out, ratio, pad = letterbox(img, (320, 320))
    assert out.shape == (320, 320, 3)
    assert ratio == 1.0
    assert pad == (0.0, 40.0)
    assert np.all(out[:40] == 114) and np.all(out[280:] == 114)
    np.testing.assert_array_equal(out[40:280], img)


def test_letterbox_odd_padding_split(rng):
    img = rng.integers(0, 255, (30, 64, 3), dtype=np.uint8)
    out, ratio, pad = letterbox(img, (32, 32))
    assert out.shape == (32, 32, 3)
    assert ratio == 0.5
    # 17 total pad rows: 8 on top, 9 on the bottom
    assert pad == (0.0, 8.0)
    assert np.all(out[:8] == 114) and np.all(out[23:] == 114)


def test_letterbox_upscales(rng):
    img = rng.integers(0, 255, (16, 16, 3), dtype=np.uint8)
    out, ratio, pad = letterbox(img, (64, 64))
    assert ratio == 4.0 and out.shape == (64, 64, 3)


def test_scale_boxes_inverts_letterbox():
    ratio, pad = 0.5, (0.0, 8.0)
    orig = np.array([[10.0, 4.0, 50.0, 22.0], [0.0, 0.0, 64.0, 30.0]])
    boxed = orig * ratio
    boxed[:, [0, 2]] += pad[0]
    boxed[:, [1, 3]] += pad[1]
    back = scale_boxes(boxed, ratio, pad, (30, 64))
    np.testing.assert_allclose(back, orig, atol=1e-9)


def test_scale_boxes_clips_to_image():
    out = scale_boxes(np.array([[-5.0, -5.0, 900.0, 900.0]]), 1.0, (0.0, 0.0),
                      (100, 200))
    np.testing.assert_array_equal(out, [[0.0, 0.0, 200.0, 100.0]])
    assert scale_boxes(np.zeros((0, 4)), 1.0, (0, 0), (10, 10)).shape == (0, 4)


def test_to_input_layout(rng):
    img = rng.integers(0, 255, (8, 6, 3), dtype=np.uint8)
    x = to_input(img)
    assert x.shape == (1, 3, 8, 6) and x.dtype == np.float32
    np.testing.assert_allclose(x.data[0, 1], img[:, :, 1] / 255.0, atol=1e-7)
    assert x.data.min() >= 0.0 and x.data.max() <= 1.0


# ----------------------------------------------------------------------
# IoU
# ----------------------------------------------------------------------
def test_box_iou_hand_values():
    a = np.array([[0, 0, 2, 2]], dtype=np.float64)
    b = np.array([[0, 0, 2, 2], [1, 0, 3, 2], [5, 5, 6, 6], [0, 0, 0, 0]],
                 dtype=np.float64)
    got = box_iou(a, b)[0]
    np.testing.assert_allclose(got, [1.0, 1.0 / 3.0, 0.0, 0.0])
    # degenerate vs degenerate: zero union stays zero, not NaN
    z = np.array([[1, 1, 1, 1]], dtype=np.float64)
    assert box_iou(z, z)[0, 0] == 0.0


def test_box_iou_matches_scalar(rng):
    from oracles import iou_xyxy
    pts = rng.uniform(0, 40, (12, 2, 2))
    boxes = np.concatenate([pts.min(1), pts.max(1)], axis=1)
    mat = box_iou(boxes, boxes)
    for i in range(12):
        for j in range(12):
            assert abs(mat[i, j] - iou_xyxy(boxes[i], boxes[j])) < 1e-12


# ----------------------------------------------------------------------
# decode vs scalar reference
# ----------------------------------------------------------------------
def _random_levels(rng, b=2, nc=3, grids=((4, 4), (2, 2)), na=3, scale=2.0):
    return [rng.normal(0, scale, (b, na, h, w, 5 + nc)).astype(np.float32)
            for h, w in grids]


@pytest.mark.parametrize("multi_label", [True, False])
@pytest.mark.parametrize("conf", [0.001, 0.3])
def test_decode_matches_scalar(multi_label, conf, rng):
    levels = _random_levels(rng)
    anchors = np.array([[[16, 16], [24, 18], [18, 28]],
                        [[32, 32], [44, 32], [32, 48]]], dtype=np.float32)
    got = decode(levels, anchors, (8, 16), conf, multi_label=multi_label)
    want = decode_scalar(levels, anchors, (8, 16), conf, multi_label=multi_label)
    assert len(got) == len(want) == 2
    for (gb, gs, gc), (wb, ws, wc) in zip(got, want):
        assert gb.shape == wb.shape
        np.testing.assert_allclose(gb, wb, atol=1e-6)
        np.testing.assert_allclose(gs, ws, atol=1e-9)
        np.testing.assert_array_equal(gc, wc)


def test_decode_empty_when_nothing_clears(rng):
    levels = _random_levels(rng)
    for lv in levels:
        lv[..., 4] = -20.0
    anchors = np.ones((2, 3, 2), dtype=np.float32) * 16
    for boxes, scores, classes in decode(levels, anchors, (8, 16), 0.001):
        assert boxes.shape == (0, 4) and scores.shape == (0,)
        assert classes.dtype == np.int64


def test_decode_box_geometry():
    # one hot cell with known logits; zero logits mean center offset
    # (2*0.5-0.5) = 0.5 cells and size (2*0.5)^2 = 1x anchor
    lv = np.full((1, 1, 2, 2, 6), -20.0, dtype=np.float32)
    lv[0, 0, 1, 1, :] = [0.0, 0.0, 0.0, 0.0, 4.0, 4.0]
    anchors = np.array([[[20, 10]]], dtype=np.float32)
    (boxes, scores, classes), = decode([lv], anchors, (8,), 0.25)
    assert len(scores) == 1
    cx, cy = 1.5 * 8, 1.5 * 8
    np.testing.assert_allclose(boxes[0], [cx - 10, cy - 5, cx + 10, cy + 5],
                               atol=1e-6)
    sig4 = 1.0 / (1.0 + np.exp(-4.0))
    np.testing.assert_allclose(scores[0], sig4 * sig4, rtol=1e-6)


# ----------------------------------------------------------------------
# suppression vs quadratic reference
# ----------------------------------------------------------------------
def _random_boxes(rng, n, spread=60.0):
    center = rng.uniform(10, spread, (n, 2))
    half = rng.uniform(2, 14, (n, 2))
    return np.concatenate([center - half, center + half], axis=1)


@pytest.mark.parametrize("n", [0, 1, 5, 50])
@pytest.mark.parametrize("with_classes", [False, True])
def test_nms_matches_quadratic(n, with_classes, rng):
    for trial in range(10):
        boxes = _random_boxes(rng, n)
        scores = rng.uniform(0, 1, n)
        classes = rng.integers(0, 3, n) if with_classes else None
        for thr in (0.45, 0.65):
            got = nms(boxes, scores, classes, iou_thres=thr)
            want = nms_quadratic(boxes, scores, classes, iou_thres=thr)
            np.testing.assert_array_equal(got, want)


def test_nms_tie_breaks_by_index():
    boxes = np.array([[0, 0, 10, 10], [0, 0, 10, 10], [40, 40, 50, 50]],
                     dtype=np.float64)
    scores = np.array([0.7, 0.7, 0.7])
    np.testing.assert_array_equal(nms(boxes, scores), [0, 2])


def test_nms_max_det_truncates(rng):
    boxes = _random_boxes(rng, 40, spread=500.0)
    scores = rng.uniform(0, 1, 40)
    keep = nms(boxes, scores, iou_thres=0.99, max_det=5)
    assert len(keep) == 5
    np.testing.assert_array_equal(keep, np.argsort(-scores)[:5])


def test_nms_class_aware_keeps_overlaps_across_classes():
    boxes = np.array([[0, 0, 10, 10], [1, 1, 11, 11]], dtype=np.float64)
    scores = np.array([0.9, 0.8])
    assert len(nms(boxes, scores, None, iou_thres=0.5)) == 1
    assert len(nms(boxes, scores, np.array([0, 1]), iou_thres=0.5)) == 2


# ----------------------------------------------------------------------
# end to end
# ----------------------------------------------------------------------
def test_run_pipeline_on_toy_model(rng):
    model = build("toy", num_classes=2, seed=0)
    img = rng.integers(0, 255, (96, 128, 3), dtype=np.uint8)
    dets = run_pipeline(model, img, imgsz=64, conf_thres=1e-6, max_det=20)
    assert 0 < len(dets) <= 20
    h, w = img.shape[:2]
    for d in dets:
        x1, y1, x2, y2 = d.box
        assert 0 <= x1 <= w and 0 <= x2 <= w
        assert 0 <= y1 <= h and 0 <= y2 <= h
        assert 0.0 <= d.score <= 1.0 and d.cls in (0, 1)
    # scores come back ordered, the suppression order
    scores = [d.score for d in dets]
    assert scores == sorted(scores, reverse=True)


def test_detection_coco_row():
    d = Detection(box=np.array([10.0, 20.0, 30.0, 60.0]), score=0.5, cls=1)
    row = d.as_coco(7)
    assert row == {"image_id": 7, "category_id": 1,
                   "bbox": [10.0, 20.0, 20.0, 40.0], "score": 0.5}
    assert d.as_coco(7, category_id=55)["category_id"] == 55


def test_draw_detections_leaves_input_alone(rng):
    img = rng.integers(0, 255, (40, 40, 3), dtype=np.uint8)
    before = img.copy()
    out = draw_detections(img, [Detection(np.array([5, 5, 20, 20]), 0.9, 0),
                                Detection(np.array([-10, -10, 500, 500]), 0.9, 1)])
    np.testing.assert_array_equal(img, before)
    assert out.shape == img.shape
    assert np.any(out != img)
