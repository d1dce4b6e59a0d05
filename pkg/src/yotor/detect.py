"""From raw head outputs to boxes on the original image.

The stages, in order: letterbox the image to the network size, run the
model, decode each pyramid level's raw activations into candidate boxes,
threshold on confidence, suppress overlaps class by class, and map the
survivors back through the letterbox transform.

Decode convention per anchor cell: center = (2*sig(t_xy) - 0.5 + grid) *
stride, size = (2*sig(t_wh))^2 * anchor, objectness and class scores are
plain sigmoids, and a candidate's score is objectness times class
probability.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .counters import record_call
from .nn import Tensor, no_grad


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


# ----------------------------------------------------------------------
# image preparation
# ----------------------------------------------------------------------
def load_image(path) -> np.ndarray:
    """File -> RGB uint8 (H, W, 3)."""
    from PIL import Image

    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def save_image(path, img: np.ndarray) -> None:
    from PIL import Image

    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)


def letterbox(img: np.ndarray, new_shape: Tuple[int, int],
              color: int = 114) -> Tuple[np.ndarray, float, Tuple[float, float]]:
    """Resize keeping aspect ratio, pad the rest with ``color``.

    Returns the padded image, the resize ratio, and the (left, top) pad in
    output pixels.  Padding is split evenly on both sides, fractional halves
    rounded so the output is exactly ``new_shape``.
    """
    h, w = img.shape[:2]
    nh, nw = new_shape
    ratio = min(nh / h, nw / w)
    rw, rh = int(round(w * ratio)), int(round(h * ratio))
    if (rw, rh) != (w, h):
        from PIL import Image

        img = np.asarray(Image.fromarray(img).resize((rw, rh), Image.BILINEAR))
    dw = (nw - rw) / 2
    dh = (nh - rh) / 2
    top, bottom = int(round(dh - 0.1)), int(round(dh + 0.1))
    left, right = int(round(dw - 0.1)), int(round(dw + 0.1))
    out = np.full((nh, nw, img.shape[2]), color, dtype=img.dtype)
    out[top:top + rh, left:left + rw] = img
    return out, ratio, (float(left), float(top))


def to_input(img: np.ndarray, dtype=np.float32) -> Tensor:
    """HWC uint8 -> (1, 3, H, W) float in [0, 1]."""
    arr = np.ascontiguousarray(img.transpose(2, 0, 1)[None]).astype(dtype) / 255.0
    return Tensor(arr)


def scale_boxes(boxes: np.ndarray, ratio: float, pad: Tuple[float, float],
                orig_shape: Tuple[int, int]) -> np.ndarray:
    """Map xyxy boxes from letterboxed coords back to the original image."""
    if boxes.size == 0:
        return boxes.reshape(0, 4)
    out = boxes.astype(np.float64).copy()
    out[:, [0, 2]] -= pad[0]
    out[:, [1, 3]] -= pad[1]
    out /= ratio
    h, w = orig_shape
    out[:, [0, 2]] = out[:, [0, 2]].clip(0, w)
    out[:, [1, 3]] = out[:, [1, 3]].clip(0, h)
    return out


# ----------------------------------------------------------------------
# decode
# ----------------------------------------------------------------------
def decode(levels: Sequence[np.ndarray], anchors: np.ndarray,
           strides: Sequence[int], conf_thres: float = 0.001,
           multi_label: bool = True) -> List[tuple]:
    """Raw per-level outputs -> per-image candidate lists.

    ``levels[i]`` is (B, na, H, W, 5+nc) float; ``anchors`` is
    (levels, na, 2) in input pixels.  Returns, per image, a tuple of
    xyxy boxes (N, 4), scores (N,), classes (N,) int64.

    Candidate rule: objectness must clear ``conf_thres``; then with
    ``multi_label`` every class whose combined score clears it becomes a
    candidate, otherwise only the best class.
    """
    record_call("decode")
    batch = levels[0].shape[0]
    nc = levels[0].shape[-1] - 5
    per_image = [([], [], []) for _ in range(batch)]
    for li, raw in enumerate(levels):
        b, na, h, w, _ = raw.shape
        s = float(strides[li])
        sig = _sigmoid(raw.astype(np.float64))
        gy, gx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        cx = (2.0 * sig[..., 0] - 0.5 + gx) * s
        cy = (2.0 * sig[..., 1] - 0.5 + gy) * s
        ww = (2.0 * sig[..., 2]) ** 2 * anchors[li, :, 0].reshape(1, na, 1, 1)
        hh = (2.0 * sig[..., 3]) ** 2 * anchors[li, :, 1].reshape(1, na, 1, 1)
        obj = sig[..., 4]
        cls = sig[..., 5:]
        boxes = np.stack([cx - ww / 2, cy - hh / 2, cx + ww / 2, cy + hh / 2], axis=-1)
        for bi in range(b):
            cand = obj[bi] > conf_thres
            if not cand.any():
                continue
            cb = boxes[bi][cand]
            co = obj[bi][cand]
            cc = cls[bi][cand]
            scores = co[:, None] * cc
            if multi_label:
                ii, jj = np.nonzero(scores > conf_thres)
                per_image[bi][0].append(cb[ii])
                per_image[bi][1].append(scores[ii, jj])
                per_image[bi][2].append(jj)
            else:
                jj = scores.argmax(axis=1)
                sc = scores[np.arange(len(jj)), jj]
                keep = sc > conf_thres
                per_image[bi][0].append(cb[keep])
                per_image[bi][1].append(sc[keep])
                per_image[bi][2].append(jj[keep])
    out = []
    for bi in range(batch):
        bx, sc, cl = per_image[bi]
        if bx:
            out.append((np.concatenate(bx), np.concatenate(sc),
                        np.concatenate(cl).astype(np.int64)))
        else:
            out.append((np.zeros((0, 4)), np.zeros(0), np.zeros(0, dtype=np.int64)))
    return out


# ----------------------------------------------------------------------
# overlap and suppression
# ----------------------------------------------------------------------
def box_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of xyxy boxes: (N, 4) x (M, 4) -> (N, M)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    lt = np.maximum(a[:, None, :2], b[None, :, :2])
    rb = np.minimum(a[:, None, 2:], b[None, :, 2:])
    wh = np.clip(rb - lt, 0, None)
    inter = wh[..., 0] * wh[..., 1]
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def nms(boxes: np.ndarray, scores: np.ndarray, classes: Optional[np.ndarray] = None,
        iou_thres: float = 0.65, max_det: int = 300) -> np.ndarray:
    """Greedy suppression; returns kept indices, highest score first.

    With ``classes`` given, suppression only happens within a class.  Equal
    scores are broken by original index (lower wins), so results do not
    depend on sort internals.
    """
    record_call("nms")
    n = len(scores)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    order = np.lexsort((np.arange(n), -np.asarray(scores, dtype=np.float64)))
    boxes = np.asarray(boxes, dtype=np.float64)
    iou = box_iou(boxes, boxes)
    if classes is not None:
        same = np.asarray(classes)[:, None] == np.asarray(classes)[None, :]
        iou = np.where(same, iou, 0.0)
    alive = np.ones(n, dtype=bool)
    keep = []
    for i in order:
        if not alive[i]:
            continue
        keep.append(i)
        if len(keep) >= max_det:
            break
        alive &= ~(iou[i] > iou_thres)
        alive[i] = False
    return np.asarray(keep, dtype=np.int64)


# ----------------------------------------------------------------------
# end-to-end pipeline
# ----------------------------------------------------------------------
@dataclass
class Detection:
    box: np.ndarray  # xyxy in original image coordinates
    score: float
    cls: int

    def as_coco(self, image_id: int, category_id: Optional[int] = None) -> dict:
        x1, y1, x2, y2 = (float(v) for v in self.box)
        return {
            "image_id": int(image_id),
            "category_id": int(self.cls if category_id is None else category_id),
            "bbox": [x1, y1, x2 - x1, y2 - y1],
            "score": float(self.score),
        }


_PALETTE = ((220, 60, 50), (60, 110, 220), (60, 190, 90), (230, 190, 50),
            (170, 80, 200), (70, 200, 200))


def draw_detections(img: np.ndarray, dets: Sequence[Detection],
                    thickness: int = 2) -> np.ndarray:
    """Outline detections on a copy of the image, color keyed by class."""
    out = np.asarray(img, dtype=np.uint8).copy()
    h, w = out.shape[:2]
    for d in dets:
        x1, y1, x2, y2 = (int(round(float(v))) for v in d.box)
        x1, x2 = max(x1, 0), min(x2, w - 1)
        y1, y2 = max(y1, 0), min(y2, h - 1)
        if x2 <= x1 or y2 <= y1:
            continue
        color = _PALETTE[d.cls % len(_PALETTE)]
        t = thickness
        out[y1:y1 + t, x1:x2 + 1] = color
        out[max(y2 - t + 1, 0):y2 + 1, x1:x2 + 1] = color
        out[y1:y2 + 1, x1:x1 + t] = color
        out[y1:y2 + 1, max(x2 - t + 1, 0):x2 + 1] = color
    return out


def run_pipeline(model, img: np.ndarray, imgsz: int = 640,
                 conf_thres: float = 0.25, iou_thres: float = 0.65,
                 max_det: int = 300, multi_label: bool = False) -> List[Detection]:
    """Detect objects on one RGB uint8 image; boxes in original coords."""
    boxed, ratio, pad = letterbox(img, (imgsz, imgsz))
    x = to_input(boxed)
    with no_grad():
        record_call("forward")
        raw = model(x)
    levels = [r.numpy() for r in raw]
    (boxes, scores, classes), = decode(levels, model.head.anchors, model.strides,
                                       conf_thres, multi_label=multi_label)
    keep = nms(boxes, scores, classes, iou_thres, max_det)
    boxes = scale_boxes(boxes[keep], ratio, pad, img.shape[:2])
    return [Detection(box=boxes[k], score=float(scores[keep[k]]),
                      cls=int(classes[keep[k]]))
            for k in range(len(keep))]
