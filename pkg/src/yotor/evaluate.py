"""Detection quality scoring over a COCO-style dataset.

The protocol, pinned so independent implementations can agree bit-for-bit:

* Matching runs per (image, category, IoU threshold, area range).  Ground
  truths outside the area range or marked crowd are "ignored"; they sort
  after normal ones.  Detections are taken in (-score, original index)
  order, truncated to the per-image detection cap, and each greedily takes
  the not-yet-matched ground truth with the highest IoU at or above the
  threshold; at exactly equal IoU the scan keeps updating, so the latest
  candidate in sorted order wins.
  Crowd ground truths may match any number of detections, and their overlap
  is intersection over detection area rather than over union.  A detection
  matched to an ignored ground truth is ignored; so is an unmatched
  detection whose own box area lies outside the range.
* Scores pool across images in ascending image-id order and sort stably by
  descending score, so ties break by (image position, within-image order).
  Cumulative TP/FP give a PR curve; precision is set to its running
  right-to-left maximum, then sampled at 101 evenly spaced recall points
  (0, 0.01, ..., 1) by left-bisection; their mean is the average precision.
  Recall is the final recall reached.  Cells with no ground truth stay at
  -1 and are excluded from every mean.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .cocodata import ann_area, load_dataset, load_detections

AREA_RANGES = {
    "all": (0.0, 1e10),
    "small": (0.0, 32.0 ** 2),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, 1e10),
}


@dataclass
class EvalConfig:
    iou_thresholds: tuple = tuple(float(t) for t in np.round(np.arange(0.5, 1.0, 0.05), 2))
    recall_points: int = 101
    area_ranges: tuple = ("all", "small", "medium", "large")
    max_dets: tuple = (1, 10, 100)


def iou_xywh(det: Sequence[float], gt: Sequence[float], crowd: bool) -> float:
    """IoU of two xywh boxes; against a crowd region the denominator is the
    detection's own area, so hits inside a crowd are never penalized."""
    dx, dy, dw, dh = det
    gx, gy, gw, gh = gt
    ix = max(0.0, min(dx + dw, gx + gw) - max(dx, gx))
    iy = max(0.0, min(dy + dh, gy + gh) - max(dy, gy))
    inter = ix * iy
    if crowd:
        denom = dw * dh
    else:
        denom = dw * dh + gw * gh - inter
    return inter / denom if denom > 0 else 0.0


def _pair_ious(dets: List[dict], gts: List[dict]) -> np.ndarray:
    out = np.zeros((len(dets), len(gts)))
    for i, d in enumerate(dets):
        for j, g in enumerate(gts):
            out[i, j] = iou_xywh(d["bbox"], g["bbox"], bool(g.get("iscrowd", 0)))
    return out


def _evaluate_image(dets: List[dict], gts: List[dict], cfg: EvalConfig,
                    area_name: str, max_det: int) -> Optional[dict]:
    """One (image, category, area range, det cap) matching pass."""
    lo, hi = AREA_RANGES[area_name]
    if not dets and not gts:
        return None
    gt_ignore_base = np.array(
        [bool(g.get("iscrowd", 0)) or not (lo <= ann_area(g) <= hi) for g in gts],
        dtype=bool)
    # unignored first, original order preserved inside each group
    gt_order = np.argsort(gt_ignore_base, kind="stable")
    det_order = np.lexsort((np.arange(len(dets)), [-d["score"] for d in dets]))
    det_order = det_order[:max_det]
    sdets = [dets[i] for i in det_order]
    sgts = [gts[i] for i in gt_order]
    gt_ignored = gt_ignore_base[gt_order]
    iscrowd = [bool(g.get("iscrowd", 0)) for g in sgts]
    ious = _pair_ious(sdets, sgts)

    T = len(cfg.iou_thresholds)
    D = len(sdets)
    G = len(sgts)
    det_match = -np.ones((T, D), dtype=np.int64)
    det_ignore = np.zeros((T, D), dtype=bool)
    gt_match = -np.ones((T, G), dtype=np.int64)
    for ti, t in enumerate(cfg.iou_thresholds):
        for di in range(D):
            best = min(t, 1.0 - 1e-10)
            m = -1
            for gi in range(G):
                if gt_match[ti, gi] >= 0 and not iscrowd[gi]:
                    continue
                # every unignored candidate has been seen once an ignored
                # one is reached; a real match found by then stands
                if m > -1 and not gt_ignored[m] and gt_ignored[gi]:
                    break
                if ious[di, gi] < best:
                    continue
                best = ious[di, gi]
                m = gi
            if m == -1:
                continue
            det_ignore[ti, di] = gt_ignored[m]
            det_match[ti, di] = m
            gt_match[ti, m] = di
    # unmatched detections whose own area is out of range are ignored
    det_area_out = np.array([not (lo <= d["bbox"][2] * d["bbox"][3] <= hi)
                             for d in sdets], dtype=bool)
    det_ignore |= (det_match == -1) & det_area_out[None, :]
    return {
        "scores": np.array([d["score"] for d in sdets], dtype=np.float64),
        "matched": det_match >= 0,
        "ignored": det_ignore,
        "num_gt": int((~gt_ignored).sum()),
    }


@dataclass
class EvalReport:
    stats: Dict[str, float]
    per_class: Dict[int, float]          # category id -> AP at the full sweep
    precision: np.ndarray                # (T, R, K, A, M)
    recall: np.ndarray                   # (T, K, A, M)
    config: EvalConfig

    def table(self) -> str:
        rows = [
            ("AP", "0.50:0.95", "all", 100), ("AP", "0.50", "all", 100),
            ("AP", "0.75", "all", 100), ("AP", "0.50:0.95", "small", 100),
            ("AP", "0.50:0.95", "medium", 100), ("AP", "0.50:0.95", "large", 100),
            ("AR", "0.50:0.95", "all", 1), ("AR", "0.50:0.95", "all", 10),
            ("AR", "0.50:0.95", "all", 100), ("AR", "0.50:0.95", "small", 100),
            ("AR", "0.50:0.95", "medium", 100), ("AR", "0.50:0.95", "large", 100),
        ]
        lines = []
        for kind, iou, area, md in rows:
            key = _stat_key(kind, iou, area, md)
            metric = "Average Precision" if kind == "AP" else "Average Recall"
            lines.append(f" {metric:<18} (IoU={iou:<9} | area={area:>6} | "
                         f"maxDets={md:>3}) = {self.stats[key]:6.3f}")
        return "\n".join(lines)

    def csv(self) -> str:
        lines = ["metric,value"]
        for k, v in self.stats.items():
            lines.append(f"{k},{v:.6f}")
        for cid in sorted(self.per_class):
            lines.append(f"ap_class_{cid},{self.per_class[cid]:.6f}")
        return "\n".join(lines) + "\n"


def _stat_key(kind: str, iou: str, area: str, max_det: int) -> str:
    return f"{kind}_{iou.replace(':', '_').replace('.', '')}_{area}_{max_det}"


def evaluate(dataset, detections, cfg: Optional[EvalConfig] = None) -> EvalReport:
    """Score ``detections`` against ``dataset``; both may be paths or
    already-loaded objects."""
    data = load_dataset(dataset)
    dets = load_detections(detections)
    cfg = cfg or EvalConfig()

    img_ids = sorted(im["id"] for im in data["images"])
    cat_ids = sorted(c["id"] for c in data["categories"])
    gt_by_ic: Dict[tuple, list] = {}
    for a in data["annotations"]:
        gt_by_ic.setdefault((a["image_id"], a["category_id"]), []).append(a)
    det_by_ic: Dict[tuple, list] = {}
    for d in dets:
        det_by_ic.setdefault((d["image_id"], d["category_id"]), []).append(d)

    T = len(cfg.iou_thresholds)
    R = cfg.recall_points
    K = len(cat_ids)
    A = len(cfg.area_ranges)
    M = len(cfg.max_dets)
    rec_thrs = np.linspace(0.0, 1.0, R)
    precision = -np.ones((T, R, K, A, M))
    recall = -np.ones((T, K, A, M))

    for ki, cat in enumerate(cat_ids):
        for ai, area in enumerate(cfg.area_ranges):
            for mi, max_det in enumerate(cfg.max_dets):
                results = []
                for img in img_ids:
                    r = _evaluate_image(det_by_ic.get((img, cat), []),
                                        gt_by_ic.get((img, cat), []),
                                        cfg, area, max_det)
                    if r is not None:
                        results.append(r)
                if not results:
                    continue
                npig = sum(r["num_gt"] for r in results)
                if npig == 0:
                    continue
                scores = np.concatenate([r["scores"] for r in results])
                matched = np.concatenate([r["matched"] for r in results], axis=1)
                ignored = np.concatenate([r["ignored"] for r in results], axis=1)
                order = np.argsort(-scores, kind="stable")
                matched = matched[:, order]
                ignored = ignored[:, order]
                tps = np.cumsum(matched & ~ignored, axis=1).astype(np.float64)
                fps = np.cumsum(~matched & ~ignored, axis=1).astype(np.float64)
                for ti in range(T):
                    tp, fp = tps[ti], fps[ti]
                    if len(tp) == 0:
                        recall[ti, ki, ai, mi] = 0.0
                        precision[ti, :, ki, ai, mi] = 0.0
                        continue
                    rc = tp / npig
                    pr = tp / np.maximum(tp + fp, np.spacing(1))
                    recall[ti, ki, ai, mi] = rc[-1]
                    # right-to-left envelope, then sample at fixed recalls
                    env = pr.copy()
                    for i in range(len(env) - 1, 0, -1):
                        env[i - 1] = max(env[i - 1], env[i])
                    q = np.zeros(R)
                    idx = np.searchsorted(rc, rec_thrs, side="left")
                    ok = idx < len(env)
                    q[ok] = env[idx[ok]]
                    precision[ti, :, ki, ai, mi] = q

    def _mean(arr: np.ndarray) -> float:
        vals = arr[arr > -1]
        return float(vals.mean()) if vals.size else float("nan")

    stats: Dict[str, float] = {}
    ai_all = list(cfg.area_ranges).index("all")
    mi_last = M - 1
    stats[_stat_key("AP", "0.50:0.95", "all", cfg.max_dets[-1])] = _mean(
        precision[:, :, :, ai_all, mi_last])
    for t, labl in ((0.5, "0.50"), (0.75, "0.75")):
        if t in cfg.iou_thresholds:
            ti = list(cfg.iou_thresholds).index(t)
            stats[_stat_key("AP", labl, "all", cfg.max_dets[-1])] = _mean(
                precision[ti, :, :, ai_all, mi_last])
    for area in cfg.area_ranges:
        if area == "all":
            continue
        ai = list(cfg.area_ranges).index(area)
        stats[_stat_key("AP", "0.50:0.95", area, cfg.max_dets[-1])] = _mean(
            precision[:, :, :, ai, mi_last])
    for mi, md in enumerate(cfg.max_dets):
        stats[_stat_key("AR", "0.50:0.95", "all", md)] = _mean(recall[:, :, ai_all, mi])
    for area in cfg.area_ranges:
        if area == "all":
            continue
        ai = list(cfg.area_ranges).index(area)
        stats[_stat_key("AR", "0.50:0.95", area, cfg.max_dets[-1])] = _mean(
            recall[:, :, ai, mi_last])

    per_class = {}
    for ki, cat in enumerate(cat_ids):
        per_class[cat] = _mean(precision[:, :, ki, ai_all, mi_last])

    return EvalReport(stats=stats, per_class=per_class, precision=precision,
                      recall=recall, config=cfg)
