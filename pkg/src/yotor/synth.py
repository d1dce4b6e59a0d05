"""Synthetic rectangle scenes for desk-scale training and evaluation.

Each image is a noisy gray canvas with a few axis-aligned filled rectangles;
the class decides the fill color.  Boxes are kept from overlapping too much
so every object stays recoverable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

CLASS_COLORS = (
    (200, 60, 50),   # class 0
    (50, 90, 210),   # class 1
    (60, 180, 80),   # class 2
    (220, 180, 40),  # class 3
)


@dataclass
class SynthDataset:
    images: List[np.ndarray]          # HWC uint8
    targets: List[np.ndarray]         # (n, 5) rows: cls, cx, cy, w, h in pixels
    size: int
    num_classes: int

    def coco_dataset(self) -> dict:
        """The ground truth in dataset-dict form."""
        images = [{"id": i + 1, "width": self.size, "height": self.size,
                   "file_name": f"synth_{i:04d}.png"}
                  for i in range(len(self.images))]
        anns = []
        for i, t in enumerate(self.targets):
            for row in t:
                c, cx, cy, w, h = (float(v) for v in row)
                anns.append({
                    "id": len(anns) + 1,
                    "image_id": i + 1,
                    "category_id": int(c) + 1,
                    "bbox": [cx - w / 2, cy - h / 2, w, h],
                    "area": w * h,
                    "iscrowd": 0,
                })
        cats = [{"id": c + 1, "name": f"rect{c}"} for c in range(self.num_classes)]
        return {"images": images, "annotations": anns, "categories": cats}

    def save(self, directory) -> str:
        """Write PNGs plus the annotation JSON; returns the JSON path."""
        import json
        from pathlib import Path

        from .detect import save_image

        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(self.images):
            save_image(d / f"synth_{i:04d}.png", img)
        path = d / "annotations.json"
        with open(path, "w") as f:
            json.dump(self.coco_dataset(), f)
        return str(path)


def _boxes_overlap(a, b, max_iou: float = 0.1) -> bool:
    ax1, ay1, ax2, ay2 = a
    bx1, by1, bx2, by2 = b
    ix = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    iy = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = ix * iy
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return union > 0 and inter / union > max_iou


def make_dataset(n_images: int = 8, size: int = 192, num_classes: int = 2,
                 min_objects: int = 2, max_objects: int = 4,
                 min_size: int = 32, max_size: int = 56,
                 noise: float = 8.0, seed: int = 0) -> SynthDataset:
    if num_classes > len(CLASS_COLORS):
        raise ValueError(f"at most {len(CLASS_COLORS)} classes supported")
    rng = np.random.default_rng(seed)
    images, targets = [], []
    for _ in range(n_images):
        img = np.full((size, size, 3), 114.0)
        img += rng.normal(0.0, noise, size=img.shape)
        n_obj = int(rng.integers(min_objects, max_objects + 1))
        placed = []
        rows = []
        attempts = 0
        while len(placed) < n_obj and attempts < 200:
            attempts += 1
            w = float(rng.integers(min_size, max_size + 1))
            h = float(rng.integers(min_size, max_size + 1))
            cx = float(rng.uniform(w / 2 + 2, size - w / 2 - 2))
            cy = float(rng.uniform(h / 2 + 2, size - h / 2 - 2))
            box = (cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
            if any(_boxes_overlap(box, p) for p in placed):
                continue
            cls = int(rng.integers(0, num_classes))
            color = np.array(CLASS_COLORS[cls], dtype=np.float64)
            y1, y2 = int(round(box[1])), int(round(box[3]))
            x1, x2 = int(round(box[0])), int(round(box[2]))
            img[y1:y2, x1:x2] = color + rng.normal(0.0, noise / 2, size=(y2 - y1, x2 - x1, 3))
            placed.append(box)
            rows.append([cls, cx, cy, w, h])
        images.append(np.clip(img, 0, 255).astype(np.uint8))
        targets.append(np.asarray(rows, dtype=np.float64).reshape(-1, 5))
    return SynthDataset(images=images, targets=targets, size=size,
                        num_classes=num_classes)
