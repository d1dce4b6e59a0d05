"""Minimal COCO-style dataset IO.

A dataset dict has three lists: ``images`` ({id, width, height, file_name}),
``annotations`` ({id, image_id, category_id, bbox [x, y, w, h], area,
iscrowd}), and ``categories`` ({id, name}).  Detections are a flat list of
{image_id, category_id, bbox, score}.  Only the keys above are required;
extras pass through untouched.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Union


def load_dataset(source: Union[str, Path, dict]) -> dict:
    """Load and validate a dataset dict from a path or pass one through."""
    if isinstance(source, (str, Path)):
        with open(source) as f:
            data = json.load(f)
    else:
        data = source
    for key in ("images", "annotations", "categories"):
        if key not in data:
            raise ValueError(f"dataset missing {key!r} list")
    img_ids = [im["id"] for im in data["images"]]
    if len(set(img_ids)) != len(img_ids):
        raise ValueError("duplicate image ids")
    ann_ids = [a["id"] for a in data["annotations"]]
    if len(set(ann_ids)) != len(ann_ids):
        raise ValueError("duplicate annotation ids")
    known = set(img_ids)
    for a in data["annotations"]:
        if a["image_id"] not in known:
            raise ValueError(f"annotation {a['id']} references unknown image {a['image_id']}")
        if len(a["bbox"]) != 4:
            raise ValueError(f"annotation {a['id']} bbox must be [x, y, w, h]")
    return data


def load_detections(source: Union[str, Path, list]) -> list:
    if isinstance(source, (str, Path)):
        with open(source) as f:
            dets = json.load(f)
    else:
        dets = source
    if not isinstance(dets, list):
        raise ValueError("detections must be a JSON list")
    for i, d in enumerate(dets):
        for key in ("image_id", "category_id", "bbox", "score"):
            if key not in d:
                raise ValueError(f"detection {i} missing {key!r}")
    return dets


def save_detections(path, dets: list) -> None:
    with open(path, "w") as f:
        json.dump(dets, f)


def ann_area(ann: dict) -> float:
    """Stated area if present, else the box area."""
    if "area" in ann:
        return float(ann["area"])
    return float(ann["bbox"][2]) * float(ann["bbox"][3])
