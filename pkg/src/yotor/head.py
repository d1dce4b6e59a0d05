"""Anchor-based detection heads.

Each pyramid level gets a 1x1 projection to ``na * (5 + nc)`` channels
bracketed by two learned implicit tensors: a per-channel offset added
before the projection and a per-channel gain applied after it.  Outputs
stay raw (no activation); decoding happens in the detection pipeline.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .blocks import ImplicitAdd, ImplicitMul
from .nn import Conv2d, Module, ModuleList, Tensor


class DetectHead(Module):
    def __init__(self, in_ch: Sequence[int], num_classes: int,
                 anchors: Sequence[Sequence[float]], strides: Sequence[int],
                 implicit: bool = True, rng=None, dtype=np.float32):
        super().__init__()
        if len(in_ch) != len(anchors) or len(in_ch) != len(strides):
            raise ValueError("in_ch, anchors, strides must align per level")
        self.num_classes = num_classes
        self.num_levels = len(in_ch)
        self.na = len(anchors[0]) // 2
        for a in anchors:
            if len(a) != 2 * self.na:
                raise ValueError("every level needs the same number of anchors")
        self.no = 5 + num_classes
        self.strides = tuple(int(s) for s in strides)
        # (levels, na, 2) anchor sizes in input pixels
        self.anchors = np.asarray(anchors, dtype=np.float32).reshape(self.num_levels, self.na, 2)
        self.implicit = implicit
        self.proj = ModuleList([Conv2d(c, self.na * self.no, 1, rng=rng, dtype=dtype)
                                for c in in_ch])
        if implicit:
            self.ia = ModuleList([ImplicitAdd(c, rng=rng, dtype=dtype) for c in in_ch])
            self.im = ModuleList([ImplicitMul(self.na * self.no, rng=rng, dtype=dtype)
                                  for _ in in_ch])
        self.initialize_biases()

    def initialize_biases(self, imgsz: int = 640, class_prior: float = 0.01) -> None:
        """Start objectness near the expected hit rate (about 8 objects per
        image at the reference size) and class scores near ``class_prior``,
        so early training is not dominated by confident false positives."""
        for i, conv in enumerate(self.proj):
            b = conv.bias.data.reshape(self.na, self.no)
            cells = (imgsz / self.strides[i]) ** 2
            b[:, 4] = np.log(8.0 / cells)
            if self.num_classes > 0:
                b[:, 5:] = np.log(class_prior / (1.0 - class_prior))
            conv.bias.data = np.ascontiguousarray(b.reshape(-1))

    def forward(self, feats: Sequence[Tensor]) -> list:
        """Per-level (B, na, H, W, no) raw prediction tensors."""
        if len(feats) != self.num_levels:
            raise ValueError(f"expected {self.num_levels} maps, got {len(feats)}")
        outs = []
        for i, x in enumerate(feats):
            if self.implicit:
                x = self.ia[i](x)
            x = self.proj[i](x)
            if self.implicit:
                x = self.im[i](x)
            b, _, h, w = x.shape
            x = x.reshape(b, self.na, self.no, h, w).permute(0, 1, 3, 4, 2)
            outs.append(x)
        return outs
