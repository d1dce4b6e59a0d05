"""Path-aggregation neck over a four-level feature pyramid.

Takes per-level feature maps (finest first), runs pyramid pooling on the
coarsest, fuses top-down with upsampling and lateral 1x1s, then back
bottom-up with stride-2 convs, and emits one feature map per level sized
for the detection heads.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .blocks import ConvAct, CSPBlock, SPPCSP
from .nn import Module, ModuleList, Tensor, concat
from .nn import functional as F


class PANNeck(Module):
    """Top-down/bottom-up aggregation.

    ``in_ch``    channels of the incoming pyramid, finest level first
    ``widths``   internal fuse width per level
    ``out_ch``   channels handed to each head
    """

    def __init__(self, in_ch: Sequence[int], widths: Sequence[int],
                 out_ch: Sequence[int], csp_depth: int = 3, act: str = "silu",
                 spp_kernels: tuple = (5, 9, 13), rng=None, dtype=np.float32):
        super().__init__()
        if not (len(in_ch) == len(widths) == len(out_ch)):
            raise ValueError("in_ch, widths, out_ch must have equal lengths")
        self.levels = len(in_ch)
        self.widths = tuple(widths)
        self.spp = SPPCSP(in_ch[-1], widths[-1], spp_kernels, act, rng, dtype)

        # top-down: reduce, upsample, fuse with a lateral of the next finer level
        self.td_reduce = ModuleList()
        self.td_lateral = ModuleList()
        self.td_fuse = ModuleList()
        for i in range(self.levels - 2, -1, -1):
            self.td_reduce.append(ConvAct(widths[i + 1], widths[i], 1, act=act, rng=rng, dtype=dtype))
            self.td_lateral.append(ConvAct(in_ch[i], widths[i], 1, act=act, rng=rng, dtype=dtype))
            self.td_fuse.append(CSPBlock(2 * widths[i], widths[i], csp_depth,
                                         act=act, rng=rng, dtype=dtype))

        # bottom-up: stride-2 down, fuse with the stored top-down map
        self.bu_down = ModuleList()
        self.bu_fuse = ModuleList()
        for i in range(1, self.levels):
            self.bu_down.append(ConvAct(widths[i - 1], widths[i], 3, stride=2,
                                        act=act, rng=rng, dtype=dtype))
            self.bu_fuse.append(CSPBlock(2 * widths[i], widths[i], csp_depth,
                                         act=act, rng=rng, dtype=dtype))

        self.out_convs = ModuleList([ConvAct(widths[i], out_ch[i], 3, act=act,
                                             rng=rng, dtype=dtype)
                                     for i in range(self.levels)])

    def forward(self, feats: Sequence[Tensor], trace: Optional[dict] = None) -> list:
        """feats finest-first; returns per-level head inputs, finest first.

        ``trace``, when given, collects named intermediate maps for tests.
        """
        if len(feats) != self.levels:
            raise ValueError(f"expected {self.levels} feature maps, got {len(feats)}")
        coarse = self.spp(feats[-1])
        td = [None] * self.levels
        td[-1] = coarse
        x = coarse
        for k, i in enumerate(range(self.levels - 2, -1, -1)):
            up = F.upsample_nearest2d(self.td_reduce[k](x), 2)
            lat = self.td_lateral[k](feats[i])
            x = self.td_fuse[k](concat([lat, up], axis=1))
            td[i] = x
        outs = [None] * self.levels
        outs[0] = self.out_convs[0](td[0])
        x = td[0]
        for k, i in enumerate(range(1, self.levels)):
            down = self.bu_down[k](x)
            x = self.bu_fuse[k](concat([down, td[i]], axis=1))
            outs[i] = self.out_convs[i](x)
        if trace is not None:
            trace["spp"] = coarse
            for i, t in enumerate(td):
                trace[f"td{i}"] = t
        return outs
