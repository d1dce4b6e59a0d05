"""Hierarchical windowed-attention backbone.

Images become 4x4 patch tokens kept on a (B, H, W, C) grid.  Four stages of
window attention follow; every second block shifts its window grid by half
a window so information crosses window borders.  Between stages a 2x2 patch
merge halves the grid and (roughly) doubles the channels, giving feature
maps at strides 4, 8, 16 and 32.  Detection taps the last three, each
through its own layer norm.

Token grids whose sides are not a multiple of the window size are padded at
the right/bottom edge; padded tokens are excluded from attention by the same
additive-mask mechanism that separates wrapped regions in shifted windows,
so results on the real tokens do not depend on the padding.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .nn import (LayerNorm, Linear, Module, ModuleList, Tensor, concat, gelu,
                 trunc_normal)
from .nn import functional as F

MASK_FILL = -1e9  # large-negative keeps softmax rows finite even when a
                  # padding token sees no same-zone key


# ----------------------------------------------------------------------
# window bookkeeping
# ----------------------------------------------------------------------
def window_partition(x: Tensor, ws: int) -> Tensor:
    """(B, H, W, C) -> (B*nW, ws*ws, C); H and W must divide by ws."""
    b, h, w, c = x.shape
    x = x.reshape(b, h // ws, ws, w // ws, ws, c)
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b * (h // ws) * (w // ws), ws * ws, c)


def window_reverse(win: Tensor, ws: int, h: int, w: int) -> Tensor:
    """Inverse of :func:`window_partition`."""
    nw = (h // ws) * (w // ws)
    b = win.shape[0] // nw
    x = win.reshape(b, h // ws, w // ws, ws, ws, win.shape[-1])
    x = x.permute(0, 1, 3, 2, 4, 5)
    return x.reshape(b, h, w, win.shape[-1])


def relative_position_index(ws: int) -> np.ndarray:
    """(ws*ws, ws*ws) lookup into a (2*ws-1)**2 bias table."""
    coords = np.stack(np.meshgrid(np.arange(ws), np.arange(ws), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]
    rel = rel.transpose(1, 2, 0).copy()
    rel += ws - 1
    rel[:, :, 0] *= 2 * ws - 1
    return rel.sum(-1)


def shift_zone_map(hp: int, wp: int, h: int, w: int, ws: int, shift: int) -> np.ndarray:
    """Region labels on the rolled, padded token grid.

    Tokens may only attend within their label.  Labels encode the 3x3
    region split that keeps wrapped rows/columns apart after a cyclic
    shift; -1 marks padding tokens, which therefore never mix with real
    ones.
    """
    zh = np.zeros(hp, dtype=np.int64)
    zw = np.zeros(wp, dtype=np.int64)
    if shift:
        zh[hp - ws:hp - shift] = 1
        zh[hp - shift:] = 2
        zw[wp - ws:wp - shift] = 1
        zw[wp - shift:] = 2
    labels = zh[:, None] * 3 + zw[None, :]
    # where each rolled position came from, to find the padded originals
    oh = (np.arange(hp) + shift) % hp
    ow = (np.arange(wp) + shift) % wp
    pad = (oh[:, None] >= h) | (ow[None, :] >= w)
    return np.where(pad, -1, labels)


def attention_mask(hp: int, wp: int, h: int, w: int, ws: int, shift: int,
                   dtype=np.float32) -> Optional[np.ndarray]:
    """Additive (nW, 1, N, N) mask, or None when nothing needs masking."""
    labels = shift_zone_map(hp, wp, h, w, ws, shift)
    if shift == 0 and h == hp and w == wp:
        return None
    lw = labels.reshape(hp // ws, ws, wp // ws, ws).transpose(0, 2, 1, 3)
    lw = lw.reshape(-1, ws * ws)
    same = lw[:, :, None] == lw[:, None, :]
    mask = np.where(same, 0.0, MASK_FILL).astype(dtype)
    return mask[:, None, :, :]


# ----------------------------------------------------------------------
# modules
# ----------------------------------------------------------------------
class WindowAttention(Module):
    """Multi-head self-attention inside one window, with a learned bias
    for every relative token offset."""

    def __init__(self, dim: int, num_heads: int, window_size: int,
                 qkv_bias: bool = True, rng=None, dtype=np.float32):
        super().__init__()
        if dim % num_heads:
            raise ValueError(f"dim {dim} not divisible by heads {num_heads}")
        self.dim = dim
        self.num_heads = num_heads
        self.window_size = window_size
        self.head_dim = dim // num_heads
        self.scale = self.head_dim ** -0.5
        self.qkv = Linear(dim, dim * 3, bias=qkv_bias, rng=rng, dtype=dtype)
        self.proj = Linear(dim, dim, rng=rng, dtype=dtype)
        n_offsets = (2 * window_size - 1) ** 2
        self.rel_bias_table = Tensor(np.zeros((n_offsets, num_heads), dtype=dtype),
                                     requires_grad=True)
        self.rel_index = relative_position_index(window_size).reshape(-1)

    def forward(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        bw, n, c = x.shape
        h = self.num_heads
        qkv = self.qkv(x).reshape(bw, n, 3, h, self.head_dim).permute(2, 0, 3, 1, 4)
        q, k, v = qkv[0], qkv[1], qkv[2]
        attn = (q * self.scale) @ k.swapaxes(-1, -2)
        bias = self.rel_bias_table[self.rel_index].reshape(n, n, h).permute(2, 0, 1)
        attn = attn + bias.reshape(1, h, n, n)
        if mask is not None:
            nw = mask.shape[0]
            attn = attn.reshape(bw // nw, nw, h, n, n) + Tensor(mask)
            attn = attn.reshape(bw, h, n, n)
        attn = F.softmax(attn, axis=-1)
        out = (attn @ v).permute(0, 2, 1, 3).reshape(bw, n, c)
        return self.proj(out)

    def param_count(self) -> int:
        return super().param_count() + (2 * self.window_size - 1) ** 2 * self.num_heads


class Mlp(Module):
    def __init__(self, dim: int, hidden: int, rng=None, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng=rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class SwinBlock(Module):
    """Pre-norm attention + MLP on a token grid; odd blocks shift windows."""

    def __init__(self, dim: int, num_heads: int, window_size: int, shift: int,
                 mlp_ratio: float = 4.0, qkv_bias: bool = True,
                 rng=None, dtype=np.float32):
        super().__init__()
        if not 0 <= shift < window_size:
            raise ValueError(f"shift {shift} outside window {window_size}")
        self.window_size = window_size
        self.shift = shift
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.attn = WindowAttention(dim, num_heads, window_size, qkv_bias, rng, dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)
        self.mlp = Mlp(dim, int(dim * mlp_ratio), rng=rng, dtype=dtype)
        self._mask_cache: dict = {}

    def _mask_for(self, hp: int, wp: int, h: int, w: int, dtype) -> Optional[np.ndarray]:
        key = (hp, wp, h, w, np.dtype(dtype).name)
        if key not in self._mask_cache:
            self._mask_cache[key] = attention_mask(
                hp, wp, h, w, self.window_size, self.shift, dtype)
        return self._mask_cache[key]

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        ws = self.window_size
        shortcut = x
        x = self.norm1(x)
        pad_b = (ws - h % ws) % ws
        pad_r = (ws - w % ws) % ws
        if pad_b or pad_r:
            x = F.pad2d(x, 0, pad_b, 0, pad_r, spatial_axes=(1, 2))
        hp, wp = h + pad_b, w + pad_r
        if self.shift:
            x = F.roll2d(x, (-self.shift, -self.shift), axes=(1, 2))
        mask = self._mask_for(hp, wp, h, w, x.dtype)
        win = window_partition(x, ws)
        win = self.attn(win, mask)
        x = window_reverse(win, ws, hp, wp)
        if self.shift:
            x = F.roll2d(x, (self.shift, self.shift), axes=(1, 2))
        if pad_b or pad_r:
            x = x[:, :h, :w, :]
        x = shortcut + x
        return x + self.mlp(self.norm2(x))


class PatchEmbed(Module):
    """Non-overlapping patch -> token projection, then a layer norm."""

    def __init__(self, patch_size: int, in_ch: int, dim: int, rng=None, dtype=np.float32):
        super().__init__()
        self.patch_size = patch_size
        self.in_ch = in_ch
        self.proj = Linear(in_ch * patch_size * patch_size, dim, rng=rng, dtype=dtype)
        self.norm = LayerNorm(dim, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        b, c, h, w = x.shape
        p = self.patch_size
        pad_b = (p - h % p) % p
        pad_r = (p - w % p) % p
        if pad_b or pad_r:
            x = F.pad2d(x, 0, pad_b, 0, pad_r, spatial_axes=(2, 3))
        hp, wp = (h + pad_b) // p, (w + pad_r) // p
        x = x.reshape(b, c, hp, p, wp, p)
        x = x.permute(0, 2, 4, 1, 3, 5).reshape(b, hp, wp, c * p * p)
        return self.norm(self.proj(x))


class PatchMerging(Module):
    """2x2 neighbourhood concat, norm, then linear 4C -> 2C."""

    def __init__(self, dim: int, rng=None, dtype=np.float32):
        super().__init__()
        self.dim = dim
        self.norm = LayerNorm(4 * dim, dtype=dtype)
        self.reduction = Linear(4 * dim, 2 * dim, bias=False, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        b, h, w, c = x.shape
        if h % 2 or w % 2:
            x = F.pad2d(x, 0, h % 2, 0, w % 2, spatial_axes=(1, 2))
        x0 = x[:, 0::2, 0::2, :]
        x1 = x[:, 1::2, 0::2, :]
        x2 = x[:, 0::2, 1::2, :]
        x3 = x[:, 1::2, 1::2, :]
        x = concat([x0, x1, x2, x3], axis=-1)
        return self.reduction(self.norm(x))


@dataclass
class SwinConfig:
    embed_dim: int = 96
    depths: tuple = (2, 2, 6, 2)
    num_heads: tuple = (3, 6, 12, 24)
    window_size: int = 7
    patch_size: int = 4
    mlp_ratio: float = 4.0
    qkv_bias: bool = True
    in_ch: int = 3
    out_stages: tuple = (1, 2, 3)

    @property
    def stage_dims(self) -> tuple:
        return tuple(self.embed_dim * (2 ** i) for i in range(len(self.depths)))

    @property
    def out_dims(self) -> tuple:
        return tuple(self.stage_dims[i] for i in self.out_stages)

    @property
    def out_strides(self) -> tuple:
        return tuple(self.patch_size * (2 ** i) for i in self.out_stages)


class SwinBackbone(Module):
    def __init__(self, cfg: SwinConfig, rng=None, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = PatchEmbed(cfg.patch_size, cfg.in_ch, cfg.embed_dim, rng, dtype)
        dims = cfg.stage_dims
        self.stages = ModuleList()
        self.merges = ModuleList()
        for i, depth in enumerate(cfg.depths):
            blocks = ModuleList()
            for j in range(depth):
                shift = 0 if j % 2 == 0 else cfg.window_size // 2
                blocks.append(SwinBlock(dims[i], cfg.num_heads[i], cfg.window_size,
                                        shift, cfg.mlp_ratio, cfg.qkv_bias, rng, dtype))
            self.stages.append(blocks)
            if i < len(cfg.depths) - 1:
                self.merges.append(PatchMerging(dims[i], rng, dtype))
        self.out_norms = ModuleList([LayerNorm(dims[i], dtype=dtype)
                                     for i in cfg.out_stages])

    def forward(self, x: Tensor) -> list:
        """NCHW image -> list of (B, H_i, W_i, C_i) token grids, one per
        configured output stage, finest first."""
        x = self.patch_embed(x)
        outs = []
        for i, blocks in enumerate(self.stages):
            for blk in blocks:
                x = blk(x)
            if i in self.cfg.out_stages:
                k = self.cfg.out_stages.index(i)
                outs.append(self.out_norms[k](x))
            if i < len(self.stages) - 1:
                x = self.merges[i](x)
        return outs
