"""Differentiable layer operations on top of the tensor core.

Convolution and pooling work on NCHW batches; token-space helpers (layer
norm, softmax, roll) operate on whatever layout the caller keeps, with the
normalized/reduced axis stated explicitly where it is not the last one.
"""
from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _count
from .tensor import DimensionError, Tensor, softplus


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    out = x @ weight.swapaxes(0, 1)
    if bias is not None:
        out = out + bias
    return out


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation on an NCHW batch.

    ``weight`` is (out_ch, in_ch, kh, kw); ``stride`` and ``padding`` apply
    to both spatial axes.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise DimensionError("conv2d expects NCHW input and OIHW weight")
    n, c, h, w = x.shape
    o, ci, kh, kw = weight.shape
    if ci != c:
        raise DimensionError(f"conv2d channel mismatch: input {c}, weight {ci}")
    s, p = int(stride), int(padding)
    ho = (h + 2 * p - kh) // s + 1
    wo = (w + 2 * p - kw) // s + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"conv2d output would be empty for input {x.shape}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p))) if p else x.data
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    # (N, C, Ho, Wo, kh, kw) -> rows of flattened receptive fields
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = weight.data.reshape(o, c * kh * kw)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, o, 1, 1)
    out = np.ascontiguousarray(out)
    _count.add_macs(n * ho * wo * o * c * kh * kw)

    def vjp(g):
        gmat = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(n * ho * wo, o)
        gw = (gmat.T @ cols).reshape(o, c, kh, kw)
        # scatter back through the im2col view, one kernel tap at a time
        gcols = (gmat @ wmat).reshape(n, ho, wo, c, kh, kw)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += \
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        grads = [np.ascontiguousarray(gx), gw]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._make(out, parents, vjp)


def maxpool2d(x: Tensor, kernel: int, stride: Optional[int] = None, padding: int = 0) -> Tensor:
    """Max pooling on NCHW; padded border counts as minus infinity."""
    if x.ndim != 4:
        raise DimensionError("maxpool2d expects an NCHW tensor")
    k = int(kernel)
    s = k if stride is None else int(stride)
    p = int(padding)
    n, c, h, w = x.shape
    if p:
        xp = np.pad(x.data, ((0, 0), (0, 0), (p, p), (p, p)),
                    constant_values=-np.inf)
    else:
        xp = x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - k) // s + 1
    wo = (wp - k) // s + 1
    if ho <= 0 or wo <= 0:
        raise DimensionError(f"maxpool2d output would be empty for input {x.shape}")
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    flat = win.reshape(n, c, ho, wo, k * k)
    amax = flat.argmax(axis=-1)
    out = np.ascontiguousarray(np.take_along_axis(flat, amax[..., None], -1)[..., 0])

    def vjp(g):
        gxp = np.zeros((n, c, hp, wp), dtype=x.dtype)
        ni, ci, hi, wi = np.indices((n, c, ho, wo), sparse=True)
        rows = hi * s + amax // k
        cols = wi * s + amax % k
        np.add.at(gxp, (ni, ci, rows, cols), g)
        gx = gxp[:, :, p:p + h, p:p + w] if p else gxp
        return (np.ascontiguousarray(gx),)

    return Tensor._make(out, (x,), vjp)


def layer_norm(x: Tensor, weight: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    d = x.shape[-1]
    if weight.shape != (d,) or bias.shape != (d,):
        raise DimensionError(f"layer_norm affine params must be ({d},)")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * weight.data + bias.data

    def vjp(g):
        dxhat = g * weight.data
        m1 = dxhat.mean(axis=-1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
        gx = inv * (dxhat - m1 - xhat * m2)
        red = tuple(range(g.ndim - 1))
        gw = (g * xhat).sum(axis=red)
        gb = g.sum(axis=red)
        return gx.astype(x.dtype, copy=False), gw, gb

    return Tensor._make(out.astype(x.dtype, copy=False), (x, weight, bias), vjp)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return Tensor._make(y.astype(x.dtype, copy=False), (x,), vjp)


def upsample_nearest2d(x: Tensor, scale: int) -> Tensor:
    """Integer-factor nearest-neighbour upsampling on NCHW."""
    if x.ndim != 4:
        raise DimensionError("upsample_nearest2d expects an NCHW tensor")
    f = int(scale)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, f, axis=2), f, axis=3)

    def vjp(g):
        return (g.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)

    return Tensor._make(np.ascontiguousarray(out), (x,), vjp)


def pad2d(x: Tensor, top: int, bottom: int, left: int, right: int,
          spatial_axes: tuple = (2, 3)) -> Tensor:
    """Zero-pad two spatial axes of a tensor."""
    widths = [(0, 0)] * x.ndim
    a0, a1 = spatial_axes
    widths[a0] = (top, bottom)
    widths[a1] = (left, right)
    out = np.pad(x.data, widths)
    sl = [slice(None)] * x.ndim
    sl[a0] = slice(top, top + x.shape[a0])
    sl[a1] = slice(left, left + x.shape[a1])
    sl = tuple(sl)

    def vjp(g):
        return (np.ascontiguousarray(g[sl]),)

    return Tensor._make(out, (x,), vjp)


def roll2d(x: Tensor, shift: tuple, axes: tuple = (1, 2)) -> Tensor:
    """Cyclic shift along two axes (token grids are laid out B, H, W, C)."""
    out = np.roll(x.data, shift, axis=axes)
    neg = tuple(-s for s in shift)

    def vjp(g):
        return (np.ascontiguousarray(np.roll(g, neg, axis=axes)),)

    return Tensor._make(np.ascontiguousarray(out), (x,), vjp)


def bce_with_logits(logits: Tensor, target, pos_weight: float = 1.0) -> Tensor:
    """Elementwise binary cross-entropy on raw scores.

    Computed as ``pw*t*softplus(-x) + (1-t)*softplus(x)``, which never
    forms exp(x) for large x.  ``target`` is constant: no gradient flows
    to it.  ``pos_weight`` rescales the positive (target-side) term.
    """
    if isinstance(target, Tensor):
        target = target.data
    t = np.asarray(target, dtype=logits.dtype)
    if t.shape != logits.shape:
        raise DimensionError(f"target shape {t.shape} != logits shape {logits.shape}")
    tt = Tensor(t if pos_weight == 1.0 else pos_weight * t)
    one_minus = Tensor(np.asarray(1.0, dtype=logits.dtype) - t)
    return tt * softplus(-logits) + one_minus * softplus(logits)
