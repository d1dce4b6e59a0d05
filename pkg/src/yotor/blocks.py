"""Convolutional building blocks for the detection neck and heads.

The cross-stage blocks split their input into a processed branch and a
bypass branch, then merge; this keeps gradient paths short and parameter
counts down.  Activations default to SiLU with Mish available, and all
convolutions carry a bias since this package uses no batch statistics
anywhere.
"""
from __future__ import annotations

from typing import Optional

import numpy as np

from .nn import Conv2d, Module, ModuleList, Tensor, concat, mish, silu
from .nn import functional as F

ACTIVATIONS = {"silu": silu, "mish": mish}


# Init gain for convs that feed an activation.  These stacks carry no
# normalization layers, so the default 1/sqrt(fan_in) bound shrinks the
# activation variance roughly 3x per conv and ~20 convs in the signal is
# gone.  sqrt(6) is the uniform-init bound that keeps a rectifier-family
# stack scale-stable; larger values compound through the residual adds
# and overflow float32 at depth.
CONV_ACT_GAIN = 2.449489742783178
# Bare 1x1 branch convs (no activation of their own): unit-variance
# pass-through for uniform weights needs bound sqrt(3/fan_in).
CONV_LINEAR_GAIN = 1.7320508


class ConvAct(Module):
    """Convolution + activation, padding fixed to 'same' for odd kernels."""

    def __init__(self, in_ch: int, out_ch: int, kernel: int = 1, stride: int = 1,
                 act: str = "silu", rng=None, dtype=np.float32):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, kernel, stride, kernel // 2,
                           bias=True, rng=rng, dtype=dtype,
                           weight_gain=CONV_ACT_GAIN)
        self.act_name = act
        self._act = ACTIVATIONS[act]

    def forward(self, x: Tensor) -> Tensor:
        return self._act(self.conv(x))


class Bottleneck(Module):
    """1x1 reduce, 3x3 expand, optional residual add."""

    def __init__(self, in_ch: int, out_ch: int, shortcut: bool = True,
                 expansion: float = 1.0, act: str = "silu", rng=None, dtype=np.float32):
        super().__init__()
        hidden = int(out_ch * expansion)
        self.cv1 = ConvAct(in_ch, hidden, 1, act=act, rng=rng, dtype=dtype)
        self.cv2 = ConvAct(hidden, out_ch, 3, act=act, rng=rng, dtype=dtype)
        self.add = shortcut and in_ch == out_ch

    def forward(self, x: Tensor) -> Tensor:
        y = self.cv2(self.cv1(x))
        return x + y if self.add else y


class CSPBlock(Module):
    """Split-transform-merge stack of bottlenecks.

    One branch runs ``n`` bottlenecks at ``expansion * out_ch`` width, the
    other is a single linear 1x1; both concatenate before the closing 1x1.
    Neck fuses run at full width; backbone-style stages at half.
    """

    def __init__(self, in_ch: int, out_ch: int, n: int = 1, shortcut: bool = False,
                 expansion: float = 1.0, act: str = "silu", rng=None, dtype=np.float32):
        super().__init__()
        hidden = int(out_ch * expansion)
        self.cv1 = ConvAct(in_ch, hidden, 1, act=act, rng=rng, dtype=dtype)
        self.cv2 = Conv2d(hidden, hidden, 1, bias=False, rng=rng, dtype=dtype,
                          weight_gain=CONV_LINEAR_GAIN)
        self.m = ModuleList([Bottleneck(hidden, hidden, shortcut, 1.0, act, rng, dtype)
                             for _ in range(n)])
        self.cv3 = ConvAct(2 * hidden, out_ch, 1, act=act, rng=rng, dtype=dtype)
        self._act = ACTIVATIONS[act]

    def forward(self, x: Tensor) -> Tensor:
        x1 = self.cv1(x)
        y1 = x1
        for blk in self.m:
            y1 = blk(y1)
        y2 = self.cv2(x1)
        return self.cv3(self._act(concat([y1, y2], axis=1)))


class SPPCSP(Module):
    """Spatial pyramid pooling wrapped in a cross-stage split.

    The pooled branch concatenates the identity with stride-1 max pools of
    increasing receptive field before mixing back down.
    """

    def __init__(self, in_ch: int, out_ch: int, kernels: tuple = (5, 9, 13),
                 act: str = "silu", rng=None, dtype=np.float32):
        super().__init__()
        self.kernels = tuple(kernels)
        self.cv1 = ConvAct(in_ch, out_ch, 1, act=act, rng=rng, dtype=dtype)
        self.cv2 = Conv2d(in_ch, out_ch, 1, bias=False, rng=rng, dtype=dtype,
                          weight_gain=CONV_LINEAR_GAIN)
        self.cv3 = ConvAct(out_ch, out_ch, 3, act=act, rng=rng, dtype=dtype)
        self.cv4 = ConvAct(out_ch, out_ch, 1, act=act, rng=rng, dtype=dtype)
        self.cv5 = ConvAct((1 + len(kernels)) * out_ch, out_ch, 1, act=act, rng=rng, dtype=dtype)
        self.cv6 = ConvAct(out_ch, out_ch, 3, act=act, rng=rng, dtype=dtype)
        self.cv7 = ConvAct(2 * out_ch, out_ch, 1, act=act, rng=rng, dtype=dtype)
        self._act = ACTIVATIONS[act]

    def forward(self, x: Tensor) -> Tensor:
        x1 = self.cv4(self.cv3(self.cv1(x)))
        pools = [x1] + [F.maxpool2d(x1, k, stride=1, padding=k // 2) for k in self.kernels]
        y1 = self.cv6(self.cv5(concat(pools, axis=1)))
        y2 = self.cv2(x)
        return self.cv7(self._act(concat([y1, y2], axis=1)))


class StridedCSPDown(Module):
    """Stride-2 entry conv followed by a half-width cross-stage stack;
    makes the coarsest pyramid level when no pretrained deep stage is
    kept."""

    def __init__(self, in_ch: int, out_ch: int, n: int = 1, act: str = "silu",
                 rng=None, dtype=np.float32):
        super().__init__()
        self.down = ConvAct(in_ch, out_ch, 3, stride=2, act=act, rng=rng, dtype=dtype)
        self.csp = CSPBlock(out_ch, out_ch, n=n, shortcut=True, expansion=0.5,
                            act=act, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.csp(self.down(x))


class DarknetStage(StridedCSPDown):
    """The deepest stage of the original convolutional backbone, kept when a
    hybrid keeps that stage instead of synthesizing the coarsest level."""

    def __init__(self, in_ch: int, out_ch: int, n: int = 3, act: str = "silu",
                 rng=None, dtype=np.float32):
        super().__init__(in_ch, out_ch, n=n, act=act, rng=rng, dtype=dtype)


class ImplicitAdd(Module):
    """Learned per-channel offset applied before a head's projection."""

    def __init__(self, ch: int, rng=None, dtype=np.float32, std: float = 0.02):
        super().__init__()
        from .nn.module import _rng_or_default
        r = _rng_or_default(rng)
        self.implicit = Tensor(r.normal(0.0, std, size=(1, ch, 1, 1)).astype(dtype),
                               requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.implicit

    def param_count(self) -> int:
        return self.implicit.size


class ImplicitMul(Module):
    """Learned per-channel gain applied after a head's projection."""

    def __init__(self, ch: int, rng=None, dtype=np.float32, std: float = 0.02):
        super().__init__()
        from .nn.module import _rng_or_default
        r = _rng_or_default(rng)
        self.implicit = Tensor((1.0 + r.normal(0.0, std, size=(1, ch, 1, 1))).astype(dtype),
                               requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return x * self.implicit

    def param_count(self) -> int:
        return self.implicit.size
