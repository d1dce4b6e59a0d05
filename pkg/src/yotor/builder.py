"""Model assembly from a declarative configuration.

A :class:`ModelConfig` pins every structural choice: backbone size, how the
token grids are adapted into the convolutional pyramid, how the coarsest
level is synthesized, neck widths, head channels, anchors.  Named variants
fill the config from the published tables; anything can also be loaded from
or saved to YAML.

Adapters bridge the two worlds: each takes a (B, H, W, C) token grid,
normalizes it, reshapes to NCHW, and (unless the config says otherwise)
projects channels with a 1x1 convolution.
"""
from __future__ import annotations

import io
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Sequence, Union

import numpy as np
import yaml

from . import zoo
from .blocks import CONV_LINEAR_GAIN, DarknetStage, StridedCSPDown
from .head import DetectHead
from .neck import PANNeck
from .nn import Conv2d, LayerNorm, Module, ModuleList, Tensor
from .swin import SwinBackbone, SwinConfig


@dataclass
class ModelConfig:
    name: str = "custom"
    num_classes: int = 80
    # backbone
    embed_dim: int = 96
    depths: tuple = (2, 2, 6, 2)
    num_heads: tuple = (3, 6, 12, 24)
    window_size: int = 7
    patch_size: int = 4
    in_ch: int = 3
    # token-grid adapters; empty tap_channels means norm+reshape only
    adapter_convs: bool = True
    tap_channels: tuple = (256, 384, 512)
    # coarsest pyramid level
    p6_channels: int = 640
    p6_mode: str = "strided_csp"  # "strided_csp" | "darknet_b6"
    p6_depth: int = 1
    # neck and heads
    neck_widths: tuple = (128, 192, 256, 320)
    head_channels: tuple = (256, 384, 512, 640)
    csp_depth: int = 3
    act: str = "silu"
    anchors: tuple = zoo.ANCHORS_P6
    strides: tuple = zoo.STRIDES_P6
    implicit: bool = True
    seed: int = 0

    def __post_init__(self):
        for f in ("depths", "num_heads", "tap_channels", "neck_widths",
                  "head_channels", "strides"):
            setattr(self, f, tuple(getattr(self, f)))
        self.anchors = tuple(tuple(a) for a in self.anchors)
        if self.p6_mode not in ("strided_csp", "darknet_b6"):
            raise ValueError(f"unknown p6_mode {self.p6_mode!r}")
        if len(self.strides) != len(self.anchors):
            raise ValueError("one anchor row per stride is required")

    # ------------------------------------------------------------------
    @property
    def swin_config(self) -> SwinConfig:
        return SwinConfig(embed_dim=self.embed_dim, depths=self.depths,
                          num_heads=self.num_heads, window_size=self.window_size,
                          patch_size=self.patch_size, in_ch=self.in_ch,
                          out_stages=(1, 2, 3))

    @property
    def pyramid_channels(self) -> tuple:
        """Channels entering the neck, finest first."""
        if self.adapter_convs:
            taps = self.tap_channels
        else:
            taps = self.swin_config.out_dims
        return taps + (self.p6_channels,)

    # ------------------------------------------------------------------
    @classmethod
    def variant(cls, name: str, num_classes: int = 80, seed: int = 0) -> "ModelConfig":
        """Configs for the published hybrids: TP4, TP5, BP4, BB4."""
        key = name.upper()
        if len(key) < 3 or key[0] not in zoo.SWIN_VARIANTS:
            raise ValueError(f"unknown variant {name!r}")
        swin = zoo.SWIN_VARIANTS[key[0]]
        scheme = key[1:]
        base = dict(name=key, num_classes=num_classes, seed=seed, **swin)
        if scheme == "P4":
            return cls(**base, **zoo.PLAN_P6)
        if scheme == "P5":
            # same plan, but the coarsest level is the retained deep stage
            # of the original convolutional backbone
            return cls(**base, **zoo.PLAN_P6, p6_mode="darknet_b6", p6_depth=3)
        if scheme == "B4":
            # heads re-sized to the raw token dims; no adapter convolutions
            dims = SwinConfig(embed_dim=swin["embed_dim"], depths=swin["depths"],
                              num_heads=swin["num_heads"]).out_dims
            return cls(**base, adapter_convs=False, tap_channels=(),
                       p6_channels=dims[-1],
                       neck_widths=tuple(d // 2 for d in dims) + (dims[-1] // 2,),
                       head_channels=dims + (dims[-1],), csp_depth=3)
        raise ValueError(f"unknown variant {name!r}")

    @classmethod
    def toy(cls, num_classes: int = 2, seed: int = 0, **overrides) -> "ModelConfig":
        """Desk-scale model with the same four-level structure."""
        base = dict(
            name="toy", num_classes=num_classes, seed=seed,
            embed_dim=16, depths=(1, 1, 1, 1), num_heads=(1, 2, 2, 2),
            window_size=4, tap_channels=(16, 24, 32), p6_channels=40,
            p6_mode="darknet_b6", p6_depth=1,
            neck_widths=(8, 12, 16, 20), head_channels=(16, 24, 32, 40),
            csp_depth=1, anchors=zoo.ANCHORS_TOY,
        )
        base.update(overrides)
        return cls(**base)

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        d = asdict(self)
        d["anchors"] = [list(a) for a in self.anchors]
        for f in ("depths", "num_heads", "tap_channels", "neck_widths",
                  "head_channels", "strides"):
            d[f] = list(d[f])
        return d

    def to_yaml(self, path=None) -> str:
        text = yaml.safe_dump(self.to_dict(), sort_keys=True)
        if path is not None:
            with open(path, "w") as f:
                f.write(text)
        return text

    @classmethod
    def from_yaml(cls, source: Union[str, io.IOBase]) -> "ModelConfig":
        if hasattr(source, "read"):
            data = yaml.safe_load(source)
        else:
            with open(source) as f:
                data = yaml.safe_load(f)
        known = {f.name for f in fields(cls)}
        extra = set(data) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**data)


class Adapter(Module):
    """Token grid (B, H, W, C) -> feature map (B, C', H, W).

    Normalizes over channels, moves channels in front, then optionally
    projects with a 1x1 convolution.  Without the projection, C' == C.
    """

    def __init__(self, in_dim: int, out_ch: Optional[int], rng=None, dtype=np.float32):
        super().__init__()
        self.norm = LayerNorm(in_dim, dtype=dtype)
        # linear projection into a norm-free neck: keep unit variance
        self.conv = Conv2d(in_dim, out_ch, 1, rng=rng, dtype=dtype,
                           weight_gain=CONV_LINEAR_GAIN) if out_ch else None

    def forward(self, x: Tensor) -> Tensor:
        x = self.norm(x).permute(0, 3, 1, 2)
        return self.conv(x) if self.conv is not None else x


class DetectionModel(Module):
    """Backbone + adapters + synthesized coarsest level + neck + heads."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        super().__init__()
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.backbone = SwinBackbone(cfg.swin_config, rng=rng, dtype=dtype)
        swin_dims = cfg.swin_config.out_dims
        pyr = cfg.pyramid_channels
        self.adapters = ModuleList([
            Adapter(swin_dims[i], pyr[i] if cfg.adapter_convs else None, rng, dtype)
            for i in range(len(swin_dims))])
        if cfg.p6_mode == "darknet_b6":
            self.p6_block = DarknetStage(pyr[-2], cfg.p6_channels, n=cfg.p6_depth,
                                         act=cfg.act, rng=rng, dtype=dtype)
        else:
            self.p6_block = StridedCSPDown(pyr[-2], cfg.p6_channels, n=cfg.p6_depth,
                                           act=cfg.act, rng=rng, dtype=dtype)
        self.neck = PANNeck(pyr, cfg.neck_widths, cfg.head_channels,
                            cfg.csp_depth, cfg.act, rng=rng, dtype=dtype)
        self.head = DetectHead(cfg.head_channels, cfg.num_classes, cfg.anchors,
                               cfg.strides, cfg.implicit, rng=rng, dtype=dtype)

    @property
    def strides(self) -> tuple:
        return self.head.strides

    @property
    def num_classes(self) -> int:
        return self.head.num_classes

    def forward(self, x: Tensor, trace: Optional[dict] = None) -> list:
        """NCHW image batch -> per-level (B, na, H, W, 5+nc) raw outputs."""
        grids = self.backbone(x)
        feats = [ad(g) for ad, g in zip(self.adapters, grids)]
        feats.append(self.p6_block(feats[-1]))
        if trace is not None:
            for i, f in enumerate(feats):
                trace[f"pyr{i}"] = f
        outs = self.neck(feats, trace=trace)
        return self.head(outs)


def build(spec: Union[str, ModelConfig], num_classes: Optional[int] = None,
          seed: Optional[int] = None, dtype=np.float32) -> DetectionModel:
    """Build from a variant name ("TP4", "toy") or a full config."""
    if isinstance(spec, ModelConfig):
        cfg = spec
    elif spec.lower() == "toy":
        cfg = ModelConfig.toy(num_classes if num_classes is not None else 2,
                              seed if seed is not None else 0)
    else:
        cfg = ModelConfig.variant(spec, num_classes if num_classes is not None else 80,
                                  seed if seed is not None else 0)
    return DetectionModel(cfg, dtype=dtype)


def save_model(model: DetectionModel, path) -> None:
    """Weights plus the full config, in the package's container format."""
    from .nn import save_weights

    save_weights(path, model.state_dict(), meta={"config": model.cfg.to_dict()})


def load_model(path, dtype=np.float32) -> DetectionModel:
    """Rebuild a model from a container written by :func:`save_model`."""
    from .nn import load_weights

    state, meta = load_weights(path)
    if "config" not in meta:
        raise ValueError(f"{path}: container has no model config in its meta")
    cfg = ModelConfig(**meta["config"])
    model = DetectionModel(cfg, dtype=dtype)
    model.load_state_dict(state)
    return model


def summarize(model: DetectionModel) -> dict:
    """Structural summary: per-section parameter counts and head layout."""
    cfg = model.cfg
    sections = {
        "backbone": model.backbone.param_count(),
        "adapters": model.adapters.param_count(),
        "p6": model.p6_block.param_count(),
        "neck": model.neck.param_count(),
        "head": model.head.param_count(),
    }
    total = sum(sections.values())
    return {
        "name": cfg.name,
        "num_classes": cfg.num_classes,
        "strides": list(model.strides),
        "anchors_per_level": model.head.na,
        "head_channels": list(cfg.head_channels),
        "pyramid_channels": list(cfg.pyramid_channels),
        "params": sections | {"total": total},
        "p6_mode": cfg.p6_mode,
        "adapter_convs": cfg.adapter_convs,
    }
