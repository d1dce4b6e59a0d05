"""Curated finite-difference checks covering every differentiable op and
the composite model paths.

Each check builds a small float64 problem from a seed and compares recorded
gradients against central differences.  The CLI runs the suite directly;
tests drive the same registry with more seeds.
"""
from __future__ import annotations

from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from . import nn
from .nn import Tensor, gradcheck
from .nn import functional as F

# name -> builder(seed) -> (fn, inputs, max_components or None)
CHECKS: Dict[str, Callable] = {}


def _register(name: str):
    def deco(fn):
        CHECKS[name] = fn
        return fn
    return deco


def _t(rng, *shape, scale=1.0, shift=0.0):
    return Tensor(rng.normal(size=shape) * scale + shift,
                  requires_grad=True, dtype=np.float64)


def _weighted_sum(rng, shape):
    # a fixed projection makes sum-style objectives sensitive to every
    # output component, not just their total
    w = np.random.default_rng(12345).normal(size=shape)
    return lambda y: (y * Tensor(w)).sum()


# ----------------------------------------------------------------------
# elementary ops
# ----------------------------------------------------------------------
@_register("add_broadcast")
def _(seed):
    rng = np.random.default_rng(seed)
    a, b = _t(rng, 3, 4, 5), _t(rng, 4, 1)
    return lambda a, b: ((a + b) * (a + b)).mean(), [a, b], None


@_register("sub_mul")
def _(seed):
    rng = np.random.default_rng(seed)
    a, b = _t(rng, 4, 6), _t(rng, 6)
    return lambda a, b: ((a - b) * b).sum(), [a, b], None


@_register("div")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 3, 5)
    b = _t(rng, 3, 5, scale=0.3, shift=2.0)
    return lambda a, b: (a / b).sum(), [a, b], None


@_register("pow")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 4, 4, scale=0.5, shift=3.0)
    return lambda a: (a ** 2.5).sum(), [a], None


@_register("matmul_batched")
def _(seed):
    rng = np.random.default_rng(seed)
    a, b = _t(rng, 2, 3, 4, scale=0.5), _t(rng, 2, 4, 5, scale=0.5)
    return lambda a, b: (a @ b).sum(), [a, b], None


@_register("matmul_broadcast")
def _(seed):
    rng = np.random.default_rng(seed)
    a, b = _t(rng, 2, 2, 3, 4, scale=0.5), _t(rng, 4, 5, scale=0.5)
    w = _weighted_sum(rng, (2, 2, 3, 5))
    return lambda a, b: w(a @ b), [a, b], None


@_register("exp_log_sqrt")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 3, 4, scale=0.3, shift=2.0)
    return lambda a: (nn.exp(a * 0.3) + nn.log(a) + nn.sqrt(a)).sum(), [a], None


@_register("tanh_sigmoid_softplus")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 5, 3)
    return lambda a: (nn.tanh(a) * nn.sigmoid(a) + nn.softplus(a)).sum(), [a], None


@_register("silu")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 4, 4)
    return lambda a: (nn.silu(a) ** 2).sum(), [a], None


@_register("mish")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 4, 4)
    return lambda a: nn.mish(a).sum(), [a], None


@_register("gelu")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 4, 4)
    return lambda a: nn.gelu(a).sum(), [a], None


@_register("arctan")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 4, 4)
    return lambda a: nn.arctan(a).sum(), [a], None


@_register("maximum_minimum")
def _(seed):
    rng = np.random.default_rng(seed)
    a, b = _t(rng, 4, 5), _t(rng, 4, 5)
    return (lambda a, b: (nn.maximum(a, b) * 2.0 + nn.minimum(a, b)).sum(),
            [a, b], None)


@_register("clamp_min")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 6, 3)
    return lambda a: (nn.clamp_min(a, 0.25) ** 2).sum(), [a], None


@_register("reductions")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 3, 4, 5)
    return (lambda a: a.sum(axis=1).mean() + a.mean(axis=(0, 2)).sum()
            + a.max(axis=2).sum(), [a], None)


@_register("reshape_permute")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 2, 3, 4)
    w = _weighted_sum(rng, (4, 3, 2))
    return lambda a: w(a.permute(2, 1, 0)) + (a.reshape(6, 4) ** 2).sum(), [a], None


@_register("getitem")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 5, 6)
    idx = np.random.default_rng(seed + 1000).integers(0, 5, size=8)
    return (lambda a: (a[idx] ** 2).sum() + a[1:4, 2:5].sum() + a[:, 0].sum(),
            [a], None)


@_register("concat_stack")
def _(seed):
    rng = np.random.default_rng(seed)
    a, b = _t(rng, 2, 3), _t(rng, 2, 3)
    return (lambda a, b: (nn.concat([a, b], axis=1) ** 2).sum()
            + nn.stack([a, b], axis=0).mean(), [a, b], None)


@_register("where_mask")
def _(seed):
    rng = np.random.default_rng(seed)
    a, b = _t(rng, 4, 4), _t(rng, 4, 4)
    mask = np.random.default_rng(seed + 7).random((4, 4)) > 0.5
    return lambda a, b: (nn.where_mask(mask, a, b) ** 2).sum(), [a, b], None


@_register("softmax")
def _(seed):
    rng = np.random.default_rng(seed)
    a = _t(rng, 3, 4, 6)
    w = _weighted_sum(rng, (3, 4, 6))
    return lambda a: w(F.softmax(a, axis=-1)), [a], None


@_register("layer_norm")
def _(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 3, 5, 8)
    w = _t(rng, 8, scale=0.2, shift=1.0)
    b = _t(rng, 8, scale=0.2)
    ws = _weighted_sum(rng, (3, 5, 8))
    return lambda x, w, b: ws(F.layer_norm(x, w, b)), [x, w, b], None


@_register("linear")
def _(seed):
    rng = np.random.default_rng(seed)
    x, w, b = _t(rng, 4, 6), _t(rng, 3, 6, scale=0.5), _t(rng, 3, scale=0.5)
    return lambda x, w, b: (F.linear(x, w, b) ** 2).sum(), [x, w, b], None


@_register("conv2d_s1")
def _(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 2, 3, 6, 6, scale=0.5)
    w = _t(rng, 4, 3, 3, 3, scale=0.3)
    b = _t(rng, 4, scale=0.3)
    ws = _weighted_sum(rng, (2, 4, 6, 6))
    return lambda x, w, b: ws(F.conv2d(x, w, b, stride=1, padding=1)), [x, w, b], None


@_register("conv2d_s2_nobias")
def _(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 1, 2, 7, 9, scale=0.5)
    w = _t(rng, 3, 2, 3, 3, scale=0.3)
    return lambda x, w: (F.conv2d(x, w, stride=2, padding=1) ** 2).sum(), [x, w], None


@_register("maxpool2d")
def _(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 1, 2, 6, 6)
    ws = _weighted_sum(rng, (1, 2, 6, 6))
    return lambda x: ws(F.maxpool2d(x, 5, stride=1, padding=2)), [x], None


@_register("upsample_nearest")
def _(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 1, 3, 4, 4)
    ws = _weighted_sum(rng, (1, 3, 8, 8))
    return lambda x: ws(F.upsample_nearest2d(x, 2)), [x], None


@_register("pad_roll")
def _(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 2, 5, 4, 3)
    ws = _weighted_sum(rng, (2, 7, 6, 3))
    return (lambda x: ws(F.pad2d(F.roll2d(x, (1, -2), axes=(1, 2)), 1, 1, 1, 1,
                                 spatial_axes=(1, 2))), [x], None)


@_register("bce_with_logits")
def _(seed):
    rng = np.random.default_rng(seed)
    x = _t(rng, 4, 5, scale=2.0)
    t = np.random.default_rng(seed + 3).random((4, 5))
    return lambda x: F.bce_with_logits(x, t).mean(), [x], None


@_register("ciou")
def _(seed):
    rng = np.random.default_rng(seed)
    from .train import ciou_cxcywh

    n = 6
    r = np.random.default_rng(seed + 9)
    pred = Tensor(np.column_stack([r.uniform(2, 8, n), r.uniform(2, 8, n),
                                   r.uniform(1, 4, n), r.uniform(1, 4, n)]),
                  requires_grad=True, dtype=np.float64)
    target = np.column_stack([r.uniform(2, 8, n), r.uniform(2, 8, n),
                              r.uniform(1, 4, n), r.uniform(1, 4, n)])
    return lambda p: (1.0 - ciou_cxcywh(p, target)).sum(), [pred], None


# ----------------------------------------------------------------------
# composites
# ----------------------------------------------------------------------
def _tiny_block(seed, shift):
    from .swin import SwinBlock

    rng = np.random.default_rng(seed)
    blk = SwinBlock(8, 2, 4, shift, rng=rng, dtype=np.float64)
    blk.attn.rel_bias_table.data = rng.normal(size=blk.attn.rel_bias_table.shape) * 0.05
    x = _t(rng, 1, 6, 7, 8, scale=0.5)
    params = [blk.attn.qkv.weight, blk.attn.rel_bias_table, blk.mlp.fc1.weight,
              blk.norm1.weight]
    ws = _weighted_sum(rng, (1, 6, 7, 8))
    return lambda x, *ps: ws(blk(x)), [x] + params, 12


@_register("swin_block_plain")
def _(seed):
    return _tiny_block(seed, shift=0)


@_register("swin_block_shifted")
def _(seed):
    return _tiny_block(seed, shift=2)


@_register("patch_merge")
def _(seed):
    from .swin import PatchMerging

    rng = np.random.default_rng(seed)
    m = PatchMerging(4, rng=rng, dtype=np.float64)
    x = _t(rng, 1, 5, 6, 4, scale=0.5)
    ws = _weighted_sum(rng, (1, 3, 3, 8))
    return lambda x, w: ws(m(x)), [x, m.reduction.weight], 16


def _toy_cfg():
    from .builder import ModelConfig
    from . import zoo

    return ModelConfig.toy(
        num_classes=2, embed_dim=8, depths=(2, 1, 1, 1), num_heads=(1, 1, 1, 1),
        window_size=2, tap_channels=(8, 8, 8), p6_channels=8,
        neck_widths=(4, 4, 4, 4), head_channels=(8, 8, 8, 8), csp_depth=1,
        anchors=zoo.ANCHORS_TOY)


@_register("toy_backbone")
def _(seed):
    from .swin import SwinBackbone

    cfg = _toy_cfg().swin_config
    rng = np.random.default_rng(seed)
    bb = SwinBackbone(cfg, rng=rng, dtype=np.float64)
    x = _t(rng, 1, 3, 16, 16, scale=0.5)
    params = [bb.patch_embed.proj.weight,
              bb.stages[0][1].attn.qkv.weight,
              bb.merges[0].reduction.weight,
              bb.out_norms[0].weight]

    def fn(x, *ps):
        outs = bb(x)
        acc = None
        for o in outs:
            term = (o * Tensor(_fixed(o.shape))).sum()
            acc = term if acc is None else acc + term
        return acc

    return fn, [x] + params, 10


_fixed_cache: dict = {}


def _fixed(shape):
    if shape not in _fixed_cache:
        _fixed_cache[shape] = np.random.default_rng(hash(shape) % (2 ** 31)).normal(size=shape)
    return _fixed_cache[shape]


@_register("adapter")
def _(seed):
    from .builder import Adapter

    rng = np.random.default_rng(seed)
    ad = Adapter(6, 4, rng=rng, dtype=np.float64)
    x = _t(rng, 1, 5, 5, 6, scale=0.5)
    ws = _weighted_sum(rng, (1, 4, 5, 5))
    return (lambda x, w, n: ws(ad(x)), [x, ad.conv.weight, ad.norm.weight], 12)


@_register("neck_head")
def _(seed):
    from .head import DetectHead
    from .neck import PANNeck

    rng = np.random.default_rng(seed)
    neck = PANNeck([4, 4, 4, 4], [4, 4, 4, 4], [4, 4, 4, 4], csp_depth=1,
                   rng=rng, dtype=np.float64)
    head = DetectHead([4, 4, 4, 4], 2, [[4, 4, 8, 6, 6, 10]] * 4, [8, 16, 32, 64],
                      rng=rng, dtype=np.float64)
    feats = [_t(rng, 1, 4, 8 // (2 ** i), 8 // (2 ** i), scale=0.5) for i in range(4)]
    params = [neck.spp.cv1.conv.weight, neck.td_fuse[0].cv3.conv.weight,
              neck.bu_down[0].conv.weight, head.proj[0].weight,
              head.ia[0].implicit, head.im[0].implicit]

    def fn(*inputs):
        fs = list(inputs[:4])
        outs = head(neck(fs))
        acc = None
        for o in outs:
            term = (o * Tensor(_fixed(o.shape))).sum()
            acc = term if acc is None else acc + term
        return acc

    return fn, feats + params, 8


@_register("total_loss")
def _(seed):
    from .builder import DetectionModel
    from .train import assign_targets, detection_loss

    cfg = _toy_cfg()
    cfg.seed = seed
    model = DetectionModel(cfg, dtype=np.float64)
    rng = np.random.default_rng(seed + 50)
    x = _t(rng, 1, 3, 64, 64, scale=0.3, shift=0.5)
    targets = [np.array([[0, 24.0, 24.0, 14.0, 18.0],
                         [1, 44.0, 40.0, 20.0, 16.0]])]
    preds = model(x)
    grid_sizes = [(p.shape[2], p.shape[3]) for p in preds]
    assigned = assign_targets(targets, grid_sizes, model.head.anchors,
                              model.strides, 4.0)
    capture: dict = {}
    detection_loss(preds, assigned, model.head.anchors, model.strides,
                   capture=capture)
    frozen = capture["obj_targets"]
    params = [model.backbone.patch_embed.proj.weight,
              model.backbone.stages[0][1].attn.qkv.weight,
              model.adapters[0].conv.weight,
              model.p6_block.csp.cv1.conv.weight,
              model.neck.spp.cv5.conv.weight,
              model.head.proj[2].weight,
              model.head.ia[1].implicit,
              model.head.im[3].implicit]

    def fn(x, *ps):
        preds = model(x)
        total, _ = detection_loss(preds, assigned, model.head.anchors,
                                  model.strides, fixed_obj_targets=frozen)
        return total

    return fn, [x] + params, 6


# ----------------------------------------------------------------------
def run_suite(seeds: int = 3, names: Optional[List[str]] = None,
              verbose: bool = False, rtol: float = 1e-4) -> int:
    """Run checks over ``seeds`` seeds each; returns the failure count."""
    failures = 0
    for name in (names or sorted(CHECKS)):
        build = CHECKS[name]
        worst = 0.0
        ok = True
        for seed in range(seeds):
            fn, inputs, max_comp = build(seed)
            r = gradcheck(fn, inputs, max_components=max_comp,
                          rng=np.random.default_rng(seed), rtol=rtol)
            worst = max(worst, r.max_rel_err)
            if not r.ok:
                ok = False
                if verbose:
                    print(f"  {name} seed {seed}: {r.worst}")
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name:<24} max rel err {worst:.3e}")
        if not ok:
            failures += 1
    return failures
