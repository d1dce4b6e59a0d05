"""Target assignment, composite loss, and a small SGD training loop.

Assignment follows the anchor-ratio rule: a ground-truth box lands on an
anchor when neither width nor height ratio between them exceeds the
threshold, on the cell containing its center plus the nearest horizontal
and vertical neighbour cells (ties at the exact half go right/down), with
out-of-grid neighbours dropped.

The loss combines complete-IoU box regression on matched cells, binary
cross-entropy objectness against the (detached, clamped) IoU of each match,
and binary cross-entropy classification: box and class terms average over
all matches pooled across levels, objectness averages per level and the
level terms add up unweighted.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .nn import Tensor, arctan, clamp_min, concat, maximum, minimum, sigmoid
from .nn.functional import bce_with_logits
from .nn.tensor import DimensionError


@dataclass
class TrainConfig:
    steps: int = 300
    batch_size: int = 8
    lr0: float = 0.01
    lrf: float = 0.2                 # final lr = lr0 * lrf after cosine decay
    momentum: float = 0.937
    nesterov: bool = True
    weight_decay: float = 0.0005
    warmup_epochs: float = 3.0
    warmup_momentum: float = 0.8
    warmup_bias_lr: float = 0.1
    box_gain: float = 0.05
    obj_gain: float = 1.0
    cls_gain: float = 0.5
    cls_pw: float = 1.0              # classification BCE positive weight
    obj_pw: float = 1.0              # objectness BCE positive weight
    iou_t: float = 0.2               # stored for config fidelity; unused here
    anchor_t: float = 4.0
    focal_gamma: float = 0.0         # 0 disables the focal modulation
    # Augmentation strengths: recorded so configs round-trip completely,
    # but this trainer does no augmentation.
    hsv_h: float = 0.015
    hsv_s: float = 0.7
    hsv_v: float = 0.4
    degrees: float = 0.0
    translate: float = 0.5
    scale: float = 0.5
    shear: float = 0.0
    perspective: float = 0.0
    flipud: float = 0.0
    fliplr: float = 0.5
    mosaic: float = 1.0
    mixup: float = 0.0
    freeze_backbone: bool = False
    seed: int = 0


# ----------------------------------------------------------------------
# assignment
# ----------------------------------------------------------------------
def assign_targets(targets: Sequence[np.ndarray], grid_sizes: Sequence[tuple],
                   anchors: np.ndarray, strides: Sequence[int],
                   anchor_t: float = 4.0) -> List[dict]:
    """Map ground truths to (image, anchor, cell) slots per level.

    ``targets[b]`` is (n, 5): class, cx, cy, w, h in input pixels.
    ``grid_sizes[li]`` is (H, W) of level li.  Returns one dict per level
    with integer index arrays ``b``, ``a``, ``gj`` (row), ``gi`` (col),
    float arrays ``txy`` (center offset from cell origin, in [-0.5, 1.5)),
    ``twh`` (size in grid units), and ``cls``.
    """
    nl, na = anchors.shape[0], anchors.shape[1]
    out = []
    for li in range(nl):
        h, w = grid_sizes[li]
        s = float(strides[li])
        rows = {k: [] for k in ("b", "a", "gj", "gi", "txy", "twh", "cls")}
        for b, t in enumerate(targets):
            if len(t) == 0:
                continue
            cls = t[:, 0]
            cx, cy = t[:, 1] / s, t[:, 2] / s
            bw, bh = t[:, 3] / s, t[:, 4] / s
            for n in range(len(t)):
                for a in range(na):
                    aw, ah = anchors[li, a] / s
                    r = max(bw[n] / aw, aw / bw[n], bh[n] / ah, ah / bh[n])
                    if r >= anchor_t:
                        continue
                    j, i = int(math.floor(cx[n])), int(math.floor(cy[n]))
                    fx, fy = cx[n] - j, cy[n] - i
                    cells = [(j, i),
                             (j - 1 if fx < 0.5 else j + 1, i),
                             (j, i - 1 if fy < 0.5 else i + 1)]
                    for cj, ci in cells:
                        if not (0 <= cj < w and 0 <= ci < h):
                            continue
                        rows["b"].append(b)
                        rows["a"].append(a)
                        rows["gj"].append(ci)
                        rows["gi"].append(cj)
                        rows["txy"].append((cx[n] - cj, cy[n] - ci))
                        rows["twh"].append((bw[n], bh[n]))
                        rows["cls"].append(int(cls[n]))
        out.append({
            "b": np.asarray(rows["b"], dtype=np.int64),
            "a": np.asarray(rows["a"], dtype=np.int64),
            "gj": np.asarray(rows["gj"], dtype=np.int64),
            "gi": np.asarray(rows["gi"], dtype=np.int64),
            "txy": np.asarray(rows["txy"], dtype=np.float64).reshape(-1, 2),
            "twh": np.asarray(rows["twh"], dtype=np.float64).reshape(-1, 2),
            "cls": np.asarray(rows["cls"], dtype=np.int64),
        })
    return out


# ----------------------------------------------------------------------
# complete IoU
# ----------------------------------------------------------------------
def ciou_cxcywh(pred: Tensor, target: np.ndarray, eps: float = 1e-7) -> Tensor:
    """Complete IoU between predicted and constant target boxes.

    Both are (N, 4) center-size.  Fully differentiable in ``pred``,
    including the aspect-consistency weight.
    """
    if pred.shape[0] != target.shape[0]:
        raise DimensionError("pred and target box counts differ")
    t = np.asarray(target, dtype=pred.dtype)
    px, py, pw, ph = pred[:, 0], pred[:, 1], pred[:, 2], pred[:, 3]
    tx, ty = Tensor(t[:, 0]), Tensor(t[:, 1])
    tw, th = Tensor(t[:, 2]), Tensor(t[:, 3])

    px1, px2 = px - pw * 0.5, px + pw * 0.5
    py1, py2 = py - ph * 0.5, py + ph * 0.5
    tx1, tx2 = tx - tw * 0.5, tx + tw * 0.5
    ty1, ty2 = ty - th * 0.5, ty + th * 0.5

    iw = clamp_min(minimum(px2, tx2) - maximum(px1, tx1), 0.0)
    ih = clamp_min(minimum(py2, ty2) - maximum(py1, ty1), 0.0)
    inter = iw * ih
    union = pw * ph + tw * th - inter + eps
    iou = inter / union

    cw = maximum(px2, tx2) - minimum(px1, tx1)
    ch = maximum(py2, ty2) - minimum(py1, ty1)
    c2 = cw * cw + ch * ch + eps
    rho2 = (px - tx) * (px - tx) + (py - ty) * (py - ty)

    four_over_pi2 = 4.0 / (math.pi ** 2)
    dv = arctan(tw / (th + eps)) - arctan(pw / (ph + eps))
    v = four_over_pi2 * dv * dv
    alpha = v / (1.0 - iou + v + eps)
    return iou - rho2 / c2 - alpha * v


# ----------------------------------------------------------------------
# loss
# ----------------------------------------------------------------------
def detection_loss(preds: Sequence[Tensor], assigned: Sequence[dict],
                   anchors: np.ndarray, strides: Sequence[int],
                   cfg: Optional[TrainConfig] = None,
                   fixed_obj_targets: Optional[Sequence[np.ndarray]] = None,
                   capture: Optional[dict] = None
                   ) -> Tuple[Tensor, Dict[str, float]]:
    """Composite loss over per-level raw head outputs.

    ``preds[li]`` is (B, na, H, W, 5+nc).  ``fixed_obj_targets`` replaces
    the match-IoU objectness targets with given constants, which makes the
    whole loss a fixed function of the predictions (finite-difference
    checks need that; training recomputes IoU each call).  ``capture``,
    when given, receives the objectness target arrays actually used under
    key "obj_targets".
    """
    cfg = cfg or TrainConfig()
    nc = preds[0].shape[-1] - 5
    dtype = preds[0].dtype

    def bce(logits, target, pw):
        loss = bce_with_logits(logits, target, pos_weight=pw)
        if cfg.focal_gamma > 0:
            # focal modulation: scale each element by (1 - p_t)^gamma
            t = Tensor(np.asarray(target, dtype=dtype))
            p = sigmoid(logits)
            p_t = t * p + (1.0 - t) * (1.0 - p)
            loss = loss * (1.0 - p_t) ** cfg.focal_gamma
        return loss

    box_terms = []
    cls_terms = []
    obj_loss = None
    obj_targets_used = []
    parts = {"box": 0.0, "obj": 0.0, "cls": 0.0}
    for li, p in enumerate(preds):
        b, na, h, w, no = p.shape
        asg = assigned[li]
        idx = (asg["b"], asg["a"], asg["gj"], asg["gi"])
        n_match = len(asg["b"])
        obj_target = np.zeros((b, na, h, w), dtype=dtype)
        if n_match:
            ps = p[idx]  # (n, 5+nc)
            pxy = sigmoid(ps[:, 0:2]) * 2.0 - 0.5
            anc = (anchors[li] / float(strides[li]))[asg["a"]]
            pwh_half = sigmoid(ps[:, 2:4]) * 2.0
            pwh = pwh_half * pwh_half * Tensor(anc.astype(dtype))
            pbox = concat([pxy, pwh], axis=1)
            tbox = np.concatenate([asg["txy"], asg["twh"]], axis=1)
            ciou = ciou_cxcywh(pbox, tbox)
            box_terms.append(1.0 - ciou)
            if fixed_obj_targets is not None:
                obj_target = np.asarray(fixed_obj_targets[li], dtype=dtype)
            else:
                obj_target[idx] = np.clip(ciou.detach().numpy(), 0.0, None)
            if nc > 1:
                onehot = np.zeros((n_match, nc), dtype=dtype)
                onehot[np.arange(n_match), asg["cls"]] = 1.0
                cls_terms.append(bce(ps[:, 5:], onehot, cfg.cls_pw).reshape(-1))
        elif fixed_obj_targets is not None:
            obj_target = np.asarray(fixed_obj_targets[li], dtype=dtype)
        obj_targets_used.append(obj_target)
        level_obj = bce(p[:, :, :, :, 4], obj_target, cfg.obj_pw).mean()
        obj_loss = level_obj if obj_loss is None else obj_loss + level_obj
    if capture is not None:
        capture["obj_targets"] = obj_targets_used
    zero = Tensor(np.zeros((), dtype=dtype))
    box_loss = concat(box_terms, axis=0).mean() if box_terms else zero
    cls_loss = concat(cls_terms, axis=0).mean() if cls_terms else zero
    total = cfg.box_gain * box_loss + cfg.obj_gain * obj_loss + cfg.cls_gain * cls_loss
    parts["box"] = float(box_loss.item())
    parts["obj"] = float(obj_loss.item())
    parts["cls"] = float(cls_loss.item())
    parts["total"] = float(total.item())
    return total, parts


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------
class SGD:
    """Momentum SGD with per-group learning rate and L2 weight decay.

    Nesterov update, matching the detector lineage trainers.  With
    momentum 0 and decay 0 this reduces to plain gradient descent.
    """

    def __init__(self, groups: Sequence[dict], momentum: float = 0.937,
                 nesterov: bool = True):
        self.groups = []
        self.momentum = momentum
        self.nesterov = nesterov
        for g in groups:
            self.groups.append({
                "params": list(g["params"]),
                "lr": float(g.get("lr", 0.01)),
                "weight_decay": float(g.get("weight_decay", 0.0)),
                "velocity": [np.zeros_like(p.data) for p in g["params"]],
            })

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def step(self) -> None:
        mu = self.momentum
        for g in self.groups:
            wd, lr = g["weight_decay"], g["lr"]
            for p, v in zip(g["params"], g["velocity"]):
                if p.grad is None:
                    continue
                grad = p.grad
                if wd:
                    grad = grad + wd * p.data
                v *= mu
                v += grad
                upd = grad + mu * v if (self.nesterov and mu) else v
                p.data = p.data - lr * upd


def param_groups(model, cfg: TrainConfig) -> List[dict]:
    """Three groups: decayed weights, undecayed gains/offsets, biases."""
    decay, no_decay, biases = [], [], []
    for name, p in model.named_parameters():
        if cfg.freeze_backbone and name.startswith("backbone."):
            continue
        if name.endswith(".bias"):
            biases.append(p)
        elif p.data.ndim <= 1 or "implicit" in name or "rel_bias_table" in name:
            no_decay.append(p)
        else:
            decay.append(p)
    return [
        {"params": decay, "lr": cfg.lr0, "weight_decay": cfg.weight_decay},
        {"params": no_decay, "lr": cfg.lr0, "weight_decay": 0.0},
        {"params": biases, "lr": cfg.lr0, "weight_decay": 0.0},
    ]


def lr_schedule(step: int, total_steps: int, steps_per_epoch: int,
                cfg: TrainConfig) -> Tuple[List[float], float]:
    """Per-group learning rates plus momentum for one step.

    Linear warmup over ``warmup_epochs`` (biases ramp down from
    ``warmup_bias_lr``, everything else up from zero; momentum ramps from
    ``warmup_momentum``), then cosine decay of the base rate to
    ``lr0 * lrf`` at the final epoch.
    """
    epochs = max(total_steps / steps_per_epoch, 1e-9)
    epoch = step / steps_per_epoch
    cos_factor = ((1.0 - math.cos(min(epoch / epochs, 1.0) * math.pi)) / 2.0) \
        * (cfg.lrf - 1.0) + 1.0
    base = cfg.lr0 * cos_factor
    warm_steps = cfg.warmup_epochs * steps_per_epoch
    if step < warm_steps:
        f = step / max(warm_steps, 1e-9)
        lrs = [base * f, base * f, cfg.warmup_bias_lr + (base - cfg.warmup_bias_lr) * f]
        mom = cfg.warmup_momentum + (cfg.momentum - cfg.warmup_momentum) * f
    else:
        lrs = [base, base, base]
        mom = cfg.momentum
    return lrs, mom


# ----------------------------------------------------------------------
# loop
# ----------------------------------------------------------------------
class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, parts: Dict[str, float]):
        self.step = step
        self.parts = parts
        super().__init__(f"non-finite loss at step {step}: {parts}")


@dataclass
class TrainResult:
    history: List[Dict[str, float]]
    initial_loss: float
    final_loss: float


def train_loop(model, images: Sequence[np.ndarray], targets: Sequence[np.ndarray],
               cfg: Optional[TrainConfig] = None, log_every: int = 0) -> TrainResult:
    """Overfit ``model`` on a small fixed set of same-sized images.

    ``images`` are HWC uint8; ``targets[i]`` is (n, 5) class, cx, cy, w, h
    in pixels.  Deterministic for a fixed config and seed.
    """
    cfg = cfg or TrainConfig()
    rng = np.random.default_rng(cfg.seed)
    n = len(images)
    batch = np.stack([im.transpose(2, 0, 1) for im in images]).astype(np.float32) / 255.0
    groups = param_groups(model, cfg)
    opt = SGD(groups, momentum=cfg.momentum, nesterov=cfg.nesterov)
    steps_per_epoch = max(n // cfg.batch_size, 1)
    history: List[Dict[str, float]] = []
    anchors = model.head.anchors
    strides = model.strides
    grid_sizes = None
    for step in range(cfg.steps):
        lrs, mom = lr_schedule(step, cfg.steps, steps_per_epoch, cfg)
        for g, lr in zip(opt.groups, lrs):
            g["lr"] = lr
        opt.momentum = mom
        if cfg.batch_size >= n:
            sel = np.arange(n)
        else:
            sel = rng.choice(n, size=cfg.batch_size, replace=False)
        x = Tensor(batch[sel])
        preds = model(x)
        if grid_sizes is None or len(sel) != preds[0].shape[0]:
            grid_sizes = [(p.shape[2], p.shape[3]) for p in preds]
        assigned = assign_targets([targets[i] for i in sel], grid_sizes,
                                  anchors, strides, cfg.anchor_t)
        loss, parts = detection_loss(preds, assigned, anchors, strides, cfg)
        if not math.isfinite(parts["total"]):
            raise TrainingDiverged(step, parts)
        opt.zero_grad()
        loss.backward()
        opt.step()
        parts["lr"] = lrs[0]
        history.append(parts)
        if log_every and step % log_every == 0:
            print(f"step {step:4d}  total {parts['total']:.4f}  "
                  f"box {parts['box']:.4f}  obj {parts['obj']:.4f}  "
                  f"cls {parts['cls']:.4f}  lr {lrs[0]:.5f}")
    return TrainResult(history=history, initial_loss=history[0]["total"],
                       final_loss=history[-1]["total"])
