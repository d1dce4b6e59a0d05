"""Target assignment, composite loss, optimizer, schedule, training loop."""
import math

import numpy as np
import pytest

from yotor.builder import build
from yotor.nn import Tensor
from yotor.nn.tensor import DimensionError
from yotor.train import (SGD, TrainConfig, TrainingDiverged, assign_targets,
                         ciou_cxcywh, detection_loss, lr_schedule,
                         param_groups, train_loop)


A1 = np.array([[[16.0, 16.0]]], dtype=np.float32)  # one level, one anchor


def _single_target(cls, cx, cy, w, h):
    return [np.array([[cls, cx, cy, w, h]], dtype=np.float64)]


# ----------------------------------------------------------------------
# assignment
# ----------------------------------------------------------------------
def test_assignment_corner_keeps_one_cell():
    # center in cell (0,0) below the half marks: both neighbours fall off
    asg = assign_targets(_single_target(1, 3.2, 3.2, 16, 16), [(4, 4)], A1, (8,))
    a = asg[0]
    assert len(a["b"]) == 1
    assert (a["b"][0], a["a"][0], a["gj"][0], a["gi"][0]) == (0, 0, 0, 0)
    np.testing.assert_allclose(a["txy"][0], [0.4, 0.4])
    np.testing.assert_allclose(a["twh"][0], [2.0, 2.0])
    assert a["cls"][0] == 1


def test_assignment_three_cells_interior():
    # fx=0.3 pulls the left neighbour, fy=0.7 the lower one
    asg = assign_targets(_single_target(0, 18.4, 21.6, 16, 16), [(4, 4)], A1, (8,))
    a = asg[0]
    cells = set(zip(a["gi"].tolist(), a["gj"].tolist()))
    assert cells == {(2, 2), (1, 2), (2, 3)}
    assert np.all(a["txy"] >= -0.5) and np.all(a["txy"] < 1.5)


def test_assignment_half_tie_goes_right_down():
    asg = assign_targets(_single_target(0, 20.0, 20.0, 16, 16), [(4, 4)], A1, (8,))
    a = asg[0]
    cells = set(zip(a["gi"].tolist(), a["gj"].tolist()))
    assert cells == {(2, 2), (3, 2), (2, 3)}


def test_assignment_anchor_ratio_gate():
    # anchor 16 at stride 8; a 64px object is exactly ratio 4: excluded
    asg = assign_targets(_single_target(0, 20, 20, 64, 16), [(4, 4)], A1, (8,),
                         anchor_t=4.0)
    assert len(asg[0]["b"]) == 0
    # just inside the gate: kept
    asg = assign_targets(_single_target(0, 20, 20, 63, 16), [(4, 4)], A1, (8,),
                         anchor_t=4.0)
    assert len(asg[0]["b"]) == 3


def test_assignment_batches_and_levels(rng):
    anchors = np.array([[[16, 16]], [[32, 32]]], dtype=np.float32)
    targets = [np.array([[0, 24, 24, 16, 16]], dtype=np.float64),
               np.zeros((0, 5)),
               np.array([[1, 40, 40, 30, 30]], dtype=np.float64)]
    asg = assign_targets(targets, [(8, 8), (4, 4)], anchors, (8, 16))
    assert {int(b) for b in asg[0]["b"]} <= {0, 2}
    assert asg[0]["txy"].shape[1] == 2
    # empty-image targets contribute nothing anywhere
    for a in asg:
        assert 1 not in a["b"].tolist()


def test_assignment_fuzz_invariants(rng):
    anchors = np.array([[[12, 12], [20, 14]], [[28, 28], [40, 30]]],
                       dtype=np.float32)
    grids = [(16, 16), (8, 8)]
    targets = []
    for _ in range(4):
        n = rng.integers(1, 5)
        t = np.zeros((n, 5))
        t[:, 0] = rng.integers(0, 2, n)
        t[:, 1:3] = rng.uniform(8, 120, (n, 2))
        t[:, 3:5] = rng.uniform(6, 60, (n, 2))
        targets.append(t)
    for li, a in enumerate(assign_targets(targets, grids, anchors, (8, 16))):
        h, w = grids[li]
        assert np.all((a["gj"] >= 0) & (a["gj"] < h))
        assert np.all((a["gi"] >= 0) & (a["gi"] < w))
        assert np.all(a["txy"] >= -0.5) and np.all(a["txy"] < 1.5)
        assert np.all(a["twh"] > 0)
        assert np.all((a["a"] >= 0) & (a["a"] < 2))


# ----------------------------------------------------------------------
# complete IoU
# ----------------------------------------------------------------------
def test_ciou_identical_boxes_near_one():
    p = Tensor(np.array([[4.0, 4.0, 6.0, 2.0]]))
    t = np.array([[4.0, 4.0, 6.0, 2.0]])
    assert float(ciou_cxcywh(p, t).item()) > 1.0 - 1e-5


def test_ciou_hand_value():
    # iou 1/3, center gap 1, enclosing diagonal^2 13, matched aspect
    p = Tensor(np.array([[0.0, 0.0, 2.0, 2.0]]))
    t = np.array([[1.0, 0.0, 2.0, 2.0]])
    want = 1.0 / 3.0 - 1.0 / 13.0
    assert abs(float(ciou_cxcywh(p, t).item()) - want) < 1e-6


def test_ciou_penalizes_aspect_mismatch():
    t = np.array([[0.0, 0.0, 4.0, 4.0]])
    same = ciou_cxcywh(Tensor(np.array([[0.0, 0.0, 2.0, 2.0]])), t)
    skew = ciou_cxcywh(Tensor(np.array([[0.0, 0.0, 4.0, 1.0]])), t)
    assert float(skew.item()) < float(same.item())


def test_ciou_gradient_matches_fd():
    from conftest import fd_grad
    t = np.array([[1.0, 0.5, 2.0, 2.5], [0.0, 0.0, 3.0, 1.0]])
    p0 = np.array([[0.8, 0.2, 2.5, 2.0], [0.4, -0.3, 2.0, 1.5]])
    x = Tensor(p0.copy(), requires_grad=True)
    ciou_cxcywh(x, t).sum().backward()
    num = fd_grad(lambda: float(ciou_cxcywh(Tensor(p0), t).sum().item()),
                  [p0])[0]
    np.testing.assert_allclose(x.grad, num, atol=1e-6)


def test_ciou_count_mismatch_raises():
    with pytest.raises(DimensionError):
        ciou_cxcywh(Tensor(np.zeros((2, 4))), np.zeros((3, 4)))


# ----------------------------------------------------------------------
# loss
# ----------------------------------------------------------------------
def test_loss_all_zero_logits_no_targets():
    # every objectness cell pays -ln(1/2); box and class terms are empty
    preds = [Tensor(np.zeros((1, 1, 2, 2, 7), np.float32)),
             Tensor(np.zeros((1, 1, 1, 1, 7), np.float32))]
    anchors = np.array([[[16, 16]], [[32, 32]]], dtype=np.float32)
    asg = assign_targets([np.zeros((0, 5))], [(2, 2), (1, 1)], anchors, (8, 16))
    total, parts = detection_loss(preds, asg, anchors, (8, 16))
    assert abs(parts["obj"] - 2.0 * math.log(2.0)) < 1e-6
    assert parts["box"] == 0.0 and parts["cls"] == 0.0
    assert abs(parts["total"] - 2.0 * math.log(2.0)) < 1e-6


def test_loss_golden_match_near_zero():
    # one target sitting exactly on its anchor and cell: every term small
    raw = np.full((1, 1, 4, 4, 7), 0.0, dtype=np.float32)
    raw[..., 4] = -10.0
    xy_logit = math.log(0.45 / 0.55)   # sigmoid -> 0.45 -> offset 0.4
    raw[0, 0, 0, 0] = [xy_logit, xy_logit, 0.0, 0.0, 10.0, -10.0, 10.0]
    preds = [Tensor(raw)]
    asg = assign_targets(_single_target(1, 3.2, 3.2, 16, 16), [(4, 4)], A1, (8,))
    capture = {}
    total, parts = detection_loss(preds, asg, A1, (8,), capture=capture)
    assert parts["box"] < 1e-3
    assert parts["obj"] < 1e-3
    assert parts["cls"] < 1e-3
    assert float(total.item()) < 1e-3
    # the matched cell's objectness target is the clipped overlap, ~1
    tgt = capture["obj_targets"][0]
    assert tgt.shape == (1, 1, 4, 4)
    assert tgt[0, 0, 0, 0] > 0.999
    assert tgt.sum() == pytest.approx(tgt[0, 0, 0, 0])


def test_loss_fixed_obj_targets_override(rng):
    raw = rng.normal(0, 1, (1, 1, 2, 2, 7)).astype(np.float32)
    preds = [Tensor(raw)]
    asg = assign_targets([np.zeros((0, 5))], [(2, 2)], A1, (8,))
    fixed = [np.full((1, 1, 2, 2), 0.3, dtype=np.float32)]
    total, parts = detection_loss(preds, asg, A1, (8,),
                                  fixed_obj_targets=fixed)
    z = raw[..., 4].astype(np.float64)
    manual = (np.maximum(z, 0) - z * 0.3 + np.log1p(np.exp(-np.abs(z)))).mean()
    assert abs(parts["obj"] - manual) < 1e-6


def test_loss_positive_weight_scales_positive_cells(rng):
    raw = rng.normal(0, 1, (1, 1, 1, 1, 7)).astype(np.float32)
    asg = assign_targets([np.zeros((0, 5))], [(1, 1)], A1, (8,))
    fixed = [np.ones((1, 1, 1, 1), dtype=np.float32)]
    _, base = detection_loss([Tensor(raw)], asg, A1, (8,),
                             fixed_obj_targets=fixed)
    cfg = TrainConfig(obj_pw=2.0)
    _, doubled = detection_loss([Tensor(raw)], asg, A1, (8,), cfg=cfg,
                                fixed_obj_targets=fixed)
    z = float(raw[0, 0, 0, 0, 4])
    # pos_weight multiplies only the target-side term of the stable form
    want = base["obj"] + (math.log(1 + math.exp(-abs(z))) + max(-z, 0))
    assert abs(doubled["obj"] - want) < 1e-5


def test_loss_focal_gamma_downweights_easy(rng):
    raw = np.zeros((1, 1, 1, 1, 7), dtype=np.float32)
    raw[..., 4] = 3.0
    asg = assign_targets([np.zeros((0, 5))], [(1, 1)], A1, (8,))
    fixed = [np.ones((1, 1, 1, 1), dtype=np.float32)]
    _, plain = detection_loss([Tensor(raw)], asg, A1, (8,),
                              fixed_obj_targets=fixed)
    cfg = TrainConfig(focal_gamma=2.0)
    _, focal = detection_loss([Tensor(raw)], asg, A1, (8,), cfg=cfg,
                              fixed_obj_targets=fixed)
    p = 1.0 / (1.0 + math.exp(-3.0))
    assert abs(focal["obj"] - plain["obj"] * (1 - p) ** 2) < 1e-6


def test_loss_gains_weight_parts(rng):
    raw = rng.normal(0, 1, (1, 1, 4, 4, 7)).astype(np.float32)
    asg = assign_targets(_single_target(1, 3.2, 3.2, 16, 16), [(4, 4)], A1, (8,))
    cfg = TrainConfig(box_gain=0.1, obj_gain=2.0, cls_gain=0.7)
    total, parts = detection_loss([Tensor(raw)], asg, A1, (8,), cfg=cfg)
    want = 0.1 * parts["box"] + 2.0 * parts["obj"] + 0.7 * parts["cls"]
    assert abs(parts["total"] - want) < 1e-6
    assert abs(float(total.item()) - want) < 1e-6


def test_loss_gradient_matches_fd():
    from conftest import fd_grad
    rng = np.random.default_rng(11)
    raw = rng.normal(0, 0.5, (1, 1, 4, 4, 7)).astype(np.float64)
    asg = assign_targets(_single_target(0, 10.0, 13.0, 20, 12), [(4, 4)],
                         A1, (8,))
    fixed = [rng.uniform(0, 1, (1, 1, 4, 4))]

    def value() -> float:
        total, _ = detection_loss([Tensor(raw)], asg, A1, (8,),
                                  fixed_obj_targets=fixed)
        return float(total.item())

    t = Tensor(raw.copy(), requires_grad=True)
    total, _ = detection_loss([t], asg, A1, (8,), fixed_obj_targets=fixed)
    total.backward()
    num = fd_grad(value, [raw])[0]
    np.testing.assert_allclose(t.grad, num, atol=1e-5)


# ----------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------
def _param(val):
    return Tensor(np.array(val, dtype=np.float64), requires_grad=True)


def test_sgd_momentum_zero_is_plain_gd():
    p = _param([1.0, 2.0])
    opt = SGD([{"params": [p], "lr": 0.1}], momentum=0.0)
    p.grad = np.array([1.0, -2.0])
    opt.step()
    np.testing.assert_allclose(p.data, [0.9, 2.2])


def test_sgd_heavy_ball_accumulation():
    p = _param([0.0])
    opt = SGD([{"params": [p], "lr": 1.0}], momentum=0.9, nesterov=False)
    for _ in range(2):
        p.grad = np.array([1.0])
        opt.step()
    # v1 = 1 -> p -1; v2 = 1.9 -> p -2.9
    np.testing.assert_allclose(p.data, [-2.9])


def test_sgd_nesterov_lookahead():
    p = _param([0.0])
    opt = SGD([{"params": [p], "lr": 1.0}], momentum=0.9, nesterov=True)
    p.grad = np.array([1.0])
    opt.step()
    np.testing.assert_allclose(p.data, [-1.9])  # g + mu*v = 1 + 0.9
    p.grad = np.array([1.0])
    opt.step()
    np.testing.assert_allclose(p.data, [-1.9 - 2.71])


def test_sgd_weight_decay_enters_gradient():
    p = _param([2.0])
    opt = SGD([{"params": [p], "lr": 0.1, "weight_decay": 0.5}], momentum=0.0)
    p.grad = np.array([0.0])
    opt.step()
    np.testing.assert_allclose(p.data, [2.0 - 0.1 * 0.5 * 2.0])


def test_sgd_skips_missing_grads_and_zero_grad():
    p, q = _param([1.0]), _param([1.0])
    opt = SGD([{"params": [p, q], "lr": 0.1}], momentum=0.0)
    p.grad = np.array([1.0])
    opt.step()
    np.testing.assert_allclose(q.data, [1.0])
    opt.zero_grad()
    assert p.grad is None and q.grad is None


# ----------------------------------------------------------------------
# parameter groups and schedule
# ----------------------------------------------------------------------
def test_param_groups_partition():
    model = build("toy", num_classes=2, seed=0)
    cfg = TrainConfig()
    groups = param_groups(model, cfg)
    assert len(groups) == 3
    named = dict(model.named_parameters())
    n_total = len(named)
    assert sum(len(g["params"]) for g in groups) == n_total
    assert groups[0]["weight_decay"] == cfg.weight_decay
    assert groups[1]["weight_decay"] == 0.0 and groups[2]["weight_decay"] == 0.0
    decay_ids = {id(p) for p in groups[0]["params"]}
    for name, p in named.items():
        if name.endswith(".bias"):
            assert id(p) not in decay_ids, name
        if "implicit" in name or "rel_bias_table" in name or p.data.ndim <= 1:
            assert id(p) not in decay_ids, name


def test_param_groups_freeze_backbone():
    model = build("toy", num_classes=2, seed=0)
    groups = param_groups(model, TrainConfig(freeze_backbone=True))
    frozen = {id(p) for name, p in model.named_parameters()
              if name.startswith("backbone.")}
    for g in groups:
        assert all(id(p) not in frozen for p in g["params"])


def test_schedule_endpoints():
    cfg = TrainConfig(lr0=0.01, lrf=0.2, warmup_epochs=3.0,
                      warmup_momentum=0.8, momentum=0.937,
                      warmup_bias_lr=0.1)
    lrs, mom = lr_schedule(0, 100, 1, cfg)
    assert lrs[0] == 0.0 and lrs[1] == 0.0 and lrs[2] == 0.1
    assert mom == 0.8
    lrs, mom = lr_schedule(100, 100, 1, cfg)
    assert abs(lrs[0] - 0.01 * 0.2) < 1e-12
    assert mom == 0.937
    # all three groups share the base rate after warmup
    lrs, _ = lr_schedule(50, 100, 1, cfg)
    assert lrs[0] == lrs[1] == lrs[2]


def test_schedule_monotone_after_warmup():
    cfg = TrainConfig(lr0=0.01, lrf=0.2, warmup_epochs=2.0)
    vals = [lr_schedule(s, 50, 1, cfg)[0][0] for s in range(2, 51)]
    assert all(a >= b - 1e-15 for a, b in zip(vals, vals[1:]))


# ----------------------------------------------------------------------
# loop
# ----------------------------------------------------------------------
def _tiny_run(seed=0, steps=4, batch_size=2, log_every=0, **kw):
    rng = np.random.default_rng(9)
    model = build("toy", num_classes=2, seed=0)
    images = [rng.integers(0, 255, (64, 64, 3), dtype=np.uint8)
              for _ in range(2)]
    targets = [np.array([[0, 32.0, 32.0, 24.0, 24.0]]),
               np.array([[1, 20.0, 40.0, 30.0, 20.0]])]
    kw.setdefault("lr0", 0.01)
    cfg = TrainConfig(steps=steps, batch_size=batch_size, seed=seed, **kw)
    return model, train_loop(model, images, targets, cfg, log_every=log_every)


def test_train_loop_history_and_determinism():
    _, first = _tiny_run()
    _, second = _tiny_run()
    assert len(first.history) == 4
    assert first.initial_loss == first.history[0]["total"]
    assert first.final_loss == first.history[-1]["total"]
    for a, b in zip(first.history, second.history):
        assert a == b
    for row in first.history:
        assert set(row) == {"box", "obj", "cls", "total", "lr"}
        assert math.isfinite(row["total"])


def test_train_loop_reduces_loss_on_tiny_problem():
    _, res = _tiny_run(steps=60, lr0=0.02)
    assert res.final_loss < res.initial_loss


def test_train_loop_subsampling_seed_changes_course():
    _, a = _tiny_run(seed=0, steps=6, batch_size=1)
    _, b = _tiny_run(seed=1, steps=6, batch_size=1)
    assert any(x["total"] != y["total"] for x, y in zip(a.history, b.history))


def test_train_loop_freeze_backbone_keeps_weights():
    model = build("toy", num_classes=2, seed=0)
    before = {k: v.copy() for k, v in model.state_dict().items()}
    rng = np.random.default_rng(9)
    images = [rng.integers(0, 255, (64, 64, 3), dtype=np.uint8)]
    targets = [np.array([[0, 32.0, 32.0, 24.0, 24.0]])]
    train_loop(model, images, targets,
               TrainConfig(steps=3, batch_size=1, freeze_backbone=True))
    after = model.state_dict()
    changed = [k for k in before if np.any(before[k] != after[k])]
    assert changed, "training must move something"
    assert all(not k.startswith("backbone.") for k in changed)


def test_train_loop_raises_on_nonfinite():
    model = build("toy", num_classes=2, seed=0)
    bad = model.head.proj[0].weight
    bad.data = np.full_like(bad.data, np.nan)
    rng = np.random.default_rng(9)
    images = [rng.integers(0, 255, (64, 64, 3), dtype=np.uint8)]
    targets = [np.array([[0, 32.0, 32.0, 24.0, 24.0]])]
    with pytest.raises(TrainingDiverged) as info:
        train_loop(model, images, targets, TrainConfig(steps=2, batch_size=1))
    assert info.value.step == 0


def test_train_loop_logging(capsys):
    _tiny_run(steps=2, log_every=1)
    out = capsys.readouterr().out
    assert out.count("step") == 2 and "lr" in out
