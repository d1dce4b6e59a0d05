"""Command-line front end.

Subcommands: summary, infer, eval, bench, train-toy, plot, gradcheck.
Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

Every command that writes files drops a ``manifest.json`` next to them with
the resolved configuration and library versions (never timestamps), so a
results directory is self-describing.  Output directories resolve in order:
``--out``, the ``YOTOR_OUT_DIR`` environment variable, then a per-command
default under the working directory.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__

OUT_ENV = "YOTOR_OUT_DIR"


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); we map usage -> 1
        raise UsageError(message)


def _resolve_out(arg: Optional[str], default_name: str) -> Path:
    if arg:
        return Path(arg)
    env = os.environ.get(OUT_ENV)
    if env:
        return Path(env) / default_name
    return Path(default_name)


def _write_manifest(out_dir: Path, command: str, config: dict, args: dict) -> None:
    import scipy

    manifest = {
        "command": command,
        "config": config,
        "args": {k: v for k, v in args.items() if k not in ("func",)},
        "versions": {
            "yotor": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": ".".join(str(v) for v in sys.version_info[:3]),
        },
    }
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)


def _load_model(args):
    from .builder import ModelConfig, build, load_model

    if getattr(args, "weights", None):
        return load_model(args.weights)
    if getattr(args, "config", None):
        cfg = ModelConfig.from_yaml(args.config)
        if getattr(args, "seed", None) is not None:
            cfg.seed = args.seed
        from .builder import DetectionModel

        return DetectionModel(cfg)
    return build(args.variant, num_classes=getattr(args, "num_classes", None),
                 seed=getattr(args, "seed", None))


def _model_args(p: Parser, default_variant: str = "toy") -> None:
    p.add_argument("--variant", default=default_variant,
                   help="TP4, TP5, BP4, BB4, or toy")
    p.add_argument("--config", help="model config YAML (overrides --variant)")
    p.add_argument("--weights", help="weight container (overrides both)")
    p.add_argument("--seed", type=int, default=0)


# ----------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------
def cmd_summary(args) -> int:
    from .builder import summarize

    model = _load_model(args)
    info = summarize(model)
    if args.json:
        print(json.dumps(info, indent=2, sort_keys=True))
        return 0
    p = info["params"]
    print(f"model {info['name']}  classes {info['num_classes']}  "
          f"anchors/level {info['anchors_per_level']}")
    print(f"strides {info['strides']}  head channels {info['head_channels']}")
    print(f"pyramid {info['pyramid_channels']}  coarsest level: {info['p6_mode']}"
          f"  adapter convs: {info['adapter_convs']}")
    for k in ("backbone", "adapters", "p6", "neck", "head", "total"):
        print(f"  params.{k:<9} {p[k]:>12,}")
    return 0


def cmd_infer(args) -> int:
    from .cocodata import save_detections
    from .detect import draw_detections, load_image, run_pipeline, save_image

    model = _load_model(args)
    img = load_image(args.image)
    dets = run_pipeline(model, img, imgsz=args.imgsz, conf_thres=args.conf,
                        iou_thres=args.iou)
    out = _resolve_out(args.out, "infer_out")
    out.mkdir(parents=True, exist_ok=True)
    records = [d.as_coco(args.image_id) for d in dets]
    save_detections(out / "detections.json", records)
    if args.draw:
        save_image(out / "annotated.png", draw_detections(img, dets))
    _write_manifest(out, "infer", model.cfg.to_dict(), vars(args))
    print(f"{len(dets)} detections -> {out / 'detections.json'}")
    return 0


def cmd_eval(args) -> int:
    from .cocodata import load_dataset, save_detections
    from .evaluate import evaluate

    out = _resolve_out(args.out, "eval_out")
    out.mkdir(parents=True, exist_ok=True)
    data = load_dataset(args.dataset)
    config_dict: dict
    if args.detections:
        dets = args.detections
        config_dict = {"detections": str(args.detections)}
    else:
        if not args.images_dir:
            raise UsageError("eval needs --detections or --images-dir")
        from .detect import load_image, run_pipeline

        model = _load_model(args)
        config_dict = model.cfg.to_dict()
        dets = []
        root = Path(args.images_dir)
        for im in data["images"]:
            img = load_image(root / im["file_name"])
            found = run_pipeline(model, img, imgsz=args.imgsz,
                                 conf_thres=args.conf, iou_thres=args.iou,
                                 multi_label=True)
            dets.extend(d.as_coco(im["id"], d.cls + 1) for d in found)
        save_detections(out / "detections.json", dets)
    report = evaluate(data, dets)
    (out / "metrics.csv").write_text(report.csv())
    _write_manifest(out, "eval", config_dict, vars(args))
    print(report.table())
    print(f"metrics -> {out / 'metrics.csv'}")
    return 0


def cmd_bench(args) -> int:
    from .bench import bench, results_csv, scatter_svg

    model = _load_model(args)
    sizes = [int(s) for s in args.sizes.split(",")]
    results = [bench(model, imgsz=s, runs=args.runs, warmup=args.warmup)
               for s in sizes]
    out = _resolve_out(args.out, "bench_out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "bench.csv").write_text(results_csv(results))
    svg = scatter_svg([r.flops for r in results], [r.fps for r in results],
                      [f"{r.imgsz}" for r in results],
                      "forward FLOPs", "frames per second",
                      title=f"{results[0].name}: throughput vs compute")
    (out / "bench.svg").write_text(svg)
    _write_manifest(out, "bench", model.cfg.to_dict(), vars(args))
    for r in results:
        print(f"size {r.imgsz:>5}  mean {r.mean_ms:8.2f} ms  {r.fps:7.2f} fps  "
              f"{r.flops / 1e9:7.3f} GFLOPs")
    print(f"results -> {out / 'bench.csv'}")
    return 0


def cmd_train_toy(args) -> int:
    from .bench import line_svg
    from .builder import build, save_model
    from .synth import make_dataset
    from .train import TrainConfig, train_loop

    data = make_dataset(n_images=args.images, size=args.size,
                        num_classes=args.classes, seed=args.seed)
    model = build("toy", num_classes=args.classes, seed=args.seed)
    cfg = TrainConfig(steps=args.steps, batch_size=min(args.batch, args.images),
                      lr0=args.lr, seed=args.seed)
    result = train_loop(model, data.images, data.targets, cfg,
                        log_every=args.log_every)
    out = _resolve_out(args.out, "train_out")
    out.mkdir(parents=True, exist_ok=True)
    save_model(model, out / "weights.ytnw")
    keys = ["total", "box", "obj", "cls", "lr"]
    lines = ["step," + ",".join(keys)]
    for i, h in enumerate(result.history):
        lines.append(f"{i}," + ",".join(f"{h[k]:.6f}" for k in keys))
    (out / "history.csv").write_text("\n".join(lines) + "\n")
    (out / "loss.svg").write_text(
        line_svg([h["total"] for h in result.history], "total loss",
                 title="toy training loss"))
    if args.save_data:
        data.save(out / "data")
    _write_manifest(out, "train-toy",
                    {"model": model.cfg.to_dict(), "train": vars(cfg)}, vars(args))
    print(f"loss {result.initial_loss:.4f} -> {result.final_loss:.4f} "
          f"over {args.steps} steps; weights -> {out / 'weights.ytnw'}")
    return 0


def cmd_plot(args) -> int:
    from .bench import line_svg, scatter_svg

    rows = []
    with open(args.csv) as f:
        header = f.readline().strip().split(",")
        for line in f:
            if line.strip():
                rows.append(dict(zip(header, line.strip().split(","))))
    if not rows:
        raise ValueError(f"{args.csv}: no data rows")
    out = _resolve_out(args.out, "plot_out")
    out.mkdir(parents=True, exist_ok=True)
    if args.x:
        if args.x not in header or args.y not in header:
            raise UsageError(f"columns {args.x!r}/{args.y!r} not in {header}")
        labels = [r.get(args.label, "") for r in rows] if args.label else [""] * len(rows)
        svg = scatter_svg([float(r[args.x]) for r in rows],
                          [float(r[args.y]) for r in rows],
                          labels, args.x, args.y, title=args.title)
    else:
        if args.y not in header:
            raise UsageError(f"column {args.y!r} not in {header}")
        svg = line_svg([float(r[args.y]) for r in rows], args.y, title=args.title)
    (out / "plot.svg").write_text(svg)
    _write_manifest(out, "plot", {"csv": str(args.csv)}, vars(args))
    print(f"plot -> {out / 'plot.svg'}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    failures = run_suite(seeds=args.seeds, verbose=True)
    if failures:
        print(f"{failures} gradient check(s) FAILED")
        return 2
    print("all gradient checks passed")
    return 0


# ----------------------------------------------------------------------
def build_parser() -> Parser:
    p = Parser(prog="yotor", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"yotor {__version__}")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("summary", parents=[], help="print model structure and sizes")
    _model_args(s, default_variant="TP4")
    s.add_argument("--num-classes", type=int, default=80)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_summary)

    s = sub.add_parser("infer", help="detect objects on one image")
    _model_args(s)
    s.add_argument("--image", required=True)
    s.add_argument("--image-id", type=int, default=1)
    s.add_argument("--imgsz", type=int, default=256)
    s.add_argument("--conf", type=float, default=0.25)
    s.add_argument("--iou", type=float, default=0.65)
    s.add_argument("--draw", action="store_true", help="write annotated.png")
    s.add_argument("--out")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="score detections against a dataset")
    _model_args(s)
    s.add_argument("--dataset", required=True, help="annotation JSON")
    s.add_argument("--detections", help="detection JSON to score directly")
    s.add_argument("--images-dir", help="run the model over the dataset images")
    s.add_argument("--imgsz", type=int, default=256)
    s.add_argument("--conf", type=float, default=0.001)
    s.add_argument("--iou", type=float, default=0.65)
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", help="time forward passes over input sizes")
    _model_args(s)
    s.add_argument("--sizes", default="64,128,256", help="comma-separated square sizes")
    s.add_argument("--runs", type=int, default=3)
    s.add_argument("--warmup", type=int, default=10)
    s.add_argument("--out")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("train-toy", help="overfit the toy model on synthetic scenes")
    s.add_argument("--steps", type=int, default=500)
    s.add_argument("--images", type=int, default=8)
    s.add_argument("--size", type=int, default=192)
    s.add_argument("--classes", type=int, default=2)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--lr", type=float, default=0.06)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--log-every", type=int, default=0)
    s.add_argument("--save-data", action="store_true")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("plot", help="plot a CSV column (line) or two (scatter)")
    s.add_argument("--csv", required=True)
    s.add_argument("--x", help="x column for a scatter plot")
    s.add_argument("--y", required=True, help="y column")
    s.add_argument("--label", help="label column for scatter points")
    s.add_argument("--title", default="")
    s.add_argument("--out")
    s.set_defaults(func=cmd_plot)

    s = sub.add_parser("gradcheck", help="finite-difference checks of the autodiff core")
    s.add_argument("--seeds", type=int, default=3)
    s.set_defaults(func=cmd_gradcheck)

    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    if not getattr(args, "command", None):
        parser.print_help()
        return 1
    try:
        return int(args.func(args) or 0)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure -> 2, with a one-line reason
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
