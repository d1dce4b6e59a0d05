"""End-to-end command-line tests, run in-process through ``main``.

Covers exit-code mapping (0 ok / 1 usage / 2 runtime), output-directory
resolution, manifests, and rerun determinism.
"""
import json
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from yotor.cli import main
from yotor.detect import save_image
from yotor.nn.serialize import load_weights


@pytest.fixture()
def scene(tmp_path):
    """One synthetic image on disk plus its ground-truth dataset JSON."""
    from yotor.synth import make_dataset

    ds = make_dataset(n_images=1, size=64, num_classes=2, min_size=24,
                      max_size=40, seed=3)
    img_path = tmp_path / "scene.png"
    save_image(img_path, ds.images[0])
    data_path = tmp_path / "data.json"
    data_path.write_text(json.dumps(ds.coco_dataset()))
    return img_path, data_path, ds


def _manifest(out_dir, command):
    m = json.loads((out_dir / "manifest.json").read_text())
    assert m["command"] == command
    assert "func" not in m["args"]
    for key in ("yotor", "numpy", "scipy", "python"):
        assert key in m["versions"]
    return m


# ----------------------------------------------------------------------
# exit codes
# ----------------------------------------------------------------------
def test_no_command_prints_help_and_fails(capsys):
    assert main([]) == 1
    assert "usage" in capsys.readouterr().out.lower()


def test_unknown_command_is_usage_error(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_unknown_flag_is_usage_error(capsys):
    assert main(["summary", "--no-such-flag"]) == 1


def test_runtime_failure_maps_to_2(capsys):
    assert main(["summary", "--variant", "ZZ9"]) == 2
    assert "error:" in capsys.readouterr().err


def test_version_flag():
    with pytest.raises(SystemExit) as e:
        main(["--version"])
    assert e.value.code == 0


# ----------------------------------------------------------------------
# summary
# ----------------------------------------------------------------------
def test_summary_text(capsys):
    assert main(["summary", "--variant", "toy", "--num-classes", "2"]) == 0
    out = capsys.readouterr().out
    assert "params.total" in out and "strides" in out


def test_summary_json_structure(capsys):
    assert main(["summary", "--variant", "toy", "--num-classes", "2",
                 "--json"]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["name"] == "toy"
    assert info["num_classes"] == 2
    assert info["strides"] == [8, 16, 32, 64]
    p = info["params"]
    assert p["total"] == sum(p[k] for k in
                             ("backbone", "adapters", "p6", "neck", "head"))


# ----------------------------------------------------------------------
# infer
# ----------------------------------------------------------------------
def test_infer_outputs(tmp_path, scene, capsys):
    img_path, _, _ = scene
    out = tmp_path / "res"
    code = main(["infer", "--image", str(img_path), "--imgsz", "64",
                 "--conf", "0.001", "--draw", "--out", str(out)])
    assert code == 0
    dets = json.loads((out / "detections.json").read_text())
    assert isinstance(dets, list)
    for d in dets:
        assert set(d) == {"image_id", "category_id", "bbox", "score"}
    assert (out / "annotated.png").exists()
    m = _manifest(out, "infer")
    assert m["config"]["name"] == "toy"


def test_infer_missing_image_fails(tmp_path):
    assert main(["infer", "--image", str(tmp_path / "nope.png"),
                 "--out", str(tmp_path / "o")]) == 2


def test_infer_rerun_is_deterministic(tmp_path, scene):
    img_path, _, _ = scene
    args = ["infer", "--image", str(img_path), "--imgsz", "64",
            "--conf", "0.001"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    da = (tmp_path / "a" / "detections.json").read_bytes()
    db = (tmp_path / "b" / "detections.json").read_bytes()
    assert da == db


def test_infer_from_saved_weights(tmp_path, scene):
    from yotor.builder import build, save_model

    img_path, _, _ = scene
    w = tmp_path / "m.ytnw"
    save_model(build("toy", num_classes=2, seed=0), w)
    out = tmp_path / "res"
    assert main(["infer", "--image", str(img_path), "--weights", str(w),
                 "--imgsz", "64", "--out", str(out)]) == 0
    assert (out / "detections.json").exists()


# ----------------------------------------------------------------------
# eval
# ----------------------------------------------------------------------
def test_eval_scores_detection_file(tmp_path, scene, capsys):
    from yotor.cocodata import save_detections

    _, data_path, ds = scene
    records = []
    for i, t in enumerate(ds.targets):
        for cls, cx, cy, w, h in t:
            records.append({"image_id": i + 1, "category_id": int(cls) + 1,
                            "bbox": [cx - w / 2, cy - h / 2, w, h],
                            "score": 0.9})
    det_path = tmp_path / "dets.json"
    save_detections(det_path, records)
    out = tmp_path / "res"
    assert main(["eval", "--dataset", str(data_path),
                 "--detections", str(det_path), "--out", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "Average Precision" in stdout
    csv_text = (out / "metrics.csv").read_text()
    assert csv_text.splitlines()[0].startswith("metric")
    _manifest(out, "eval")


def test_eval_without_sources_is_usage_error(tmp_path, scene, capsys):
    _, data_path, _ = scene
    assert main(["eval", "--dataset", str(data_path),
                 "--out", str(tmp_path / "o")]) == 1
    assert "usage error" in capsys.readouterr().err


# ----------------------------------------------------------------------
# bench
# ----------------------------------------------------------------------
def test_bench_outputs(tmp_path, capsys):
    out = tmp_path / "b"
    assert main(["bench", "--variant", "toy", "--sizes", "64,128",
                 "--runs", "2", "--warmup", "0", "--out", str(out)]) == 0
    lines = (out / "bench.csv").read_text().strip().splitlines()
    assert len(lines) == 3  # header + one row per size
    ET.fromstring((out / "bench.svg").read_text())
    _manifest(out, "bench")
    assert "GFLOPs" in capsys.readouterr().out


# ----------------------------------------------------------------------
# train-toy
# ----------------------------------------------------------------------
def test_train_toy_tiny_run(tmp_path, capsys):
    out = tmp_path / "t"
    code = main(["train-toy", "--steps", "3", "--images", "2", "--size", "64",
                 "--batch", "2", "--lr", "0.01", "--seed", "1",
                 "--out", str(out), "--save-data"])
    assert code == 0
    state, meta = load_weights(out / "weights.ytnw")
    assert state and meta["config"]["num_classes"] == 2
    hist = (out / "history.csv").read_text().strip().splitlines()
    assert hist[0] == "step,total,box,obj,cls,lr"
    assert len(hist) == 4  # header + 3 steps
    ET.fromstring((out / "loss.svg").read_text())
    assert (out / "data" / "annotations.json").exists()
    m = _manifest(out, "train-toy")
    assert m["config"]["train"]["steps"] == 3
    assert "loss" in capsys.readouterr().out


def test_train_toy_rerun_same_history(tmp_path):
    args = ["train-toy", "--steps", "2", "--images", "2", "--size", "64",
            "--batch", "2", "--seed", "0"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    ha = (tmp_path / "a" / "history.csv").read_bytes()
    hb = (tmp_path / "b" / "history.csv").read_bytes()
    assert ha == hb


# ----------------------------------------------------------------------
# plot
# ----------------------------------------------------------------------
@pytest.fixture()
def csv_file(tmp_path):
    p = tmp_path / "vals.csv"
    p.write_text("step,loss,size\n0,3.0,64\n1,2.5,128\n2,1.0,256\n")
    return p


def test_plot_line(tmp_path, csv_file):
    out = tmp_path / "p"
    assert main(["plot", "--csv", str(csv_file), "--y", "loss",
                 "--out", str(out)]) == 0
    ET.fromstring((out / "plot.svg").read_text())
    _manifest(out, "plot")


def test_plot_scatter_with_labels(tmp_path, csv_file):
    out = tmp_path / "p"
    assert main(["plot", "--csv", str(csv_file), "--x", "size", "--y", "loss",
                 "--label", "step", "--out", str(out)]) == 0
    svg = (out / "plot.svg").read_text()
    ns = "{http://www.w3.org/2000/svg}"
    assert len(ET.fromstring(svg).findall(f".//{ns}circle")) == 3


def test_plot_bad_column_is_usage_error(tmp_path, csv_file, capsys):
    assert main(["plot", "--csv", str(csv_file), "--y", "nope",
                 "--out", str(tmp_path / "p")]) == 1


def test_plot_empty_csv_is_runtime_error(tmp_path, capsys):
    p = tmp_path / "empty.csv"
    p.write_text("a,b\n")
    assert main(["plot", "--csv", str(p), "--y", "b",
                 "--out", str(tmp_path / "o")]) == 2


# ----------------------------------------------------------------------
# gradcheck
# ----------------------------------------------------------------------
def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--seeds", "1"]) == 0
    assert "all gradient checks passed" in capsys.readouterr().out


# ----------------------------------------------------------------------
# output-directory resolution
# ----------------------------------------------------------------------
def test_out_dir_from_environment(tmp_path, monkeypatch, csv_file):
    monkeypatch.setenv("YOTOR_OUT_DIR", str(tmp_path / "envroot"))
    assert main(["plot", "--csv", str(csv_file), "--y", "loss"]) == 0
    assert (tmp_path / "envroot" / "plot_out" / "plot.svg").exists()


def test_out_dir_defaults_to_cwd(tmp_path, monkeypatch, csv_file):
    monkeypatch.delenv("YOTOR_OUT_DIR", raising=False)
    monkeypatch.chdir(tmp_path)
    assert main(["plot", "--csv", str(csv_file), "--y", "loss"]) == 0
    assert (tmp_path / "plot_out" / "plot.svg").exists()


def test_explicit_out_beats_environment(tmp_path, monkeypatch, csv_file):
    monkeypatch.setenv("YOTOR_OUT_DIR", str(tmp_path / "envroot"))
    out = tmp_path / "chosen"
    assert main(["plot", "--csv", str(csv_file), "--y", "loss",
                 "--out", str(out)]) == 0
    assert (out / "plot.svg").exists()
    assert not (tmp_path / "envroot").exists()
