import json

import numpy as np
import pytest

from cephscale.cli import build_parser, main
from cephscale.imagecore import write_image
from cephscale.pipeline import read_records
from cephscale.synth import (SceneParams, annotation_row, generate_corpus, generate_image,
                             read_annotations, write_annotations)
from cephscale.voting import load_model, save_model


def test_help_and_bad_usage(capsys):
    with pytest.raises(SystemExit) as e:
        main(["--help"])
    assert e.value.code == 0
    with pytest.raises(SystemExit) as e:
        main(["synth", "--n", "3", "--out", "x", "--bogus"])
    assert e.value.code != 0
    with pytest.raises(SystemExit) as e:
        main(["synth", "--n", "0", "--out", "x"])
    assert e.value.code != 0
    with pytest.raises(SystemExit) as e:
        main(["train", "--corpus", "c", "--out", "m", "--four-scale", "--three-scale"])
    assert e.value.code != 0


def test_synth_command(tmp_path, capsys):
    assert main(["synth", "--n", "4", "--seed", "2", "--out", str(tmp_path / "a")]) == 0
    assert "wrote 4 images" in capsys.readouterr().out
    assert main(["synth", "--n", "4", "--seed", "2", "--out", str(tmp_path / "b")]) == 0
    assert len(list((tmp_path / "a").glob("*.png"))) == 4
    assert len(read_annotations(tmp_path / "a" / "annotations.csv")) == 4
    for f in (tmp_path / "a").iterdir():
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["synth", "--n", "1", "--out", str(blocker / "sub")]) == 1


def test_train_command(tmp_path, capsys):
    corpus = generate_corpus(4, 8, tmp_path / "c", train_fraction=1.0)
    out = tmp_path / "m.txt"
    args = ["train", "--corpus", str(corpus), "--out", str(out), "--trees", "1", "--patches", "5"]
    assert main(args) == 0
    assert "training error" in capsys.readouterr().out
    assert load_model(out).scales == (0.125, 0.25)
    assert main(args + ["--four-scale"]) == 0
    assert load_model(out).scales == (0.125, 0.25, 0.5, 1.0)
    (corpus / "annotations.csv").unlink()
    assert main(args) == 1
    assert "annotations.csv" in capsys.readouterr().err
    (corpus / "annotations.csv").write_text("id,upper_x\nimg0000,3\n")
    assert main(args) == 1


@pytest.fixture(scope="module")
def detect_setup(bench, tmp_path_factory):
    root = tmp_path_factory.mktemp("detect")
    save_model(bench.model("two")[0], root / "model.txt")
    imgs = root / "imgs"
    imgs.mkdir()
    rows = []
    for k, seed in enumerate([21, 22]):
        p = SceneParams(pmr_true=0.09 + 0.01 * k, incline_deg=-1.0 + 2 * k, ruler_x=1550.0,
                        ruler_y=420.0, noise_sigma=2.0, seed=seed)
        img, gt = generate_image(p)
        write_image(imgs / f"s{k}.png", img)
        rows.append(annotation_row(f"s{k}", gt))
    write_annotations(root / "annotations.csv", rows)
    blank = np.full((1225, 980), 30.0) + np.random.default_rng(0).normal(0, 2, (1225, 980))
    write_image(root / "blank.png", blank)
    return root


def test_detect_and_eval(detect_setup, capsys):
    root = detect_setup
    res = root / "res.jsonl"
    assert main(["detect", "--input", str(root / "imgs"), "--model", str(root / "model.txt"),
                 "--out", str(res), "--overlay", str(root / "ov"), "--debug",
                 str(root / "dbg")]) == 0
    recs = read_records(res)
    assert [r["id"] for r in recs] == ["s0", "s1"] and all(r["success"] for r in recs)
    assert (root / "ov" / "s0.png").is_file() and (root / "dbg" / "s1_trace.csv").is_file()
    ann = read_annotations(root / "annotations.csv")
    for r in recs:
        assert abs(r["pmr"] - ann[r["id"]]["pmr_true"]) / ann[r["id"]]["pmr_true"] < 0.01
    capsys.readouterr()
    report = root / "rep.json"
    assert main(["eval", "--results", str(res), "--annotations", str(root / "annotations.csv"),
                 "--out", str(report)]) == 0
    out = capsys.readouterr().out
    assert "Ours (ref)" in out and "4-rtp (ref)" in out
    doc = json.loads(report.read_text())
    assert doc["Ours"]["sdr"]["1.0"] == 100.0 and doc["Ours"]["n"] == 2


def test_detect_failure_exit_two(detect_setup, capsys):
    root = detect_setup
    res = root / "blank.jsonl"
    code = main(["detect", "--input", str(root / "blank.png"), "--model",
                 str(root / "model.txt"), "--out", str(res)])
    assert code == 2
    [rec] = read_records(res)
    assert rec["success"] is False and rec["stage"] and rec["pmr"] is None


def test_detect_model_from_env(detect_setup, monkeypatch, tmp_path):
    root = detect_setup
    out = tmp_path / "r.jsonl"
    base = ["detect", "--input", str(root / "imgs" / "s0.png"), "--out", str(out)]
    monkeypatch.delenv("CEPHSCALE_MODEL", raising=False)
    assert main(base) == 1
    monkeypatch.setenv("CEPHSCALE_MODEL", str(root / "model.txt"))
    assert main(base + ["--coarse-only"]) == 0
    assert read_records(out)[0]["stage"] == "coarse"
    assert main(base + ["--model", str(root / "missing.txt")]) == 1
    assert main(["detect", "--input", str(tmp_path / "nothing"), "--out", str(out),
                 "--model", str(root / "model.txt")]) == 1
    cfg = tmp_path / "p.cfg"
    cfg.write_text("gamma = 0.7\nnonsense = 1\n")
    assert main(base + ["--config", str(cfg)]) == 1


def test_eval_errors(detect_setup, tmp_path):
    root = detect_setup
    ann = str(root / "annotations.csv")
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    assert main(["eval", "--results", str(empty), "--annotations", ann]) == 1
    partial = tmp_path / "one.jsonl"
    partial.write_text(json.dumps({"id": "s0", "success": True, "calibration_px": 500.0}) + "\n")
    assert main(["eval", "--results", str(partial), "--annotations", ann]) == 1


def test_eval_perfect(tmp_path, capsys):
    rows = read_annotations(generate_corpus(3, 5, tmp_path / "c") / "annotations.csv")
    res = tmp_path / "perfect.jsonl"
    with open(res, "w") as fh:
        for i, a in rows.items():
            lm = float(np.hypot(a["loc1_x"] - a["loc10_x"], a["loc1_y"] - a["loc10_y"]))
            fh.write(json.dumps({"id": i, "success": True, "calibration_px": lm}) + "\n")
    assert main(["eval", "--results", str(res), "--annotations",
                 str(tmp_path / "c" / "annotations.csv"), "--baseline", str(res)]) == 0
    doc = json.loads(res.with_suffix(".report.json").read_text())
    assert doc["Ours"]["mre"] == 0 and set(doc) == {"Ours", "4-rtp"}
    assert all(v == 100.0 for v in doc["Ours"]["sdr"].values())


def test_parser_defaults():
    a = build_parser().parse_args(["detect", "--input", "i", "--out", "o"])
    assert a.seed == 0 and a.gamma is None and not a.coarse_only
