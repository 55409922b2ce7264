"""Command-line front end: ``cephscale {synth,train,detect,eval}``.

Exit status is 0 on success, 1 on usage or I/O errors and 2 when detection
failed on at least one image (its results are still written).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import evaluation
from .cornerdetect import default_reference, load_reference
from .errors import ScaleDetectionError
from .pipeline import (DetectionResult, PipelineConfig, detect_batch, read_config, read_records,
                       write_overlay, write_records, write_trace_csv)
from .synth import generate_corpus, read_annotations, read_split
from .voting import TrainingItem, VotingConfig, load_model, save_model, train_predictor

MODEL_ENV = "CEPHSCALE_MODEL"
IMAGE_SUFFIXES = {".png", ".pgm", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp"}
OVERRIDES = ("calibration_mm", "gamma", "th_rel", "hough_window", "margin_widths",
             "margin_length", "retries")

log = logging.getLogger("cephscale")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for detection misses here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cephscale", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic annotated corpus")
    s.add_argument("--n", type=_positive_int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--train-fraction", type=float, default=0.5)

    t = sub.add_parser("train", help="train corner-voting forests")
    t.add_argument("--corpus", required=True, help="directory with annotations.csv")
    t.add_argument("--out", required=True, help="model file to write")
    t.add_argument("--seed", type=int, default=0)
    g = t.add_mutually_exclusive_group()
    g.add_argument("--four-scale", action="store_true", help="scales 0.125, 0.25, 0.5, 1")
    g.add_argument("--three-scale", action="store_true", help="scales 0.125, 0.25, 0.5")
    t.add_argument("--trees", type=_positive_int, default=None)
    t.add_argument("--patches", type=_positive_int, default=None, help="training patches per image")

    d = sub.add_parser("detect", help="detect the ruler and its pixel-millimeter ratio")
    d.add_argument("--input", required=True, help="image file or directory")
    d.add_argument("--model", default=None, help=f"model file (default ${MODEL_ENV})")
    d.add_argument("--reference", default=None,
                   help="reference ROI image; its annotation is the same path with .txt")
    d.add_argument("--out", required=True, help="JSON-lines results file")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--config", default=None, help="key = value pipeline settings")
    for name in OVERRIDES:
        d.add_argument("--" + name.replace("_", "-"), dest=name, type=float, default=None)
    d.add_argument("--overlay", default=None, help="directory for annotated PNGs")
    d.add_argument("--debug", default=None, help="directory for trace CSVs")
    d.add_argument("--coarse-only", action="store_true",
                   help="report the voting-only estimate (baseline)")

    e = sub.add_parser("eval", help="score detection results against annotations")
    e.add_argument("--results", required=True)
    e.add_argument("--annotations", required=True)
    e.add_argument("--baseline", default=None, help="results of a --coarse-only run")
    e.add_argument("--split", default=None, help="restrict to ids of this split (needs split.csv)")
    e.add_argument("--out", default=None, help="JSON report path")
    e.add_argument("--calibration-mm", type=float, default=45.0)
    return p


def cmd_synth(args) -> int:
    out = generate_corpus(args.n, args.seed, args.out, train_fraction=args.train_fraction)
    split = read_split(out / "split.csv")
    n_train = sum(v == "train" for v in split.values())
    print(f"wrote {args.n} images to {out} ({n_train} train, {args.n - n_train} test)")
    return 0


def _span_ratio(rows) -> float:
    r = [np.hypot(a["loc1_x"] - a["loc10_x"], a["loc1_y"] - a["loc10_y"])
         / np.hypot(a["upper_x"] - a["lower_x"], a["upper_y"] - a["lower_y"]) for a in rows]
    return float(np.mean(r))


def cmd_train(args) -> int:
    corpus = Path(args.corpus)
    ann_path = corpus / "annotations.csv"
    if not ann_path.is_file():
        raise UsageError(f"missing annotations file {ann_path}")
    ann = read_annotations(ann_path)
    split_path = corpus / "split.csv"
    split = read_split(split_path) if split_path.is_file() else {}
    ids = [i for i in sorted(ann) if split.get(i, "train") == "train"]
    if not ids:
        raise UsageError("no training images in corpus")
    items = []
    for i in ids:
        path = corpus / f"{i}.png"
        if not path.is_file():
            raise UsageError(f"missing image {path}")
        a = ann[i]
        items.append(TrainingItem(i, path, (a["upper_x"], a["upper_y"]), (a["lower_x"], a["lower_y"])))
    kw = {}
    if args.trees:
        kw["n_trees"] = args.trees
    if args.patches:
        kw["train_patches"] = args.patches
    if args.four_scale:
        cfg = VotingConfig.four_scale(**kw)
    elif args.three_scale:
        cfg = VotingConfig.three_scale(**kw)
    else:
        cfg = VotingConfig(**kw)
    model, errors = train_predictor(items, cfg, rng_seed=args.seed,
                                    span_ratio=_span_ratio([ann[i] for i in ids]))
    save_model(model, args.out)
    for corner, per_stage in errors.items():
        for scale, err in per_stage.items():
            print(f"{corner} corner, scale {scale:g}: training error {err:.2f} px")
    print(f"wrote {len(cfg.scales)}-stage model to {args.out} ({len(items)} images)")
    return 0


def _inputs(path: Path):
    if path.is_dir():
        files = sorted(f for f in path.iterdir() if f.suffix.lower() in IMAGE_SUFFIXES)
        if not files:
            raise UsageError(f"no images in {path}")
        return [(f.stem, f) for f in files]
    if not path.is_file():
        raise UsageError(f"input {path} does not exist")
    return [(path.stem, path)]


def _pipeline_config(args) -> PipelineConfig:
    values = read_config(args.config) if args.config else {}
    for name in OVERRIDES:
        v = getattr(args, name)
        if v is not None:
            values[name] = v
    return PipelineConfig.from_dict(values)


def cmd_detect(args) -> int:
    model_path = args.model or os.environ.get(MODEL_ENV)
    if not model_path:
        raise UsageError(f"no model given (use --model or set {MODEL_ENV})")
    model = load_model(model_path)
    if args.reference:
        ref_img = Path(args.reference)
        ref = load_reference(ref_img, ref_img.with_suffix(".txt"))
    else:
        ref = default_reference()
    cfg = _pipeline_config(args)
    items = _inputs(Path(args.input))
    results = detect_batch(items, model, ref, cfg, rng_seed=args.seed, coarse=args.coarse_only)
    write_records(args.out, results)
    for folder in (args.overlay, args.debug):
        if folder:
            Path(folder).mkdir(parents=True, exist_ok=True)
    paths = dict(items)
    n_fail = 0
    for image_id, res in results:
        if not isinstance(res, DetectionResult):
            if not hasattr(res, "calibration_px"):
                n_fail += 1
                print(f"{image_id}: FAILED at {res}")
            continue
        print(f"{image_id}: pmr {res.pmr:.6f} mm/px, calibration {res.calibration_px:.2f} px")
        if args.overlay:
            from .imagecore import read_image
            write_overlay(Path(args.overlay) / f"{image_id}.png", read_image(paths[image_id]), res)
        if args.debug:
            write_trace_csv(Path(args.debug) / f"{image_id}_trace.csv", res)
    print(f"{len(results) - n_fail}/{len(results)} images succeeded; results in {args.out}")
    return 2 if n_fail else 0


def cmd_eval(args) -> int:
    records = read_records(args.results)
    if not records:
        raise UsageError(f"{args.results} holds no results")
    ann = read_annotations(args.annotations)
    if args.split:
        split = read_split(Path(args.annotations).with_name("split.csv"))
        ann = {k: v for k, v in ann.items() if split.get(k) == args.split}
    reports = {"Ours": _score(records, ann, args)}
    if args.baseline:
        reports["4-rtp"] = _score(read_records(args.baseline), ann, args)
    print(evaluation.format_table(reports))
    out = args.out or str(Path(args.results).with_suffix(".report.json"))
    Path(out).write_text(evaluation.report_json(reports) + "\n")
    print(f"report written to {out}")
    return 0


def _score(records, ann, args):
    lengths = evaluation.lengths_from_results(records)
    if args.split:
        lengths = {k: v for k, v in lengths.items() if k in ann}
    return evaluation.evaluate(lengths, ann, args.calibration_mm)


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, OSError, ValueError, ScaleDetectionError) as exc:
        print(f"cephscale {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
