"""Synthetic benchmark: train, detect on the test split and print the metric table.

Usage: python scripts/run_benchmark.py [--n 200] [--seed 2024] [--report out.json]
"""
import argparse
import time

import numpy as np

from cephscale.cornerdetect import default_reference
from cephscale.evaluation import evaluate, format_table, report_json
from cephscale.pipeline import coarse_only, detect_scale
from cephscale.synth import corpus_scenes, generate_image, ground_truth
from cephscale.voting import TrainingItem, VotingConfig, train_predictor


def train(scenes, truth, cfg, seed):
    items = [TrainingItem(i, (lambda p=p: generate_image(p)[0]), truth[i].upper, truth[i].lower)
             for i, p in scenes]
    span = float(np.mean([truth[i].calibration_px / np.hypot(*np.subtract(truth[i].lower,
                                                                           truth[i].upper))
                          for i, _ in scenes]))
    t = time.perf_counter()
    model, _ = train_predictor(items, cfg, rng_seed=seed, span_ratio=span)
    return model, time.perf_counter() - t


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200, help="corpus size (half train, half test)")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--report", default=None, help="write the JSON report here")
    ap.add_argument("--no-baseline", action="store_true", help="skip the four-scale baseline")
    args = ap.parse_args()

    scenes = corpus_scenes(args.n, args.seed)
    truth = {i: ground_truth(p) for i, p, _ in scenes}
    train_set = [(i, p) for i, p, s in scenes if s == "train"]
    test_set = [(i, p) for i, p, s in scenes if s == "test"]
    ann = {i: truth[i].calibration_px for i, _ in test_set}
    ref = default_reference()

    model, t_train = train(train_set, truth, VotingConfig(), 0)
    print(f"trained two-scale model on {len(train_set)} images in {t_train:.1f} s")
    lengths, times = {}, []
    for image_id, p in test_set:
        img, _ = generate_image(p)
        t = time.perf_counter()
        try:
            lengths[image_id] = detect_scale(img, model, ref).calibration_px
        except Exception as exc:
            print(f"{image_id}: failed ({exc})")
            lengths[image_id] = None
        times.append(time.perf_counter() - t)
    print(f"detection: {sum(times):.1f} s total, {np.mean(times):.2f} s mean, "
          f"{max(times):.2f} s max per image")
    reports = {"Ours": evaluate(lengths, ann)}

    if not args.no_baseline:
        model4, t4 = train(train_set, truth, VotingConfig.four_scale(), 0)
        print(f"trained four-scale model in {t4:.1f} s")
        coarse = {i: coarse_only(generate_image(p)[0], model4).calibration_px for i, p in test_set}
        reports["4-rtp"] = evaluate(coarse, ann)

    print(format_table(reports))
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(report_json(reports) + "\n")


if __name__ == "__main__":
    main()
