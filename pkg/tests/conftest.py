import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def smooth_texture(shape, seed, sigma=3.0, lo=30.0, hi=220.0):
    """Band-limited random texture scaled into [lo, hi]."""
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    t = gaussian_filter(rng.normal(size=shape), sigma)
    t = (t - t.min()) / (t.max() - t.min())
    return lo + (hi - lo) * t


@pytest.fixture
def texture():
    return smooth_texture


# -- shared synthetic benchmark ----------------------------------------------------
# One 200-scene corpus, split in half; models are trained once per session and
# images are rendered on demand so the corpus never sits in memory.

BENCH_SIZE = 200
BENCH_SEED = 2024


class Bench:
    def __init__(self):
        from cephscale.synth import corpus_scenes, ground_truth

        scenes = corpus_scenes(BENCH_SIZE, BENCH_SEED)
        self.train = [(i, p) for i, p, s in scenes if s == "train"]
        self.test = [(i, p) for i, p, s in scenes if s == "test"]
        self.truth = {i: ground_truth(p) for i, p, _ in scenes}
        self._models = {}

    def items(self):
        from cephscale.synth import generate_image
        from cephscale.voting import TrainingItem

        return [TrainingItem(i, (lambda p=p: generate_image(p)[0]),
                             self.truth[i].upper, self.truth[i].lower) for i, p in self.train]

    def span_ratio(self):
        gts = [self.truth[i] for i, _ in self.train]
        return float(np.mean([g.calibration_px / np.hypot(g.lower[0] - g.upper[0],
                                                          g.lower[1] - g.upper[1]) for g in gts]))

    def model(self, kind="two"):
        import time

        from cephscale.voting import VotingConfig, train_predictor

        if kind not in self._models:
            cfg = {"two": VotingConfig, "three": VotingConfig.three_scale,
                   "four": VotingConfig.four_scale}[kind]()
            t = time.perf_counter()
            model, errors = train_predictor(self.items(), cfg, rng_seed=0,
                                            span_ratio=self.span_ratio())
            self._models[kind] = (model, errors, time.perf_counter() - t)
        return self._models[kind]


@pytest.fixture(scope="session")
def bench():
    return Bench()


@pytest.fixture(scope="session")
def reference():
    from cephscale.cornerdetect import default_reference

    return default_reference()


def ruler_roi(params, margin_widths=3.0, margin_length=0.3):
    """Preprocessed ROI around the true ruler, as the pipeline would crop it.

    Returns ``(roi, gt, offset)`` with ``offset`` the ROI origin in the image.
    """
    from cephscale.imagecore import crop, preprocess_roi
    from cephscale.synth import generate_image

    img, gt = generate_image(params)
    w = gt.scale_width_px
    l_p = float(np.hypot(gt.lower[0] - gt.upper[0], gt.lower[1] - gt.upper[1]))
    xs, ys = (gt.upper[0], gt.lower[0]), (gt.upper[1], gt.lower[1])
    x0 = int(np.floor(min(xs) - margin_widths * w))
    x1 = int(np.ceil(max(xs) + w + margin_widths * w))
    y0 = int(np.floor(min(ys) - margin_length * l_p))
    y1 = int(np.ceil(max(ys) + margin_length * l_p))
    raw, off = crop(img, (x0, y0, x1 - x0, y1 - y0))
    return preprocess_roi(raw), gt, np.asarray(off, dtype=float)


# -- acceptance verdicts --------------------------------------------------------------

ACCEPTANCE = {}


def record_verdict(number, ok, detail):
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
