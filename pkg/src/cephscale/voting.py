"""Regression-tree voting for coarse scale-corner localization.

Random patches are described, each forest predicts a displacement from the
patch center to the corner, and the corner estimate is the mean of
``center + displacement`` over all patches. Stages run coarse to fine, each
sampling around the previous stage's estimate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .descriptor import describe_patches, footprint_radius
from .errors import CoarseStageError, ModelFormatError, TrainingError
from .imagecore import STANDARD_WIDTH, as_gray, read_image, resize_by, resize_to_width

logger = logging.getLogger(__name__)

TWO_SCALES = (0.125, 0.25)
THREE_SCALES = (0.125, 0.25, 0.5)
FOUR_SCALES = (0.125, 0.25, 0.5, 1.0)
CORNERS = ("upper", "lower")
MAGIC = "CEPHSCALE-PREDICTOR"
FORMAT_VERSION = 1


@dataclass
class RegressionTree:
    """Flat-array binary tree. ``feature[i] == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        best = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.feature[node] >= 0:
                stack.append((self.left[node], d + 1))
                stack.append((self.right[node], d + 1))
        return best

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(len(X), dtype=np.intp)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return node
            r = rows[internal]
            n = node[internal]
            go_left = X[r, f[internal]] <= self.threshold[n]
            node[internal] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]


def train_tree(X, Y, max_depth: int = 12, min_leaf: int = 5) -> RegressionTree:
    """Greedy CART on 2-D targets, exhaustive over features and midpoints.

    A split minimizes the children's summed squared error (dx and dy added).
    """
    X = np.asarray(X, dtype=np.float64)
    if len(X) == 0:
        raise TrainingError("cannot train a tree on an empty sample set")
    Y = np.asarray(Y, dtype=np.float64).reshape(len(X), -1)
    n, n_feat = X.shape
    min_leaf = max(1, int(min_leaf))
    feats = np.arange(n_feat)

    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(idx):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(Y[idx].mean(axis=0))
        count.append(len(idx))
        return len(feature) - 1

    root_order = np.argsort(X, axis=0, kind="stable")
    stack = [(new_node(root_order[:, 0]), root_order, 0)]
    while stack:
        node, order, depth = stack.pop()
        m = order.shape[0]
        y = Y[order[:, 0]]
        if depth >= max_depth or m < 2 * min_leaf or np.all(y == y[0]):
            continue
        split = _best_split(X, Y, order, feats, min_leaf)
        if split is None:
            continue
        f, i, thr = split
        in_left = np.zeros(n, dtype=bool)
        in_left[order[:i, f]] = True
        ot = order.T
        sel = in_left[ot]
        left_order = ot[sel].reshape(n_feat, i).T
        right_order = ot[~sel].reshape(n_feat, m - i).T
        feature[node] = int(f)
        threshold[node] = float(thr)
        lnode = new_node(left_order[:, 0])
        rnode = new_node(right_order[:, 0])
        left[node], right[node] = lnode, rnode
        stack.append((rnode, right_order, depth + 1))
        stack.append((lnode, left_order, depth + 1))

    return RegressionTree(
        feature=np.array(feature, dtype=np.intp),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.intp),
        right=np.array(right, dtype=np.intp),
        value=np.array(value, dtype=np.float64).reshape(len(feature), Y.shape[1]),
        count=np.array(count, dtype=np.intp),
    )


def _best_split(X, Y, order, feats, min_leaf):
    # children SSE = const - (|sum_L|^2/n_L + |sum_R|^2/n_R); maximize the bracket
    m = order.shape[0]
    xs = X[order, feats]                       # m x F, each column sorted
    nl = np.arange(1, m, dtype=np.float64)[:, None]
    nr = m - nl
    gain = np.zeros((m - 1, order.shape[1]))
    for k in range(Y.shape[1]):
        c = np.cumsum(Y[order, k], axis=0)
        lsum = c[:-1]
        rsum = c[-1] - lsum
        gain += lsum * lsum / nl + rsum * rsum / nr
    valid = (xs[:-1] < xs[1:]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    gain = np.where(valid, gain, -np.inf)
    flat = int(np.argmax(gain.T))              # lowest feature, then lowest position
    f, pos = divmod(flat, m - 1)
    i = pos + 1
    lo, hi = xs[i - 1, f], xs[i, f]
    thr = 0.5 * (lo + hi)
    if not lo <= thr < hi:
        thr = lo
    return f, i, thr


def predict_displacement(forest: Sequence, descriptors) -> np.ndarray:
    """Mean leaf displacement across the forest, one row per descriptor."""
    if len(forest) == 0:
        raise TrainingError("empty forest")
    X = np.atleast_2d(np.asarray(descriptors, dtype=np.float64))
    total = np.zeros((len(X), 2))
    for tree in forest:
        total += tree.predict(X)
    return total / len(forest)


def vote_location(patch_centers, displacements) -> np.ndarray:
    """L = sum(p_i + d_i) / m."""
    p = np.asarray(patch_centers, dtype=np.float64).reshape(-1, 2)
    d = np.asarray(displacements, dtype=np.float64).reshape(-1, 2)
    if len(p) == 0 or len(p) != len(d):
        raise ValueError(f"need equal, non-empty point and displacement sets ({len(p)} vs {len(d)})")
    return (p + d).sum(axis=0) / len(p)


@dataclass
class VotingConfig:
    # the first stage is little better than the corpus prior, so later stages
    # need wide windows and radii to recover from its error
    scales: tuple[float, ...] = TWO_SCALES
    n_trees: int = 8
    half_width: int | dict = field(
        default_factory=lambda: {0.125: 28, 0.25: 32, 0.5: 40, 1.0: 40})
    n_patches: dict = field(default_factory=lambda: {0.125: 300, 0.25: 200, 0.5: 150, 1.0: 100})
    search_radius: dict = field(
        default_factory=lambda: {0.125: 0.0, 0.25: 160.0, 0.5: 120.0, 1.0: 60.0})
    train_patches: int = 100
    max_depth: int = 12
    min_leaf: int = 5

    def __post_init__(self):
        if not self.scales or any(b <= a for a, b in zip(self.scales, self.scales[1:])):
            raise TrainingError(f"stage scales must increase, got {self.scales}")
        if self.n_trees < 1 or self.train_patches < 1:
            raise TrainingError("n_trees and train_patches must be positive")

    def stage_half_width(self, scale: float) -> int:
        hw = self.half_width
        return int(hw[scale]) if isinstance(hw, dict) else int(hw)

    @classmethod
    def four_scale(cls, **kw) -> "VotingConfig":
        return cls(scales=FOUR_SCALES, **kw)

    @classmethod
    def three_scale(cls, **kw) -> "VotingConfig":
        return cls(scales=THREE_SCALES, **kw)


@dataclass
class StageModel:
    scale: float
    forest: list
    patch_half_width: int
    n_patches: int
    search_radius: float


@dataclass
class CornerPredictor:
    name: str
    stages: list

    def __post_init__(self):
        scales = [s.scale for s in self.stages]
        if any(b <= a for a, b in zip(scales, scales[1:])):
            raise TrainingError(f"stage scales must increase, got {scales}")


@dataclass
class CornerModel:
    """Both corner predictors plus the corpus ratio of mark span to corner distance."""

    upper: CornerPredictor
    lower: CornerPredictor
    span_ratio: float = 1.0

    @property
    def scales(self) -> tuple[float, ...]:
        return tuple(s.scale for s in self.upper.stages)


def _to_full(points, stage_shape, full_shape):
    pts = np.asarray(points, dtype=np.float64)
    fx = full_shape[1] / stage_shape[1]
    fy = full_shape[0] / stage_shape[0]
    return np.stack([(pts[:, 0] + 0.5) * fx - 0.5, (pts[:, 1] + 0.5) * fy - 0.5], axis=1)


def _to_stage(points, stage_shape, full_shape):
    return _to_full(points, full_shape, stage_shape)


def sample_centers(stage_shape, full_shape, n: int, half_width: int, rng,
                   around=None, radius: float = 0.0) -> np.ndarray:
    """Patch centers in stage coordinates, drawn from the whole valid area or a disc.

    ``around`` and ``radius`` are in full-resolution units.
    """
    h, w = stage_shape
    margin = footprint_radius(half_width) + 1e-6
    lo = np.array([margin, margin])
    hi = np.array([w - 1 - margin, h - 1 - margin])
    if np.any(hi < lo):
        raise CoarseStageError(f"stage image {w}x{h} too small for half width {half_width}")
    if around is None:
        return lo + rng.random((n, 2)) * (hi - lo)
    c = _to_stage(np.asarray(around, dtype=np.float64)[None], stage_shape, full_shape)[0]
    r = radius * w / full_shape[1]
    ang = rng.random(n) * 2 * np.pi
    rad = r * np.sqrt(rng.random(n))
    pts = c + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    return np.clip(pts, lo, hi)


def _stage_images(image: np.ndarray, scales, cache: dict | None = None):
    for s in scales:
        if cache is not None and s in cache:
            yield s, cache[s]
            continue
        simg = image if s == 1.0 else resize_by(image, s)
        if cache is not None:
            cache[s] = simg
        yield s, simg


def predict_corner_stages(image, predictor: CornerPredictor, rng_seed: int = 0,
                          _cache: dict | None = None) -> list:
    """Per-stage corner estimates in full-resolution coordinates."""
    a = as_gray(image)
    if not predictor.stages:
        raise CoarseStageError(f"predictor {predictor.name!r} has no trained stages")
    tag = CORNERS.index(predictor.name) if predictor.name in CORNERS else len(CORNERS)
    estimates = []
    estimate = None
    scales = [s.scale for s in predictor.stages]
    for k, (stage, (_, simg)) in enumerate(zip(predictor.stages,
                                               _stage_images(a, scales, _cache))):
        rng = np.random.default_rng([rng_seed, k, tag])
        centers = sample_centers(simg.shape, a.shape, stage.n_patches, stage.patch_half_width, rng,
                                 around=estimate, radius=stage.search_radius)
        desc = describe_patches(simg, centers, stage.patch_half_width)
        disp = predict_displacement(stage.forest, desc)
        estimate = vote_location(_to_full(centers, simg.shape, a.shape), disp)
        estimates.append(estimate)
    return estimates


def predict_corner(image, predictor: CornerPredictor, rng_seed: int = 0) -> np.ndarray:
    return predict_corner_stages(image, predictor, rng_seed)[-1]


def predict_corners(image, model: CornerModel, rng_seed: int = 0):
    """Coarse (upper, lower) estimates; downscaled stage images are shared."""
    a = as_gray(image)
    cache: dict = {}
    upper = predict_corner_stages(a, model.upper, rng_seed, cache)[-1]
    lower = predict_corner_stages(a, model.lower, rng_seed, cache)[-1]
    return upper, lower


@dataclass
class TrainingItem:
    image_id: str
    image: object           # ndarray, path, or zero-argument callable returning an array
    upper: tuple | None
    lower: tuple | None


def _load(item: TrainingItem, normalize: bool):
    if item.upper is None or item.lower is None:
        raise TrainingError(f"image {item.image_id!r} lacks corner annotations")
    if isinstance(item.image, (str, Path)):
        img = read_image(item.image)
    elif callable(item.image):
        img = as_gray(item.image())
    else:
        img = as_gray(item.image)
    corners = np.array([item.upper, item.lower], dtype=np.float64)
    if normalize and img.shape[1] != STANDARD_WIDTH:
        norm = resize_to_width(img, STANDARD_WIDTH)
        corners = _to_full(corners, img.shape, norm.shape)
        img = norm
    return img, corners


def train_predictor(corpus: Iterable[TrainingItem], config: VotingConfig | None = None,
                    rng_seed: int = 0, normalize: bool = True, span_ratio: float = 1.0):
    """Fit one forest per (corner, stage). Returns ``(CornerModel, training_errors)``.

    ``training_errors[corner][scale]`` is the in-sample mean displacement error in pixels.
    """
    cfg = config or VotingConfig()
    items = list(corpus)
    if not items:
        raise TrainingError("empty training corpus")
    for it in items:
        if it.upper is None or it.lower is None:
            raise TrainingError(f"image {it.image_id!r} lacks corner annotations")
    samples = {(c, s): ([], []) for c in CORNERS for s in cfg.scales}
    for i, item in enumerate(items):
        img, corners = _load(item, normalize)
        for k, (s, simg) in enumerate(_stage_images(img, cfg.scales)):
            for j, name in enumerate(CORNERS):
                rng = np.random.default_rng([rng_seed, i, k, j])
                target = corners[j]
                around = None if k == 0 else target
                hw = cfg.stage_half_width(s)
                centers = sample_centers(simg.shape, img.shape, cfg.train_patches, hw,
                                         rng, around=around, radius=cfg.search_radius.get(s, 0.0))
                xs, ys = samples[(name, s)]
                xs.append(describe_patches(simg, centers, hw))
                ys.append(target[None] - _to_full(centers, simg.shape, img.shape))
        logger.debug("sampled training patches from %s", item.image_id)

    predictors = {}
    errors = {}
    for j, name in enumerate(CORNERS):
        stages = []
        errors[name] = {}
        for k, s in enumerate(cfg.scales):
            X = np.concatenate(samples[(name, s)][0])
            Y = np.concatenate(samples[(name, s)][1])
            forest = []
            for t in range(cfg.n_trees):
                rng = np.random.default_rng([rng_seed, 7919, j, k, t])
                boot = rng.integers(0, len(X), len(X)) if cfg.n_trees > 1 else np.arange(len(X))
                forest.append(train_tree(X[boot], Y[boot], cfg.max_depth, cfg.min_leaf))
            pred = predict_displacement(forest, X)
            errors[name][s] = float(np.linalg.norm(pred - Y, axis=1).mean())
            stages.append(StageModel(scale=s, forest=forest, patch_half_width=cfg.stage_half_width(s),
                                     n_patches=int(cfg.n_patches.get(s, 200)),
                                     search_radius=float(cfg.search_radius.get(s, 0.0))))
            logger.info("trained %s stage %.3f: %d samples, train error %.2f px",
                        name, s, len(X), errors[name][s])
        predictors[name] = CornerPredictor(name, stages)
    return CornerModel(predictors["upper"], predictors["lower"], span_ratio=span_ratio), errors


# -- persistence ------------------------------------------------------------

def _f(x: float) -> str:
    return repr(float(x))


def dumps_model(model: CornerModel) -> str:
    lines = [MAGIC, f"version {FORMAT_VERSION}", f"span_ratio {_f(model.span_ratio)}"]
    for pred in (model.upper, model.lower):
        lines.append(f"corner {pred.name} stages {len(pred.stages)}")
        for st in pred.stages:
            lines.append(f"stage scale {_f(st.scale)} half_width {st.patch_half_width} "
                         f"n_patches {st.n_patches} search_radius {_f(st.search_radius)} "
                         f"trees {len(st.forest)}")
            for tree in st.forest:
                lines.append(f"tree nodes {tree.n_nodes} dims {tree.value.shape[1]}")
                for i in range(tree.n_nodes):
                    vals = " ".join(_f(v) for v in tree.value[i])
                    lines.append(f"n {tree.feature[i]} {_f(tree.threshold[i])} "
                                 f"{tree.left[i]} {tree.right[i]} {tree.count[i]} {vals}")
    lines.append("end")
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> CornerModel:
    lines = text.splitlines()
    pos = 0

    def take(prefix: str) -> list[str]:
        nonlocal pos
        if pos >= len(lines):
            raise ModelFormatError(f"unexpected end of model, wanted {prefix!r}")
        parts = lines[pos].split()
        if not parts or parts[0] != prefix:
            raise ModelFormatError(f"line {pos + 1}: expected {prefix!r}, got {lines[pos]!r}")
        pos += 1
        return parts

    if not lines or lines[0] != MAGIC:
        raise ModelFormatError("not a cephscale predictor file")
    pos = 1
    version = int(take("version")[1])
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    span_ratio = float(take("span_ratio")[1])
    preds = []
    try:
        for _ in CORNERS:
            parts = take("corner")
            name, n_stages = parts[1], int(parts[3])
            stages = []
            for _ in range(n_stages):
                p = take("stage")
                kv = dict(zip(p[1::2], p[2::2]))
                forest = []
                for _ in range(int(kv["trees"])):
                    tp = take("tree")
                    n_nodes, dims = int(tp[2]), int(tp[4])
                    rows = [take("n") for _ in range(n_nodes)]
                    forest.append(RegressionTree(
                        feature=np.array([int(r[1]) for r in rows], dtype=np.intp),
                        threshold=np.array([float(r[2]) for r in rows]),
                        left=np.array([int(r[3]) for r in rows], dtype=np.intp),
                        right=np.array([int(r[4]) for r in rows], dtype=np.intp),
                        count=np.array([int(r[5]) for r in rows], dtype=np.intp),
                        value=np.array([[float(v) for v in r[6:6 + dims]] for r in rows]
                                       ).reshape(n_nodes, dims),
                    ))
                stages.append(StageModel(scale=float(kv["scale"]), forest=forest,
                                         patch_half_width=int(kv["half_width"]),
                                         n_patches=int(kv["n_patches"]),
                                         search_radius=float(kv["search_radius"])))
            preds.append(CornerPredictor(name, stages))
    except (IndexError, KeyError, ValueError) as exc:
        raise ModelFormatError(f"malformed model near line {pos + 1}: {exc}") from exc
    take("end")
    by_name = {p.name: p for p in preds}
    if set(by_name) != set(CORNERS):
        raise ModelFormatError(f"model must contain corners {CORNERS}, got {sorted(by_name)}")
    return CornerModel(by_name["upper"], by_name["lower"], span_ratio=span_ratio)


def save_model(model: CornerModel, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="ascii")


def load_model(path) -> CornerModel:
    return loads_model(Path(path).read_text(encoding="ascii"))
