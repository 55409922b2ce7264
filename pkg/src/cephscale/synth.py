"""Deterministic cephalogram-like scenes with a calibrated ruler and exact ground truth.

The ruler is drawn in its own frame: ``u`` runs across it (left edge at 0,
toward +x when upright) and ``v`` runs down its long axis from the upper-left
corner. ``incline_deg`` is the angle of the left edge's normal, matching the
Hough convention ``r = x cos(t) + y sin(t)`` with ``t = 0`` for a vertical edge.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .imagecore import bilinear_sample, resize, write_image

BACKGROUND = 20.0
SOFT_TISSUE = 55.0
RULER = 205.0
MARK_DEPTH = 115.0
TAG = 235.0
STICKER = 150.0
STAIN_DEPTH = 70.0

ANNOTATION_COLUMNS = ["id", "upper_x", "upper_y", "lower_x", "lower_y", "loc1_x", "loc1_y",
                      "loc10_x", "loc10_y", "pmr_true", "incline_deg"]


@dataclass(frozen=True)
class SceneParams:
    width: int = 1960
    height: int = 2450
    pmr_true: float = 0.1
    incline_deg: float = 0.0
    ruler_x: float = 1560.0          # upper-left corner of the ruler
    ruler_y: float = 420.0
    head_center: tuple[float, float] = (0.42, 0.55)   # fractions of width, height
    calibration_mm: float = 45.0
    major_spacing_mm: float = 5.0
    minor_spacing_mm: float = 1.0
    end_margin_mm: float = 3.0
    width_ratio: float = 0.08        # ruler width / ruler length
    mark_inset: float = 0.08         # fractions of the ruler width
    minor_length: float = 0.22
    major_length: float = 0.6
    mark_thickness_mm: float = 0.3
    tag: bool = False
    sticker: bool = False
    stains: int = 0
    adversarial: bool = False
    illumination: float = 0.0        # relative top-to-bottom brightness drift
    noise_sigma: float = 0.0
    seed: int = 0

    @property
    def ruler_length_mm(self) -> float:
        return self.calibration_mm + 2 * self.end_margin_mm

    @property
    def ruler_length_px(self) -> float:
        return self.ruler_length_mm / self.pmr_true

    @property
    def ruler_width_px(self) -> float:
        return self.width_ratio * self.ruler_length_px

    def axes(self):
        t = np.deg2rad(self.incline_deg)
        across = np.array([np.cos(t), np.sin(t)])
        along = np.array([-np.sin(t), np.cos(t)])
        return across, along

    def to_image(self, u, v) -> np.ndarray:
        across, along = self.axes()
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        return np.stack([self.ruler_x + u * across[0] + v * along[0],
                         self.ruler_y + u * across[1] + v * along[1]], axis=-1)


@dataclass
class GroundTruth:
    upper: tuple[float, float]
    lower: tuple[float, float]
    major_marks: list
    minor_marks: list
    loc1: tuple[float, float]
    loc10: tuple[float, float]
    pmr_true: float
    scale_width_px: float
    incline_deg: float
    mark_column_u: float = 0.0
    major_v: list = field(default_factory=list)

    @property
    def calibration_px(self) -> float:
        return float(np.hypot(self.loc10[0] - self.loc1[0], self.loc10[1] - self.loc1[1]))


def _coverage(t, a, b):
    # fraction of the unit pixel interval centered at t inside [a, b]
    return np.clip(np.minimum(t + 0.5, b) - np.maximum(t - 0.5, a), 0.0, 1.0)


def _mark_positions(p: SceneParams):
    n_minor = int(round(p.calibration_mm / p.minor_spacing_mm))
    every = int(round(p.major_spacing_mm / p.minor_spacing_mm))
    v_mm = p.end_margin_mm + np.arange(n_minor + 1) * p.minor_spacing_mm
    return v_mm / p.pmr_true, np.arange(n_minor + 1) % every == 0


def _check_bounds(p: SceneParams) -> None:
    w, L = p.ruler_width_px, p.ruler_length_px
    corners = p.to_image([0, w, 0, w], [0, 0, L, L])
    if (corners[:, 0].min() < 2 or corners[:, 1].min() < 2
            or corners[:, 0].max() > p.width - 3 or corners[:, 1].max() > p.height - 3):
        raise ValueError(f"ruler at ({p.ruler_x:.0f}, {p.ruler_y:.0f}) does not fit "
                         f"in {p.width}x{p.height} image")


def _ellipse(xx, yy, cx, cy, ax, ay, soft):
    r = np.sqrt(((xx - cx) / ax) ** 2 + ((yy - cy) / ay) ** 2)
    return np.clip((1.0 - r) * min(ax, ay) / soft + 0.5, 0.0, 1.0)


def _anatomy(p: SceneParams, rng) -> np.ndarray:
    lw, lh = max(8, p.width // 4), max(8, p.height // 4)
    yy, xx = np.mgrid[0:lh, 0:lw].astype(np.float64)
    xx /= lw
    yy /= lh
    hx, hy = p.head_center
    j = lambda: rng.uniform(-0.01, 0.01)  # noqa: E731
    img = np.full((lh, lw), BACKGROUND)
    head = _ellipse(xx, yy, hx, hy, 0.32, 0.40, 0.01)
    img += (SOFT_TISSUE - BACKGROUND) * head
    cran = _ellipse(xx, yy, hx - 0.05 + j(), hy - 0.12 + j(), 0.25, 0.26, 0.01)
    inner = _ellipse(xx, yy, hx - 0.05, hy - 0.12, 0.23, 0.24, 0.01)
    img += 65.0 * (cran - inner) + 25.0 * inner
    img -= 20.0 * _ellipse(xx, yy, hx + 0.16 + j(), hy - 0.09 + j(), 0.045, 0.05, 0.01)
    img -= 15.0 * _ellipse(xx, yy, hx - 0.02 + j(), hy - 0.02 + j(), 0.03, 0.025, 0.008)
    img += 45.0 * _ellipse(xx, yy, hx + 0.12 + j(), hy + 0.18 + j(), 0.13, 0.06, 0.01)
    img += 70.0 * _ellipse(xx, yy, hx + 0.2 + j(), hy + 0.1 + j(), 0.05, 0.035, 0.006)
    for k in range(4):
        img += 50.0 * _ellipse(xx, yy, hx - 0.12 + j(), hy + 0.18 + 0.07 * k, 0.035, 0.025, 0.006)
    field_ = rng.normal(size=(max(4, lh // 16), max(4, lw // 16)))
    img += 8.0 * resize(field_, lw, lh) * head
    return resize(img, p.width, p.height)


def generate_image(params: SceneParams) -> tuple[np.ndarray, GroundTruth]:
    """Render a scene; identical params always give identical pixels."""
    p = params
    _check_bounds(p)
    anatomy_rng = np.random.default_rng([p.seed, 0])
    clutter_rng = np.random.default_rng([p.seed, 1])
    noise_rng = np.random.default_rng([p.seed, 2])

    img = _anatomy(p, anatomy_rng)

    w, L = p.ruler_width_px, p.ruler_length_px
    pad = 0.0
    if p.tag:
        pad = 2.5 * w
    box = p.to_image([-pad - 2, w + 2, -pad - 2, w + 2], [-2, -2, L + 2, L + 2])
    x0 = max(int(np.floor(box[:, 0].min())) - 2, 0)
    x1 = min(int(np.ceil(box[:, 0].max())) + 3, p.width)
    y0 = max(int(np.floor(box[:, 1].min())) - 2, 0)
    y1 = min(int(np.ceil(box[:, 1].max())) + 3, p.height)
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    across, along = p.axes()
    dx, dy = xx - p.ruler_x, yy - p.ruler_y
    u = dx * across[0] + dy * across[1]
    v = dx * along[0] + dy * along[1]

    region = img[y0:y1, x0:x1]
    body = _coverage(u, 0.0, w) * _coverage(v, 0.0, L)
    region = region * (1 - body) + RULER * body

    mark_v, is_major = _mark_positions(p)
    spacing = mark_v[1] - mark_v[0]
    k = np.clip(np.rint((v - mark_v[0]) / spacing), 0, len(mark_v) - 1).astype(int)
    half_t = 0.5 * p.mark_thickness_mm / p.pmr_true
    inset = p.mark_inset * w
    length = np.where(is_major[k], p.major_length, p.minor_length) * w
    mark = _coverage(v, mark_v[k] - half_t, mark_v[k] + half_t) * _coverage(u, inset, inset + length)
    region = region - MARK_DEPTH * mark * body

    if p.sticker:
        vc = clutter_rng.uniform(0.35, 0.65) * L
        rad = 0.3 * w
        dist = np.hypot(u - 0.9 * w, v - vc)
        disc = np.clip(rad - dist + 0.5, 0.0, 1.0)
        region = region * (1 - 0.8 * disc) + STICKER * 0.8 * disc
    if p.stains:
        gaps = np.arange(1, 8) if not p.adversarial else np.arange(0, 9)
        chosen = clutter_rng.choice(gaps, size=min(p.stains, len(gaps)), replace=False)
        major_v = mark_v[is_major]
        for g in sorted(chosen):
            vc = major_v[g] + clutter_rng.uniform(0.3, 0.7) * (major_v[g + 1] - major_v[g])
            uc = clutter_rng.uniform(0.3, 0.45) * w
            su, sv = 0.25 * w, 0.2 / p.pmr_true
            blob = np.exp(-0.5 * (((u - uc) / su) ** 2 + ((v - vc) / sv) ** 2))
            region = region - STAIN_DEPTH * blob * body
    if p.tag:
        tv = clutter_rng.uniform(0.05, 0.15) * L
        th = clutter_rng.uniform(0.15, 0.25) * L
        tu = -1.4 * w
        tag = _coverage(u, tu - 0.8 * w, tu) * _coverage(v, tv, tv + th)
        region = region * (1 - tag) + TAG * tag
    img[y0:y1, x0:x1] = region

    if p.illumination:
        ramp = 1.0 + p.illumination * (np.arange(p.height) / max(p.height - 1, 1) - 0.5) * 2
        img *= ramp[:, None]
    if p.noise_sigma > 0:
        img += p.noise_sigma * noise_rng.standard_normal(img.shape)
    img = np.rint(np.clip(img, 0, 255))

    return img, ground_truth(p)


def ground_truth(p: SceneParams) -> GroundTruth:
    w, L = p.ruler_width_px, p.ruler_length_px
    mark_v, is_major = _mark_positions(p)
    inset = p.mark_inset * w
    u_major = inset + 0.5 * p.major_length * w
    u_minor = inset + 0.5 * p.minor_length * w
    majors = p.to_image(np.full(is_major.sum(), u_major), mark_v[is_major])
    minors = p.to_image(np.full((~is_major).sum(), u_minor), mark_v[~is_major])
    corners = p.to_image([0.0, 0.0], [0.0, L])
    return GroundTruth(
        upper=tuple(map(float, corners[0])),
        lower=tuple(map(float, corners[1])),
        major_marks=[tuple(map(float, m)) for m in majors],
        minor_marks=[tuple(map(float, m)) for m in minors],
        loc1=tuple(map(float, majors[0])),
        loc10=tuple(map(float, majors[-1])),
        pmr_true=p.pmr_true,
        scale_width_px=float(w),
        incline_deg=p.incline_deg,
        mark_column_u=float(inset + 0.5 * (p.minor_length + p.major_length) * w),
        major_v=[float(x) for x in mark_v[is_major]],
    )


def mark_column_profile(image, params: SceneParams, step: float = 1.0):
    """Intensities along the ruler axis at the major-only column; returns (v, samples)."""
    gt = ground_truth(params)
    v = np.arange(0.0, params.ruler_length_px, step)
    pts = params.to_image(np.full_like(v, gt.mark_column_u), v)
    return v, bilinear_sample(image, pts[:, 0], pts[:, 1])


@dataclass
class SceneRanges:
    pmr: tuple[float, float] = (0.07, 0.12)
    incline: tuple[float, float] = (-3.0, 3.0)
    field_of_view_mm: tuple[float, float] = (180.0, 220.0)
    width_limits: tuple[int, int] = (758, 2690)
    aspect: tuple[float, float] = (1.2, 1.35)
    ruler_x_frac: tuple[float, float] = (0.78, 0.82)
    ruler_y_frac: tuple[float, float] = (0.14, 0.20)
    interference_prob: float = 0.3
    illumination: tuple[float, float] = (0.0, 0.15)
    noise_sigma: tuple[float, float] = (1.0, 4.0)


def random_scene(seed: int, ranges: SceneRanges | None = None) -> SceneParams:
    r = ranges or SceneRanges()
    rng = np.random.default_rng([seed, 99])
    pmr = float(rng.uniform(*r.pmr))
    fov = rng.uniform(*r.field_of_view_mm)
    width = int(np.clip(round(fov / pmr), *r.width_limits))
    height = int(round(width * rng.uniform(*r.aspect)))
    head = (float(0.42 + rng.uniform(-0.02, 0.02)), float(0.55 + rng.uniform(-0.02, 0.02)))
    p = SceneParams(
        width=width, height=height, pmr_true=pmr,
        incline_deg=float(rng.uniform(*r.incline)),
        ruler_x=float(rng.uniform(*r.ruler_x_frac) * width),
        ruler_y=float(rng.uniform(*r.ruler_y_frac) * height),
        head_center=head,
        tag=bool(rng.random() < r.interference_prob),
        sticker=bool(rng.random() < r.interference_prob),
        stains=int(rng.integers(1, 3)) if rng.random() < r.interference_prob else 0,
        illumination=float(rng.uniform(*r.illumination)),
        noise_sigma=float(rng.uniform(*r.noise_sigma)),
        seed=int(seed),
    )
    _check_bounds(p)
    return p


def clean(params: SceneParams) -> SceneParams:
    """Same scene without tag, sticker or stains."""
    return replace(params, tag=False, sticker=False, stains=0)


def annotation_row(image_id: str, gt: GroundTruth) -> dict:
    return {
        "id": image_id,
        "upper_x": gt.upper[0], "upper_y": gt.upper[1],
        "lower_x": gt.lower[0], "lower_y": gt.lower[1],
        "loc1_x": gt.loc1[0], "loc1_y": gt.loc1[1],
        "loc10_x": gt.loc10[0], "loc10_y": gt.loc10[1],
        "pmr_true": gt.pmr_true, "incline_deg": gt.incline_deg,
    }


def corpus_scenes(n: int, seed: int, ranges: SceneRanges | None = None,
                  train_fraction: float = 0.5):
    """``[(id, params, split)]`` for a corpus; the split is a seeded permutation."""
    if n < 1:
        raise ValueError("corpus size must be at least 1")
    base = np.random.default_rng([seed, 7])
    seeds = base.integers(0, 2**31 - 1, size=n)
    order = base.permutation(n)
    n_train = int(round(n * train_fraction))
    split = np.empty(n, dtype=object)
    split[order[:n_train]] = "train"
    split[order[n_train:]] = "test"
    return [(f"img{i:04d}", random_scene(int(seeds[i]), ranges), str(split[i])) for i in range(n)]


def generate_corpus(n: int, seed: int, out_dir, ranges: SceneRanges | None = None,
                    train_fraction: float = 0.5) -> Path:
    """Write ``n`` PNGs plus ``annotations.csv`` and ``split.csv`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows, splits = [], []
    for image_id, params, split in corpus_scenes(n, seed, ranges, train_fraction):
        img, gt = generate_image(params)
        write_image(out / f"{image_id}.png", img)
        rows.append(annotation_row(image_id, gt))
        splits.append({"id": image_id, "split": split})
    write_annotations(out / "annotations.csv", rows)
    with open(out / "split.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["id", "split"], lineterminator="\n")
        wr.writeheader()
        wr.writerows(splits)
    return out


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_annotations(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(ANNOTATION_COLUMNS)
        for row in rows:
            wr.writerow([_fmt(row[c]) for c in ANNOTATION_COLUMNS])


def read_annotations(path) -> dict:
    """``{id: row}`` with numeric columns parsed to float."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            missing = [c for c in ANNOTATION_COLUMNS if c not in row or row[c] in (None, "")]
            if missing:
                raise ValueError(f"annotation row {row.get('id')!r} missing {missing}")
            out[row["id"]] = {c: (row[c] if c == "id" else float(row[c])) for c in ANNOTATION_COLUMNS}
    return out


def read_split(path) -> dict:
    with open(path, newline="") as fh:
        return {row["id"]: row["split"] for row in csv.DictReader(fh)}


def params_dict(p: SceneParams) -> dict:
    return asdict(p)
