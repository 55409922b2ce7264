"""End-to-end scale detection on one cephalogram.

Everything runs on a copy normalized to width 1960; reported coordinates
and the pixel-millimeter ratio are converted back to the original raster.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .cornerdetect import CornerResult, ReferenceModel, detect_corners
from .edgedetect import EdgeResult, detect_edge
from .errors import (CoarseStageError, EdgeNotFoundError, ImplausibleCornersError,
                     ScaleDetectionError)
from .imagecore import (STANDARD_WIDTH, as_gray, crop, preprocess_roi, read_image,
                        resize_to_width, scale_points)
from .markdetect import (MarkSet, TraceLine, calibration_and_pmr, element_length, lmi_filter,
                         scan_major_line)
from .voting import CornerModel, predict_corners

logger = logging.getLogger(__name__)

RETRYABLE = (EdgeNotFoundError, ImplausibleCornersError)


@dataclass
class PipelineConfig:
    calibration_mm: float = 45.0
    expected_marks: int = 10
    margin_widths: float = 3.0        # horizontal ROI margin, in ruler widths
    margin_length: float = 0.3        # vertical ROI margin, fraction of the corner distance
    gamma: float = 0.75
    th_rel: float = 0.3
    hough_window: float = 10.0
    hough_top_k: int = 10
    vote_ratio: float = 0.5
    corner_search: float = 0.2        # corner strip height, fraction of the corner distance
    retries: int = 1

    def __post_init__(self):
        if self.calibration_mm <= 0:
            raise ValueError("calibration_mm must be positive")
        if self.expected_marks < 2:
            raise ValueError("expected_marks must be at least 2")
        if self.margin_widths <= 0 or self.margin_length <= 0:
            raise ValueError("ROI margins must be positive")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.th_rel < 1:
            raise ValueError("th_rel must lie in (0, 1)")
        if self.retries < 0:
            raise ValueError("retries must be non-negative")

    @classmethod
    def from_dict(cls, values: dict) -> "PipelineConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(values) - set(known)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for k, v in values.items():
            default = getattr(cls(), k)
            kw[k] = type(default)(v)
        return cls(**kw)


def read_config(path) -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        values[k] = v
    return values


@dataclass
class DetectionResult:
    coarse_upper: tuple
    coarse_lower: tuple
    upper: tuple
    lower: tuple
    loc1: tuple
    loc10: tuple
    calibration_px: float
    pmr: float
    coarse_calibration_px: float
    normalization_factor: float
    roi_rect: tuple                   # (x, y, w, h) in the normalized raster
    off_x: float
    attempts: int
    edge: EdgeResult = field(repr=False)
    corners: CornerResult = field(repr=False)
    marks: MarkSet = field(repr=False)
    trace: TraceLine = field(repr=False)

    @property
    def incline(self) -> float:
        return self.edge.incline


@dataclass
class DetectionFailure:
    stage: str
    message: str

    def __str__(self):
        return f"{self.stage}: {self.message}"


def _pt(p) -> tuple:
    return tuple(float(v) for v in np.asarray(p, dtype=np.float64).ravel())


def _roi_rect(cu, cl, w_est, cfg: PipelineConfig, scale: float):
    l_p = float(np.hypot(*(cl - cu)))
    mx = cfg.margin_widths * w_est * scale
    my = cfg.margin_length * l_p * scale
    xs = (cu[0], cl[0])
    ys = (cu[1], cl[1])
    x0 = int(np.floor(min(xs) - mx))
    x1 = int(np.ceil(max(xs) + w_est + mx))       # the ruler lies right of its left edge
    y0 = int(np.floor(min(ys) - my))
    y1 = int(np.ceil(max(ys) + my))
    return (x0, y0, x1 - x0, y1 - y0)


def _refine(norm, cu, cl, model: CornerModel, ref: ReferenceModel, cfg: PipelineConfig,
            scale: float):
    l_p = float(np.hypot(*(cl - cu)))
    w_est = l_p * ref.w_ref / ref.l_ref
    rect = _roi_rect(cu, cl, w_est, cfg, scale)
    raw, offset = crop(norm, rect)
    roi = preprocess_roi(raw, cfg.gamma)
    off = np.asarray(offset, dtype=np.float64)
    edge = detect_edge(roi, l_p, theta_window=cfg.hough_window, top_k=cfg.hough_top_k,
                       vote_ratio=cfg.vote_ratio)
    corners, rmap = detect_corners(roi, edge, cu - off, cl - off, ref, y_fraction=cfg.corner_search)
    se = element_length(corners.l_g)
    off_x, positions, trace = scan_major_line(corners.rotated_roi, corners.lower, corners.l_g,
                                              se_length=se, th_rel=cfg.th_rel)
    kept = lmi_filter(positions)
    cal, _, marks = calibration_and_pmr(kept, trace, rmap, offset,
                                        calibration_mm=cfg.calibration_mm,
                                        expected=cfg.expected_marks)
    crect = (offset[0], offset[1], roi.shape[1], roi.shape[0])
    return edge, corners, marks, trace, cal, off_x, crect


def _normalize(image):
    orig = as_gray(image)
    norm = resize_to_width(orig, STANDARD_WIDTH) if orig.shape[1] != STANDARD_WIDTH else orig
    return orig, norm


def _coarse(norm, model: CornerModel, rng_seed: int):
    cu, cl = (np.asarray(p, dtype=np.float64) for p in predict_corners(norm, model, rng_seed))
    if not (np.all(np.isfinite(cu)) and np.all(np.isfinite(cl))) or np.allclose(cu, cl):
        raise CoarseStageError("coarse corner prediction degenerate")
    return cu, cl


@dataclass
class CoarseResult:
    coarse_upper: tuple
    coarse_lower: tuple
    calibration_px: float
    pmr: float


def coarse_only(image, model: CornerModel, cfg: PipelineConfig | None = None,
                rng_seed: int = 0) -> CoarseResult:
    """Regression voting alone: the corner distance times the model's span ratio."""
    cfg = cfg or PipelineConfig()
    orig, norm = _normalize(image)
    cu, cl = _coarse(norm, model, rng_seed)
    pts = scale_points(np.array([cu, cl]), norm.shape, orig.shape)
    cal = float(np.hypot(*(pts[1] - pts[0]))) * model.span_ratio
    return CoarseResult(_pt(pts[0]), _pt(pts[1]), cal, cfg.calibration_mm / cal)


def detect_scale(image, model: CornerModel, ref: ReferenceModel,
                 cfg: PipelineConfig | None = None, rng_seed: int = 0) -> DetectionResult:
    """Locate the ruler, its marks and the mm-per-pixel ratio of ``image``.

    Raises a ``ScaleDetectionError`` subclass whose ``stage`` names the step
    that failed.
    """
    cfg = cfg or PipelineConfig()
    orig, norm = _normalize(image)
    factor = norm.shape[1] / orig.shape[1]
    cu, cl = _coarse(norm, model, rng_seed)

    attempts = 0
    scale = 1.0
    while True:
        attempts += 1
        try:
            edge, corners, marks, trace, cal, off_x, rect = _refine(norm, cu, cl, model, ref,
                                                                    cfg, scale)
            break
        except RETRYABLE as exc:
            if attempts > cfg.retries:
                raise
            logger.info("retrying with doubled ROI margin after %s failure: %s", exc.stage, exc)
            scale *= 2.0

    def back(p):
        return _pt(scale_points(np.asarray(p, dtype=np.float64), norm.shape, orig.shape))

    upper_full = np.asarray(corners.upper_roi) + rect[:2]
    lower_full = np.asarray(corners.lower_roi) + rect[:2]
    span = float(np.hypot(*(cl - cu))) * model.span_ratio
    marks.positions_full = [back(p) for p in marks.positions_full]
    cal_orig = cal / factor
    return DetectionResult(
        coarse_upper=back(cu), coarse_lower=back(cl),
        upper=back(upper_full), lower=back(lower_full),
        loc1=marks.positions_full[-1], loc10=marks.positions_full[0],
        calibration_px=cal_orig, pmr=cfg.calibration_mm / cal_orig,
        coarse_calibration_px=span / factor, normalization_factor=factor,
        roi_rect=tuple(int(v) for v in rect), off_x=float(off_x), attempts=attempts,
        edge=edge, corners=corners, marks=marks, trace=trace)


def load_input(item):
    """An ndarray passes through; anything else is read as an image path."""
    if isinstance(item, np.ndarray):
        return as_gray(item)
    return read_image(item)


def detect_batch(items, model: CornerModel, ref: ReferenceModel | None,
                 cfg: PipelineConfig | None = None, rng_seed: int = 0,
                 coarse: bool = False) -> list:
    """``[(image_id, DetectionResult | DetectionFailure)]`` in input order.

    ``items`` holds ``(image_id, ndarray or path)`` pairs. Every image uses the
    same seed, so results do not depend on batch composition. With ``coarse``
    only the voting stage runs and results are ``CoarseResult``.
    """
    out = []
    for image_id, item in items:
        try:
            if coarse:
                res = coarse_only(load_input(item), model, cfg, rng_seed)
            else:
                res = detect_scale(load_input(item), model, ref, cfg, rng_seed)
        except ScaleDetectionError as exc:
            res = DetectionFailure(exc.stage or "unknown", str(exc))
        except (OSError, ValueError) as exc:
            res = DetectionFailure("input", f"{type(exc).__name__}: {exc}")
        if isinstance(res, DetectionFailure):
            logger.warning("%s failed at %s", image_id, res)
        out.append((image_id, res))
    return out


def result_record(image_id: str, res) -> dict:
    if isinstance(res, DetectionFailure):
        return {"id": image_id, "success": False, "stage": res.stage, "error": res.message,
                "pmr": None, "calibration_px": None}
    if isinstance(res, CoarseResult):
        return {"id": image_id, "success": True, "stage": "coarse", "pmr": res.pmr,
                "calibration_px": res.calibration_px,
                "coarse_upper": list(res.coarse_upper), "coarse_lower": list(res.coarse_lower)}
    return {
        "id": image_id, "success": True, "stage": "done",
        "pmr": res.pmr, "calibration_px": res.calibration_px,
        "coarse_calibration_px": res.coarse_calibration_px,
        "normalization_factor": res.normalization_factor,
        "incline_deg": res.incline,
        "coarse_upper": list(res.coarse_upper), "coarse_lower": list(res.coarse_lower),
        "upper": list(res.upper), "lower": list(res.lower),
        "loc1": list(res.loc1), "loc10": list(res.loc10),
        "marks": [list(p) for p in res.marks.positions_full],
        "off_x": res.off_x, "attempts": res.attempts,
    }


def dumps_record(record: dict) -> str:
    # json writes floats with repr, so the text round-trips exactly
    return json.dumps(record, sort_keys=True)


def write_records(path, results) -> None:
    with open(path, "w") as fh:
        for image_id, res in results:
            fh.write(dumps_record(result_record(image_id, res)) + "\n")


def read_records(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_overlay(path, image, res: DetectionResult) -> None:
    """RGB copy of the original image with corners, edge and marks drawn on it."""
    from PIL import Image, ImageDraw

    from .imagecore import to_uint8

    base = Image.fromarray(to_uint8(image), mode="L").convert("RGB")
    draw = ImageDraw.Draw(base)
    r = max(3, int(round(0.004 * base.width)))
    draw.line([res.upper, res.lower], fill=(0, 200, 255), width=max(1, r // 2))
    for p in (res.upper, res.lower):
        draw.ellipse([p[0] - r, p[1] - r, p[0] + r, p[1] + r], outline=(0, 255, 0), width=2)
    for p in res.marks.positions_full:
        draw.line([p[0] - 2 * r, p[1], p[0] + 2 * r, p[1]], fill=(255, 0, 0), width=2)
    draw.line([res.loc1, res.loc10], fill=(255, 220, 0), width=1)
    base.save(path, format="PNG")


def write_trace_csv(path, res: DetectionResult) -> None:
    from .markdetect import trace_debug_rows

    rows = trace_debug_rows(res.trace)
    with open(path, "w") as fh:
        fh.write("index,y,sample,closing,tophat\n")
        for r in rows:
            fh.write(",".join(repr(v) for v in r) + "\n")
