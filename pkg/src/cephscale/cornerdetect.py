"""Corner refinement by descriptor matching along the detected edge.

Test patches point straight down the (de-rotated) ruler edge and take their
half-width from the coarse corner distance scaled by the reference ruler's
width-to-length ratio, so they cover the same physical area as the
reference patches.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .descriptor import describe_patch, describe_patches, footprint_radius, PatchSpec
from .edgedetect import EdgeResult
from .errors import BoundaryError, ImplausibleCornersError
from .imagecore import DEFAULT_GAMMA, RotationMap, as_gray, preprocess_roi, read_image, rotate

DOWNWARD = 90.0
MIN_WIDTH = 4
REFERENCE_KEYS = ("upper_x", "upper_y", "lower_x", "lower_y", "scale_width_px")


@dataclass
class ReferenceModel:
    v_upper: np.ndarray
    v_lower: np.ndarray
    w_ref: float
    l_ref: float

    def __post_init__(self):
        if self.w_ref <= 0 or self.l_ref <= self.w_ref:
            raise ValueError(f"implausible reference geometry w={self.w_ref} l={self.l_ref}")


@dataclass
class CornerResult:
    upper: tuple[float, float]          # rotated-ROI coordinates
    lower: tuple[float, float]
    upper_roi: tuple[float, float]      # unrotated ROI coordinates
    lower_roi: tuple[float, float]
    l_g: float
    w_test: int
    distance_maps: dict = field(default_factory=dict, repr=False)
    rotated_roi: np.ndarray | None = field(default=None, repr=False)


def build_reference(roi, upper, lower, scale_width: float) -> ReferenceModel:
    """Reference descriptors at two annotated corners of an upright ruler ROI."""
    a = as_gray(roi)
    w = max(MIN_WIDTH, int(round(scale_width)))
    v_u = describe_patch(a, PatchSpec(tuple(upper), w, DOWNWARD))
    v_l = describe_patch(a, PatchSpec(tuple(lower), w, DOWNWARD))
    l_ref = float(np.hypot(lower[0] - upper[0], lower[1] - upper[1]))
    return ReferenceModel(v_upper=v_u, v_lower=v_l, w_ref=float(scale_width), l_ref=l_ref)


def estimate_patch_width(l_p: float, ref: ReferenceModel) -> int:
    if l_p <= 0:
        raise ValueError("l_p must be positive")
    return max(MIN_WIDTH, int(round(l_p * ref.w_ref / ref.l_ref)))


def find_corner(rotated_roi, edge_x: float, y_range, v_ref, w: int,
                strip_halfwidth: int | None = None):
    """Exhaustive strip search for the position whose descriptor best matches ``v_ref``.

    Returns ``((x, y), distance_map, (x0, y0))`` where the map's [0, 0] entry is
    position ``(x0, y0)``. Ties go to the smallest y, then the smallest x.
    """
    a = as_gray(rotated_roi)
    hw = w if strip_halfwidth is None else int(strip_halfwidth)
    cx = int(round(edge_x))
    xs = np.arange(cx - hw, cx + hw + 1)
    y0, y1 = int(np.ceil(y_range[0])), int(np.floor(y_range[1]))
    ys = np.arange(y0, y1 + 1)
    if len(ys) == 0 or len(xs) == 0:
        raise BoundaryError("empty corner search strip", stage="corner")
    gx, gy = np.meshgrid(xs, ys)
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)
    try:
        desc = describe_patches(a, centers, w, DOWNWARD)
    except BoundaryError as exc:
        raise BoundaryError(f"corner strip leaves the ROI: {exc}", stage="corner") from exc
    diff = desc - np.asarray(v_ref)[None]
    dmap = np.einsum("ij,ij->i", diff, diff).reshape(len(ys), len(xs))
    k = int(np.argmin(dmap))
    iy, ix = divmod(k, len(xs))
    return (float(xs[ix]), float(ys[iy])), dmap, (int(xs[0]), int(ys[0]))


def _clip_range(lo, hi, bound_lo, bound_hi):
    return max(lo, bound_lo), min(hi, bound_hi)


def detect_corners(roi, edge: EdgeResult, coarse_upper, coarse_lower, ref: ReferenceModel,
                   y_fraction: float = 0.2):
    """Rotate the ROI upright, then search strips along the edge near each coarse corner.

    Coarse corners are in ROI coordinates. Returns ``(CornerResult, RotationMap)``.
    """
    a = as_gray(roi)
    h, w_img = a.shape
    center = ((w_img - 1) / 2.0, (h - 1) / 2.0)
    rmap = RotationMap(-edge.incline, center)
    rotated = rotate(a, rmap)

    cu = np.asarray(coarse_upper, dtype=np.float64)
    cl = np.asarray(coarse_lower, dtype=np.float64)
    l_p = float(np.hypot(*(cl - cu)))
    if l_p <= 0:
        raise ImplausibleCornersError("coarse corners coincide")
    w = estimate_patch_width(l_p, ref)
    edge_pt = rmap.forward([edge.line.x_at(center[1]), center[1]])
    edge_x = float(edge_pt[0])
    mu, ml = rmap.forward(cu), rmap.forward(cl)

    reach = footprint_radius(w, DOWNWARD) + 1e-6
    x_lo, x_hi = np.ceil(reach), np.floor(w_img - 1 - reach)
    y_lo_b, y_hi_b = np.ceil(reach), np.floor(h - 1 - reach)
    hw_left = int(min(w, round(edge_x) - x_lo))
    hw_right = int(min(w, x_hi - round(edge_x)))
    hw = min(hw_left, hw_right)
    if hw < 0:
        raise BoundaryError("edge too close to the ROI border for corner search", stage="corner")
    half = 0.5 * y_fraction * l_p
    found = []
    maps = {}
    for name, m, v_ref in (("upper", mu, ref.v_upper), ("lower", ml, ref.v_lower)):
        lo, hi = _clip_range(m[1] - half, m[1] + half, y_lo_b, y_hi_b)
        if hi < lo:
            raise BoundaryError(f"{name} corner search range leaves the ROI", stage="corner")
        pos, dmap, origin = find_corner(rotated, edge_x, (lo, hi), v_ref, w, strip_halfwidth=hw)
        found.append(pos)
        maps[name] = (dmap, origin)

    upper, lower = found
    l_g = float(np.hypot(lower[0] - upper[0], lower[1] - upper[1]))
    if l_g <= 0.5 * l_p or lower[1] <= upper[1]:
        raise ImplausibleCornersError(
            f"refined corner distance {l_g:.1f} px implausible for coarse distance {l_p:.1f} px")
    back = rmap.backward(np.array([upper, lower]))
    result = CornerResult(upper=upper, lower=lower,
                          upper_roi=tuple(map(float, back[0])), lower_roi=tuple(map(float, back[1])),
                          l_g=l_g, w_test=w, distance_maps=maps, rotated_roi=rotated)
    return result, rmap


# -- reference data -----------------------------------------------------------

def read_reference_annotation(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        values[key] = float(val)
    missing = [k for k in REFERENCE_KEYS if k not in values]
    if missing:
        raise ValueError(f"{path}: missing keys {missing}")
    return values


def write_reference_annotation(path, upper, lower, scale_width: float) -> None:
    vals = dict(zip(REFERENCE_KEYS, (*upper, *lower, scale_width)))
    Path(path).write_text("".join(f"{k} = {float(v)!r}\n" for k, v in vals.items()))


def load_reference(image_path, annotation_path, gamma: float = DEFAULT_GAMMA) -> ReferenceModel:
    ann = read_reference_annotation(annotation_path)
    roi = preprocess_roi(read_image(image_path), gamma)
    return build_reference(roi, (ann["upper_x"], ann["upper_y"]), (ann["lower_x"], ann["lower_y"]),
                           ann["scale_width_px"])


def default_reference(gamma: float = DEFAULT_GAMMA) -> ReferenceModel:
    """Reference shipped with the package (a synthetic upright ruler ROI)."""
    data = resources.files("cephscale") / "data"
    with resources.as_file(data / "reference.png") as img, \
            resources.as_file(data / "reference.txt") as ann:
        return load_reference(img, ann, gamma)
