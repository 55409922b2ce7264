"""Left-edge localization of the ruler inside the ROI.

Erode, take the horizontal Sobel response, lower a binarization threshold
until some connected component is tall enough relative to the coarse corner
distance, then pick the leftmost strong near-vertical Hough line.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import EdgeNotFoundError
from .imagecore import as_gray, convolve_sobel_gx, gray_erode

THRESHOLD_DECAY = 0.8
THRESHOLD_FLOOR = 2.0
LENGTH_RULE = 0.6
_EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class HoughLine:
    """``r = x cos(theta) + y sin(theta)``; theta in degrees, 0 is a vertical line."""

    r: float
    theta: float
    votes: int = 0

    def x_at(self, y) -> np.ndarray:
        t = np.deg2rad(self.theta)
        return (self.r - np.asarray(y, dtype=np.float64) * np.sin(t)) / np.cos(t)

    def residual(self, xs, ys) -> np.ndarray:
        t = np.deg2rad(self.theta)
        return np.abs(np.asarray(xs) * np.cos(t) + np.asarray(ys) * np.sin(t) - self.r)


@dataclass
class EdgeResult:
    line: HoughLine
    incline: float
    threshold_used: float
    longest_extent: float
    debug: dict = field(default_factory=dict, repr=False)


def longest_extent(binary) -> int:
    """Tallest bounding box (rows) among 8-connected components."""
    b = np.asarray(binary, dtype=bool)
    labels, n = ndimage.label(b, structure=_EIGHT)
    if n == 0:
        return 0
    return max(sl[0].stop - sl[0].start for sl in ndimage.find_objects(labels))


def adaptive_binarize(grad, l_p: float, decay: float = THRESHOLD_DECAY,
                      floor: float = THRESHOLD_FLOOR, rule: float = LENGTH_RULE):
    """Lower the threshold until the tallest component exceeds ``rule * l_p``.

    Returns ``(binary, threshold, extent)``.
    """
    if l_p <= 0:
        raise ValueError("l_p must be positive")
    g = as_gray(grad)
    th = 0.5 * float(g.max())
    while th >= floor:
        binary = g > th
        extent = longest_extent(binary)
        if extent > rule * l_p:
            return binary, th, extent
        th *= decay
    raise EdgeNotFoundError(
        f"no component taller than {rule * l_p:.1f} px before threshold fell below {floor}")


def hough_accumulator(binary, theta_window: float = 10.0, theta_step: float = 0.25):
    """Vote every set pixel into (theta, r) bins. Returns (acc, thetas_deg, r_offset)."""
    b = np.asarray(binary, dtype=bool)
    h, w = b.shape
    n_theta = int(round(2 * theta_window / theta_step)) + 1
    thetas = -theta_window + theta_step * np.arange(n_theta)
    diag = int(np.ceil(np.hypot(h, w))) + 1
    n_r = 2 * diag + 1
    acc = np.zeros((n_theta, n_r), dtype=np.int64)
    ys, xs = np.nonzero(b)
    if len(xs) == 0:
        return acc, thetas, diag
    t = np.deg2rad(thetas)
    r = xs[:, None] * np.cos(t)[None] + ys[:, None] * np.sin(t)[None]
    ri = np.rint(r).astype(np.int64) + diag
    flat = np.arange(n_theta)[None] * n_r + ri
    acc += np.bincount(flat.ravel(), minlength=n_theta * n_r).reshape(n_theta, n_r)
    return acc, thetas, diag


def hough_lines(binary, theta_window: float = 10.0, top_k: int = 5,
                theta_step: float = 0.25, refine: bool = True) -> list[HoughLine]:
    """Strongest local maxima of the accumulator, sorted by votes.

    With ``refine`` each peak is re-fit by least squares to the pixels within
    1.5 px of the binned line.
    """
    b = np.asarray(binary, dtype=bool)
    acc, thetas, off = hough_accumulator(b, theta_window, theta_step)
    if acc.max() == 0:
        return []
    peaks = (acc == ndimage.maximum_filter(acc, size=3, mode="constant")) & (acc > 0)
    ti, ri = np.nonzero(peaks)
    votes = acc[ti, ri]
    order = np.lexsort((ri, ti, -votes))
    chosen: list[tuple[int, int]] = []
    for k in order:
        if any(abs(ti[k] - a) <= 1 and abs(ri[k] - c) <= 1 for a, c in chosen):
            continue
        chosen.append((ti[k], ri[k]))
        if len(chosen) == top_k:
            break
    ys, xs = np.nonzero(b)
    lines = []
    for a, c in chosen:
        line = HoughLine(r=float(c - off), theta=float(thetas[a]), votes=int(acc[a, c]))
        if refine:
            line = _refit(line, xs, ys, theta_window)
        lines.append(line)
    return lines


def _refit(line: HoughLine, xs, ys, theta_window: float) -> HoughLine:
    near = line.residual(xs, ys) <= 1.5
    if near.sum() < 3 or np.ptp(ys[near]) < 2:
        return line
    slope, intercept = np.polyfit(ys[near].astype(float), xs[near].astype(float), 1)
    theta = -np.degrees(np.arctan(slope))
    if abs(theta) > theta_window + 0.5:
        return line
    t = np.deg2rad(theta)
    return HoughLine(r=float(intercept * np.cos(t)), theta=float(theta), votes=line.votes)


def select_scale_edge(lines, midline_y: float = 0.0, vote_ratio: float = 0.5) -> HoughLine:
    """Leftmost line at ``midline_y`` among those with at least ``vote_ratio`` of the best votes."""
    if not lines:
        raise EdgeNotFoundError("no Hough lines to choose from")
    best = max(l.votes for l in lines)
    strong = [l for l in lines if l.votes >= vote_ratio * best]
    return min(strong, key=lambda l: (float(l.x_at(midline_y)), -l.votes))


def detect_edge(roi, l_p: float, theta_window: float = 10.0, top_k: int = 10,
                vote_ratio: float = 0.5, erode_shape=(3, 3), keep_debug: bool = False) -> EdgeResult:
    a = as_gray(roi)
    grad = convolve_sobel_gx(gray_erode(a, erode_shape))
    binary, th, extent = adaptive_binarize(grad, l_p)
    lines = hough_lines(binary, theta_window, top_k)
    if not lines:
        raise EdgeNotFoundError("Hough transform found no line")
    line = select_scale_edge(lines, midline_y=(a.shape[0] - 1) / 2, vote_ratio=vote_ratio)
    debug = {}
    if keep_debug:
        debug = {"binary": binary, "accumulator": hough_accumulator(binary, theta_window)[0],
                 "lines": lines}
    return EdgeResult(line=line, incline=line.theta, threshold_used=th,
                      longest_extent=float(extent), debug=debug)
