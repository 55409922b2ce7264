"""Scale-mark tracing, major-line search, stain filtering and PMR.

All positions here live on a column of the upright (rotated) ROI. A trace
starts 10 rows below the lower corner and reads upward, so index 0 is the
bottom of the ruler.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (BoundaryError, MajorLineNotFoundError, MarkCountError, NoMarksError,
                     ScaleDetectionError, StainFilterError)
from .imagecore import RotationMap, as_gray, bilinear_sample, black_tophat, close_1d

INITIAL_OFFSET = 10
OFFSET_STEP = 3
MAX_RETRIES = 30
TRACE_SLACK = 20
MAJOR_RULE = 0.05
TH_REL = 0.3
GAP_TOLERANCE = (0.75, 1.25)


@dataclass
class TraceLine:
    off_x: float
    x: float
    y_start: float
    samples: np.ndarray
    l_g: float

    def point(self, index) -> np.ndarray:
        """Rotated-ROI (x, y) of sample ``index`` (may be fractional)."""
        idx = np.asarray(index, dtype=np.float64)
        return np.stack([np.full_like(idx, self.x), self.y_start - idx], axis=-1)


@dataclass
class MarkSet:
    positions: list
    positions_rot: list = field(default_factory=list)
    positions_roi: list = field(default_factory=list)
    positions_full: list = field(default_factory=list)


def element_length(l_g: float) -> int:
    n = max(5, int(round(0.02 * l_g)))
    return n if n % 2 else n + 1


def trace_column(rotated_roi, lower_corner, off_x: float, l_g: float) -> TraceLine:
    """Read ``round(l_g) + 20`` samples upward from 10 rows below the lower corner."""
    a = as_gray(rotated_roi)
    h, w = a.shape
    n = int(round(l_g)) + TRACE_SLACK
    x = float(lower_corner[0]) + off_x
    y_start = float(lower_corner[1]) + TRACE_SLACK / 2
    y_end = y_start - (n - 1)
    if not (0 <= x <= w - 1 and 0 <= y_end and y_start <= h - 1):
        raise BoundaryError(f"trace column x={x:.1f} rows [{y_end:.1f}, {y_start:.1f}] "
                            f"leaves the {w}x{h} ROI", stage="marks")
    ys = y_start - np.arange(n, dtype=np.float64)
    samples = bilinear_sample(a, np.full(n, x), ys)
    return TraceLine(off_x=off_x, x=x, y_start=y_start, samples=samples, l_g=float(l_g))


def local_maxima(signal, threshold: float) -> list[int]:
    """Strict interior maxima above ``threshold``; plateaus report their center."""
    s = np.asarray(signal, dtype=np.float64)
    out = []
    n = len(s)
    i = 1
    while i < n - 1:
        if s[i] > s[i - 1]:
            j = i
            while j + 1 < n and s[j + 1] == s[i]:
                j += 1
            if j + 1 < n and s[j + 1] < s[i] and s[i] > threshold:
                out.append((i + j) // 2)
            i = j + 1
        else:
            i += 1
    return out


def find_marks(trace, se_length: int | None = None, th_rel: float = TH_REL) -> list[int]:
    """Top-hat maxima of a trace above ``th_rel`` times the top-hat peak."""
    if isinstance(trace, TraceLine):
        samples, l_g = trace.samples, trace.l_g
    else:
        samples, l_g = np.asarray(trace, dtype=np.float64), None
    if se_length is None:
        se_length = element_length(l_g if l_g is not None else len(samples) - TRACE_SLACK)
    hat = black_tophat(samples, se_length)
    peak = float(hat.max())
    if peak <= 0:
        raise NoMarksError("top-hat signal is flat")
    marks = local_maxima(hat, th_rel * peak)
    if not marks:
        raise NoMarksError("no top-hat maximum above threshold")
    return marks


def is_major_only(positions, l_g: float, rule: float = MAJOR_RULE) -> bool:
    p = np.asarray(positions, dtype=np.float64)
    if len(p) < 2:
        raise ValueError("need at least two positions")
    return float(np.mean(np.diff(p))) >= rule * l_g


def scan_major_line(rotated_roi, lower_corner, l_g: float, se_length: int | None = None,
                    th_rel: float = TH_REL, max_retries: int = MAX_RETRIES):
    """Step the trace rightward until it only crosses major marks.

    Returns ``(off_x, positions, trace)``.
    """
    last = None
    for k in range(max_retries + 1):
        off_x = INITIAL_OFFSET + OFFSET_STEP * k
        try:
            trace = trace_column(rotated_roi, lower_corner, off_x, l_g)
            marks = find_marks(trace, se_length, th_rel)
        except ScaleDetectionError as exc:
            last = exc
            continue
        if len(marks) >= 2 and is_major_only(marks, l_g):
            return off_x, marks, trace
    raise MajorLineNotFoundError(
        f"no major-mark column within offset {INITIAL_OFFSET + OFFSET_STEP * max_retries}"
        + (f" (last error: {last})" if last else ""))


def _filter_pass(p: np.ndarray, tolerance) -> np.ndarray:
    gaps = np.diff(p)
    period = gaps.max()
    lo, hi = tolerance[0] * period, tolerance[1] * period
    if np.all((gaps >= lo) & (gaps <= hi)):
        return p
    n = len(p)
    # longest chain from first to last position using only in-tolerance gaps;
    # ties go to the chain whose gaps stay closest to the period
    count = np.full(n, -1)
    cost = np.full(n, np.inf)
    prev = np.full(n, -1)
    count[0], cost[0] = 1, 0.0
    for j in range(1, n):
        for i in range(j):
            if count[i] < 0:
                continue
            g = p[j] - p[i]
            if lo <= g <= hi:
                c, e = count[i] + 1, cost[i] + (g - period) ** 2
                if c > count[j] or (c == count[j] and e < cost[j]):
                    count[j], cost[j], prev[j] = c, e, i
    if count[-1] < 0:
        raise StainFilterError(f"mark intervals {gaps.tolist()} cannot be merged into a regular period")
    keep = [n - 1]
    while keep[-1] != 0:
        keep.append(prev[keep[-1]])
    return p[keep[::-1]]


def lmi_filter(positions, tolerance=GAP_TOLERANCE) -> list:
    """Delete interior positions until every interval is near the largest one.

    Each pass keeps the first and last position and the most positions whose
    consecutive gaps lie within ``tolerance`` times the current largest gap;
    passes repeat until nothing changes.
    """
    p = np.asarray(positions, dtype=np.float64)
    if len(p) < 2:
        raise ValueError("need at least two positions")
    if np.any(np.diff(p) <= 0):
        raise ValueError("positions must be strictly ascending")
    while True:
        q = _filter_pass(p, tolerance)
        if len(q) == len(p):
            break
        p = q
    if isinstance(positions, np.ndarray):
        return p
    return [int(v) if float(v).is_integer() else float(v) for v in p]


def filter_gaps(gaps, tolerance=GAP_TOLERANCE) -> list:
    """Interval-sequence form of ``lmi_filter``."""
    g = np.asarray(gaps, dtype=np.float64)
    if np.any(g <= 0):
        raise ValueError("gaps must be positive")
    kept = lmi_filter(np.concatenate([[0.0], np.cumsum(g)]), tolerance)
    return [int(v) if float(v).is_integer() else float(v) for v in np.diff(kept)]


def intervals(positions) -> list:
    return np.diff(np.asarray(positions, dtype=np.float64)).tolist()


def calibration_and_pmr(positions, trace: TraceLine, rmap: RotationMap | None = None,
                        offset=(0.0, 0.0), calibration_mm: float = 45.0,
                        expected: int = 10):
    """``(calibration_px, pmr, MarkSet)`` from filtered major-mark positions."""
    if len(positions) != expected:
        raise MarkCountError(len(positions), expected)
    calibration_px = abs(float(positions[-1]) - float(positions[0]))
    if calibration_px <= 0:
        raise MarkCountError(len(positions), expected)
    pmr = calibration_mm / calibration_px
    rot = trace.point(positions)
    roi = rmap.backward(rot) if rmap is not None else rot
    full = roi + np.asarray(offset, dtype=np.float64)[None]
    marks = MarkSet(positions=[int(p) if float(p).is_integer() else float(p) for p in positions],
                    positions_rot=[tuple(map(float, r)) for r in rot],
                    positions_roi=[tuple(map(float, r)) for r in roi],
                    positions_full=[tuple(map(float, r)) for r in full])
    return calibration_px, pmr, marks


def trace_debug_rows(trace: TraceLine, se_length: int | None = None):
    """Rows ``(index, y, sample, closing, tophat)`` for a debug CSV."""
    se = se_length or element_length(trace.l_g)
    closing = close_1d(trace.samples, se)
    hat = closing - trace.samples
    ys = trace.y_start - np.arange(len(trace.samples))
    return [(i, float(ys[i]), float(trace.samples[i]), float(closing[i]), float(hat[i]))
            for i in range(len(trace.samples))]
