"""128-D gradient-histogram descriptor of a patch with caller-assigned size and orientation.

A patch is centered at ``(x, y)``, spans ``2W+1`` pixels and has a principal
direction ``orientation`` (degrees, image frame). It is resampled onto a
16x16 canonical grid whose first axis follows the orientation, so gradient
angles come out relative to it without any extra bookkeeping.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import BoundaryError, DimensionError
from .imagecore import as_gray, bilinear_sample

GRID = 16
CELLS = 4
BINS = 8
DIM = CELLS * CELLS * BINS
CLAMP = 0.2
MIN_HALF_WIDTH = 4
_CHUNK = 2048


@dataclass(frozen=True)
class PatchSpec:
    center: tuple[float, float]
    half_width: int
    orientation: float = 0.0


def grid_spacing(half_width: float) -> float:
    return (2 * half_width + 1) / GRID


def footprint_radius(half_width: float, orientation: float = 0.0) -> float:
    """Largest |dx| (== |dy|) reached by any sample of the extended grid."""
    reach = (GRID / 2 + 0.5) * grid_spacing(half_width)
    t = np.deg2rad(orientation)
    return reach * (abs(np.cos(t)) + abs(np.sin(t)))


def _grid_offsets(half_width: float, orientation: float):
    s = grid_spacing(half_width)
    k = np.arange(-1, GRID + 1, dtype=np.float64)
    u = (k - (GRID - 1) / 2) * s
    uu, vv = np.meshgrid(u, u)           # rows follow v, columns follow u
    t = np.deg2rad(orientation)
    c, sn = np.cos(t), np.sin(t)
    return uu * c - vv * sn, uu * sn + vv * c


def _cell_weights():
    # per-sample bilinear weights into the 4x4 cell lattice, as (index, weight) pairs
    k = np.arange(GRID)
    pos = (k + 0.5) / (GRID / CELLS) - 0.5
    lo = np.floor(pos).astype(int)
    frac = pos - lo
    return lo, frac


_CELL_LO, _CELL_FRAC = _cell_weights()
_CENTER = (GRID - 1) / 2


def describe_patches(image, centers, half_width: int, orientation: float = 0.0) -> np.ndarray:
    """Descriptors for many centers sharing one size and orientation -> (N, 128)."""
    a = as_gray(image)
    if half_width < MIN_HALF_WIDTH:
        raise DimensionError(f"half width {half_width} below minimum {MIN_HALF_WIDTH}")
    pts = np.asarray(centers, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        return np.zeros((0, DIM))
    h, w = a.shape
    ox, oy = _grid_offsets(half_width, orientation)
    pad_x, pad_y = np.abs(ox).max(), np.abs(oy).max()
    xmin, xmax = pts[:, 0].min() - pad_x, pts[:, 0].max() + pad_x
    ymin, ymax = pts[:, 1].min() - pad_y, pts[:, 1].max() + pad_y
    eps = 1e-9
    if xmin < -eps or ymin < -eps or xmax > w - 1 + eps or ymax > h - 1 + eps:
        raise BoundaryError(
            f"patch footprint x[{xmin:.1f},{xmax:.1f}] y[{ymin:.1f},{ymax:.1f}] "
            f"leaves {w}x{h} image")

    # smooth at the grid's own scale inside a local window
    sigma = 0.5 * grid_spacing(half_width)
    margin = int(np.ceil(4 * sigma)) + 2
    x0 = max(int(np.floor(xmin)) - margin, 0)
    y0 = max(int(np.floor(ymin)) - margin, 0)
    x1 = min(int(np.ceil(xmax)) + margin + 1, w)
    y1 = min(int(np.ceil(ymax)) + margin + 1, h)
    window = a[y0:y1, x0:x1]
    if sigma >= 0.3:
        window = gaussian_filter(window, sigma, mode="nearest")

    out = np.empty((len(pts), DIM))
    for start in range(0, len(pts), _CHUNK):
        chunk = pts[start:start + _CHUNK]
        xs = chunk[:, 0, None, None] + ox[None] - x0
        ys = chunk[:, 1, None, None] + oy[None] - y0
        samples = bilinear_sample(window, xs, ys, fill=0.0)
        out[start:start + len(chunk)] = _histograms(samples, half_width)
    return out


def _histograms(samples: np.ndarray, half_width: float) -> np.ndarray:
    n = samples.shape[0]
    gu = 0.5 * (samples[:, 1:-1, 2:] - samples[:, 1:-1, :-2])
    gv = 0.5 * (samples[:, 2:, 1:-1] - samples[:, :-2, 1:-1])
    mag = np.hypot(gu, gv)
    ang = np.mod(np.arctan2(gv, gu), 2 * np.pi) * (BINS / (2 * np.pi))

    s = grid_spacing(half_width)
    k = (np.arange(GRID) - _CENTER) * s
    weight = np.exp(-(k[:, None] ** 2 + k[None, :] ** 2) / (2.0 * half_width ** 2))
    mag = mag * weight[None]

    b0 = np.floor(ang).astype(np.intp)
    bf = ang - b0
    b0 %= BINS
    b1 = (b0 + 1) % BINS

    r_lo, r_fr = _CELL_LO[:, None], _CELL_FRAC[:, None]    # rows of the grid
    c_lo, c_fr = _CELL_LO[None, :], _CELL_FRAC[None, :]    # columns of the grid
    base = (np.arange(n) * DIM)[:, None, None]
    hist = np.zeros(n * DIM)
    for dr, wr in ((0, 1 - r_fr), (1, r_fr)):
        rr = r_lo + dr
        rok = (rr >= 0) & (rr < CELLS)
        for dc, wc in ((0, 1 - c_fr), (1, c_fr)):
            cc = c_lo + dc
            ok = rok & (cc >= 0) & (cc < CELLS)
            cell = np.where(ok, rr * CELLS + cc, 0)
            wcell = np.where(ok, wr * wc, 0.0)
            for bins, wb in ((b0, 1 - bf), (b1, bf)):
                idx = base + cell[None] * BINS + bins
                hist += np.bincount(idx.ravel(), weights=(mag * wcell[None] * wb).ravel(),
                                    minlength=n * DIM)
    return _normalize(hist.reshape(n, DIM))


def _normalize(hist: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(hist, axis=1, keepdims=True)
    flat = norm[:, 0] <= 1e-8
    v = hist / np.where(flat[:, None], 1.0, norm)
    v = np.minimum(v, CLAMP)
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    v = v / np.where(flat[:, None], 1.0, norm)
    v[flat] = 0.0
    return v


def describe_patch(image, spec: PatchSpec) -> np.ndarray:
    return describe_patches(image, [spec.center], spec.half_width, spec.orientation)[0]


def descriptor_distance(a, b) -> float:
    """Squared Euclidean distance."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != (DIM,) or b.shape != (DIM,):
        raise DimensionError(f"descriptors must have length {DIM}, got {a.shape} and {b.shape}")
    d = a - b
    return float(d @ d)
