"""Grayscale raster primitives.

Images are 2-D ``float64`` numpy arrays indexed ``[row, col]`` with pixel
centers at integer coordinates; a point is written ``(x, y)`` = ``(col, row)``.
Angles follow the image frame: a positive angle turns +x toward +y.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image
from scipy import sparse

from .errors import DimensionError, EmptyRegionError

SOBEL_X = np.array([[-1.0, 0.0, 1.0],
                    [-2.0, 0.0, 2.0],
                    [-1.0, 0.0, 1.0]])

STANDARD_WIDTH = 1960
DEFAULT_GAMMA = 0.75


def as_gray(image) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"expected a non-empty 2-D image, got shape {arr.shape}")
    return arr


def _require_min_size(arr: np.ndarray, rows: int, cols: int) -> None:
    if arr.shape[0] < rows or arr.shape[1] < cols:
        raise DimensionError(
            f"image {arr.shape[1]}x{arr.shape[0]} smaller than {cols}x{rows} kernel")


def convolve_sobel_gx(image) -> np.ndarray:
    """Horizontal Sobel response (cross-correlation, edge-replicated borders).

    Positive where intensity increases with x.
    """
    a = as_gray(image)
    _require_min_size(a, 3, 3)
    p = np.pad(a, 1, mode="edge")
    left = p[:-2, :-2] + 2.0 * p[1:-1, :-2] + p[2:, :-2]
    right = p[:-2, 2:] + 2.0 * p[1:-1, 2:] + p[2:, 2:]
    return right - left


def gray_erode(image, shape: tuple[int, int] = (3, 3)) -> np.ndarray:
    """Flat grayscale erosion (min filter) with edge replication."""
    a = as_gray(image)
    kh, kw = shape
    if kh % 2 == 0 or kw % 2 == 0 or kh < 1 or kw < 1:
        raise DimensionError(f"structuring element {shape} must be odd x odd")
    p = np.pad(a, ((kh // 2, kh // 2), (kw // 2, kw // 2)), mode="edge")
    return sliding_window_view(p, (kh, kw)).min(axis=(2, 3))


def gray_dilate(image, shape: tuple[int, int] = (3, 3)) -> np.ndarray:
    return -gray_erode(-as_gray(image), shape)


def _check_element(signal: np.ndarray, length: int) -> None:
    if length < 1 or length % 2 == 0:
        raise DimensionError(f"structuring element length {length} must be odd and positive")
    if length > signal.size:
        raise DimensionError(
            f"structuring element length {length} exceeds signal length {signal.size}")


def _filter_1d(signal: np.ndarray, length: int, reducer) -> np.ndarray:
    half = length // 2
    p = np.pad(signal, half, mode="edge")
    return reducer(sliding_window_view(p, length), axis=1)


def dilate_1d(signal, length: int) -> np.ndarray:
    s = np.asarray(signal, dtype=np.float64)
    _check_element(s, length)
    return _filter_1d(s, length, np.max)


def erode_1d(signal, length: int) -> np.ndarray:
    s = np.asarray(signal, dtype=np.float64)
    _check_element(s, length)
    return _filter_1d(s, length, np.min)


def close_1d(signal, length: int) -> np.ndarray:
    """Closing: max filter followed by min filter with the same flat element.

    The signal is treated as edge-extended before both passes, so a prefix of
    copies of the first sample never changes the result on the original span.
    """
    s = np.asarray(signal, dtype=np.float64)
    _check_element(s, length)
    half = length // 2
    ext = np.pad(s, 2 * half, mode="edge")
    dil = sliding_window_view(ext, length).max(axis=1)
    return sliding_window_view(dil, length).min(axis=1)


def black_tophat(signal, length: int) -> np.ndarray:
    """Closing minus input. Dark features narrower than ``length`` become peaks."""
    s = np.asarray(signal, dtype=np.float64)
    if s.ndim != 1:
        raise DimensionError("black_tophat expects a 1-D signal")
    return close_1d(s, length) - s


def preprocess_roi(image, gamma: float = DEFAULT_GAMMA) -> np.ndarray:
    """Linear contrast stretch to [0, 255] followed by gamma mapping."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    a = as_gray(image)
    lo, hi = float(a.min()), float(a.max())
    if hi <= lo:
        return a.copy()
    stretched = (a - lo) * (255.0 / (hi - lo))
    return 255.0 * np.power(np.clip(stretched / 255.0, 0.0, 1.0), gamma)


def _resample_matrix(n_in: int, n_out: int) -> sparse.csr_matrix:
    # triangle kernel; widened by the shrink factor when downsampling (antialias)
    f = n_out / n_in
    support = max(1.0, 1.0 / f)
    centers = (np.arange(n_out) + 0.5) / f - 0.5
    first = np.floor(centers - support).astype(int) + 1
    taps = int(np.ceil(2 * support)) + 1
    rows, cols, vals = [], [], []
    for k in range(taps):
        idx = first + k
        w = 1.0 - np.abs(idx - centers) / support
        keep = w > 0
        rows.append(np.nonzero(keep)[0])
        cols.append(np.clip(idx[keep], 0, n_in - 1))
        vals.append(w[keep])
    m = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_out, n_in)).tocsr()
    norm = np.asarray(m.sum(axis=1)).ravel()
    return sparse.diags(1.0 / norm) @ m


def resize(image, width: int, height: int) -> np.ndarray:
    """Bilinear resample to ``width`` x ``height`` (antialiased when shrinking)."""
    a = as_gray(image)
    if width <= 0 or height <= 0:
        raise DimensionError("target size must be positive")
    h, w = a.shape
    out = a
    if width != w:
        out = (_resample_matrix(w, width) @ out.T).T
    if height != h:
        out = _resample_matrix(h, height) @ out
    return np.ascontiguousarray(out)


def resize_to_width(image, target_width: int = STANDARD_WIDTH) -> np.ndarray:
    a = as_gray(image)
    if target_width <= 0:
        raise DimensionError("target width must be positive")
    h, w = a.shape
    height = max(1, int(round(h * target_width / w)))
    return resize(a, target_width, height)


def resize_by(image, scale: float) -> np.ndarray:
    a = as_gray(image)
    h, w = a.shape
    return resize(a, max(1, int(round(w * scale))), max(1, int(round(h * scale))))


def scale_points(points, src_shape, dst_shape) -> np.ndarray:
    """Map (x, y) points between two resamplings of the same raster."""
    pts = np.asarray(points, dtype=np.float64)
    fx = dst_shape[1] / src_shape[1]
    fy = dst_shape[0] / src_shape[0]
    out = np.empty_like(pts)
    out[..., 0] = (pts[..., 0] + 0.5) * fx - 0.5
    out[..., 1] = (pts[..., 1] + 0.5) * fy - 0.5
    return out


def bilinear_sample(image, xs, ys, fill: float = 0.0) -> np.ndarray:
    """Sample at real (x, y) positions; points outside the pixel-center hull get ``fill``."""
    a = as_gray(image)
    h, w = a.shape
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    inside = (xs >= 0) & (xs <= w - 1) & (ys >= 0) & (ys <= h - 1)
    xc = np.clip(xs, 0, w - 1)
    yc = np.clip(ys, 0, h - 1)
    x0 = np.minimum(np.floor(xc).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(yc).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = xc - x0
    ty = yc - y0
    top = a[y0, x0] * (1 - tx) + a[y0, x1] * tx
    bottom = a[y1, x0] * (1 - tx) + a[y1, x1] * tx
    out = top * (1 - ty) + bottom * ty
    return np.where(inside, out, fill)


@dataclass(frozen=True)
class RotationMap:
    """Rotation by ``angle`` degrees about ``center`` (x, y).

    ``forward`` maps source points into the rotated raster, ``backward`` undoes it.
    """

    angle: float
    center: tuple[float, float]

    def _rot(self, points, angle_deg: float) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        t = np.deg2rad(angle_deg)
        c, s = np.cos(t), np.sin(t)
        cx, cy = self.center
        dx = pts[..., 0] - cx
        dy = pts[..., 1] - cy
        return np.stack([cx + c * dx - s * dy, cy + s * dx + c * dy], axis=-1)

    def forward(self, points) -> np.ndarray:
        return self._rot(points, self.angle)

    def backward(self, points) -> np.ndarray:
        return self._rot(points, -self.angle)


def rotate(image, rmap: RotationMap) -> np.ndarray:
    """Bilinear rotation on the same canvas; uncovered pixels are 0."""
    a = as_gray(image)
    if rmap.angle == 0:
        return a.copy()
    h, w = a.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    src = rmap.backward(np.stack([xs, ys], axis=-1))
    return bilinear_sample(a, src[..., 0], src[..., 1], fill=0.0)


def crop(image, rect) -> tuple[np.ndarray, tuple[int, int]]:
    """Crop ``rect = (x, y, width, height)`` clamped to the image.

    Returns the sub-image and the (x, y) offset of its origin in ``image``.
    """
    a = as_gray(image)
    h, w = a.shape
    x, y, rw, rh = (int(round(v)) for v in rect)
    x0, y0 = max(x, 0), max(y, 0)
    x1, y1 = min(x + rw, w), min(y + rh, h)
    if x1 <= x0 or y1 <= y0:
        raise EmptyRegionError(f"crop rectangle {rect} does not intersect {w}x{h} image")
    return a[y0:y1, x0:x1].copy(), (x0, y0)


def read_image(path) -> np.ndarray:
    """Load PNG/PGM (or anything Pillow reads) as grayscale; color goes to luma."""
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            arr = np.asarray(im, dtype=np.float64)
            peak = arr.max()
            return arr * (255.0 / peak) if peak > 255 else arr
        return np.asarray(im.convert("L"), dtype=np.float64)


def to_uint8(image) -> np.ndarray:
    return np.clip(np.rint(as_gray(image)), 0, 255).astype(np.uint8)


def write_image(path, image) -> None:
    """Write 8-bit grayscale; ``.pgm`` gives binary P5, anything else PNG."""
    path = Path(path)
    data = to_uint8(image)
    if path.suffix.lower() == ".pgm":
        h, w = data.shape
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(data.tobytes())
    else:
        Image.fromarray(data, mode="L").save(path, format="PNG")
