import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from cephscale.errors import DimensionError, EmptyRegionError
from cephscale.imagecore import (RotationMap, as_gray, bilinear_sample, black_tophat, close_1d,
                                 convolve_sobel_gx, crop, gray_dilate, gray_erode,
                                 preprocess_roi, read_image, resize, resize_by, resize_to_width,
                                 rotate, scale_points, write_image)
from conftest import smooth_texture

pixels = st.floats(0, 255, allow_nan=False, width=32)
small_images = arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(3, 12)), elements=pixels)
# integer-valued pixels make every partial sum exact, so any summation order agrees bit for bit
int_images = arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(3, 12)),
                    elements=st.integers(0, 255).map(float))
signals = arrays(np.float64, st.integers(5, 40), elements=pixels)


# -- sobel ---------------------------------------------------------------------

def test_sobel_constant_is_zero():
    assert np.all(convolve_sobel_gx(np.full((6, 7), 128.0)) == 0)


def test_sobel_step_response():
    img = np.tile([0.0, 0.0, 10.0, 10.0], (5, 1))
    g = convolve_sobel_gx(img)
    assert np.all(g[:, 1] == 40) and np.all(g[:, 2] == 40)
    assert np.all(g[:, 0] == 0) and np.all(g[:, 3] == 0)


def test_sobel_too_small():
    with pytest.raises(DimensionError):
        convolve_sobel_gx(np.zeros((2, 5)))


@given(small_images)
def test_sobel_mirror_antisymmetry(img):
    assert np.allclose(convolve_sobel_gx(img[:, ::-1]), -convolve_sobel_gx(img)[:, ::-1])


@given(int_images)
def test_sobel_matches_loop_oracle(img):
    assert np.array_equal(convolve_sobel_gx(img), oracles.sobel_gx(img))


@given(small_images)
def test_sobel_matches_loop_oracle_any_float(img):
    assert np.allclose(convolve_sobel_gx(img), oracles.sobel_gx(img), rtol=1e-12, atol=1e-9)


# -- erosion -------------------------------------------------------------------

def test_erode_constant_and_isolated_peak():
    assert np.array_equal(gray_erode(np.full((5, 5), 7.0)), np.full((5, 5), 7.0))
    img = np.zeros((7, 7))
    img[3, 3] = 255
    assert np.all(gray_erode(img) == 0)


def test_erode_thins_stripe():
    img = np.zeros((9, 11))
    img[:, 4:7] = 200
    out = gray_erode(img)
    assert np.array_equal(out, oracles.erode(img))
    assert np.array_equal(np.nonzero(out[4])[0], [5])


def test_erode_rejects_even_element():
    with pytest.raises(DimensionError):
        gray_erode(np.zeros((5, 5)), (2, 3))


@given(small_images)
def test_erode_oracle_and_antiextensive(img):
    out = gray_erode(img)
    assert np.array_equal(out, oracles.erode(img))
    assert np.all(out <= img)
    assert np.all(gray_dilate(img) >= img)


# -- 1-D morphology ------------------------------------------------------------

def test_tophat_examples():
    assert np.array_equal(black_tophat([10, 10, 2, 10, 10], 3), [0, 0, 8, 0, 0])
    assert np.all(black_tophat(np.full(9, 4.0), 3) == 0)
    assert np.all(black_tophat(np.arange(12.0), 5) == 0)


def test_tophat_element_too_long():
    with pytest.raises(DimensionError):
        black_tophat([1.0, 2.0, 3.0], 5)
    with pytest.raises(DimensionError):
        close_1d([1.0, 2.0, 3.0, 4.0], 2)


@given(signals, st.sampled_from([1, 3, 5]))
def test_closing_oracle_idempotent_nonnegative(sig, length):
    c = close_1d(sig, length)
    assert np.array_equal(c, oracles.closing_1d(sig, length))
    assert np.array_equal(close_1d(c, length), c)
    assert np.all(black_tophat(sig, length) >= 0)


@given(signals, st.integers(1, 6))
def test_closing_shift_equivariant(sig, k):
    padded = np.concatenate([np.full(k, sig[0]), sig])
    assert np.array_equal(close_1d(padded, 3)[k:], close_1d(sig, 3))


# -- preprocessing ---------------------------------------------------------------

def test_preprocess_identity_and_endpoints():
    img = np.array([[0.0, 64.0], [128.0, 255.0]])
    assert np.allclose(preprocess_roi(img, 1.0), img)
    out = preprocess_roi(img, 2.0)
    assert out[0, 0] == 0 and out[1, 1] == 255
    assert out[1, 0] == pytest.approx(255 * (128 / 255) ** 2)
    assert out[1, 0] == pytest.approx(64.25, abs=0.01)


def test_preprocess_flat_and_bad_gamma():
    flat = np.full((4, 4), 9.0)
    assert np.array_equal(preprocess_roi(flat), flat)
    with pytest.raises(ValueError):
        preprocess_roi(flat, 0.0)


@given(small_images, st.floats(0.3, 3.0))
def test_preprocess_range_and_order(img, gamma):
    out = preprocess_roi(img, gamma)
    assert out.min() >= 0 and out.max() <= 255 + 1e-9
    flat_in, flat_out = img.ravel(), out.ravel()
    order = np.argsort(flat_in, kind="stable")
    assert np.all(np.diff(flat_out[order]) >= -1e-9)


# -- resampling --------------------------------------------------------------------

def test_resize_shapes():
    img = np.zeros((200, 100))
    assert resize_to_width(img, 100).shape == (200, 100)
    assert resize_to_width(img, 50).shape == (100, 50)
    assert resize_to_width(np.full((30, 40), 77.0), 97).shape[1] == 97
    assert np.allclose(resize_to_width(np.full((30, 40), 77.0), 97), 77.0)


def test_resize_identity():
    img = smooth_texture((20, 30), 1)
    assert np.array_equal(resize(img, 30, 20), img)


@given(st.integers(0, 10_000), st.sampled_from([0.25, 0.5, 1.5, 2.0]))
def test_resize_preserves_mean(seed, factor):
    img = smooth_texture((64, 48), seed)
    out = resize_by(img, factor)
    assert abs(out.mean() - img.mean()) <= 1.0


def test_scale_points_roundtrip():
    pts = np.array([[0.0, 0.0], [10.5, 3.25]])
    there = scale_points(pts, (100, 200), (50, 100))
    assert np.allclose(scale_points(there, (50, 100), (100, 200)), pts)
    assert np.allclose(scale_points([[1.5, 1.5]], (4, 4), (2, 2)), [[0.5, 0.5]])


@given(st.floats(0, 9), st.floats(0, 6))
def test_bilinear_matches_oracle(x, y):
    img = smooth_texture((7, 10), 4)
    assert bilinear_sample(img, [x], [y])[0] == pytest.approx(oracles.bilinear(img, x, y))


def test_bilinear_fill_outside():
    assert bilinear_sample(np.ones((3, 3)), [-0.5, 1.0], [1.0, 3.5], fill=-1).tolist() == [-1, -1]


# -- rotation --------------------------------------------------------------------

def test_rotate_zero_identity():
    img = smooth_texture((12, 15), 2)
    m = RotationMap(0.0, (7.0, 5.0))
    assert np.array_equal(rotate(img, m), img)
    assert np.allclose(m.forward([[3.0, 4.0]]), [[3.0, 4.0]])


@given(st.floats(-45, 45), st.floats(-50, 50), st.floats(-50, 50))
def test_rotation_map_inverse(angle, x, y):
    m = RotationMap(angle, (10.0, 20.0))
    p = np.array([x, y])
    assert np.allclose(m.backward(m.forward(p)), p, atol=1e-9)
    assert np.allclose(m.forward(m.backward(p)), p, atol=1e-9)


def test_rotate_stripe_follows_map():
    img = np.zeros((61, 61))
    img[:, 28:33] = 200.0
    m = RotationMap(12.0, (30.0, 30.0))
    rot = rotate(img, m)
    ys = np.arange(10.0, 51.0)
    pts = m.forward(np.stack([np.full_like(ys, 30.0), ys], axis=1))
    assert np.allclose(bilinear_sample(rot, pts[:, 0], pts[:, 1]), 200.0, atol=1e-6)
    off = m.forward(np.stack([np.full_like(ys, 20.0), ys], axis=1))
    assert np.allclose(bilinear_sample(rot, off[:, 0], off[:, 1]), 0.0, atol=1e-6)


@given(st.integers(0, 1000), st.floats(-20, 20))
def test_rotate_roundtrip_interior(seed, angle):
    img = smooth_texture((80, 80), seed, sigma=4.0)
    c = (39.5, 39.5)
    back = rotate(rotate(img, RotationMap(angle, c)), RotationMap(-angle, c))
    inner = slice(20, 60)
    assert np.mean(np.abs(back[inner, inner] - img[inner, inner])) <= 2.0


# -- cropping and I/O ------------------------------------------------------------

def test_crop_contract():
    img = np.arange(400.0).reshape(20, 20)
    sub, off = crop(img, (0, 0, 20, 20))
    assert np.array_equal(sub, img) and off == (0, 0)
    sub, off = crop(img, (5, 5, 10, 10))
    assert sub.shape == (10, 10) and sub[0, 0] == img[5, 5] and off == (5, 5)
    sub, off = crop(img, (15, 2, 10, 4))
    assert sub.shape == (4, 5) and off == (15, 2)
    with pytest.raises(EmptyRegionError):
        crop(img, (30, 30, 5, 5))


def test_as_gray_rejects_bad_shapes():
    with pytest.raises(DimensionError):
        as_gray(np.zeros(5))
    with pytest.raises(DimensionError):
        as_gray(np.zeros((0, 3)))


@pytest.mark.parametrize("suffix", [".png", ".pgm"])
def test_image_roundtrip(tmp_path, suffix):
    img = np.rint(smooth_texture((9, 13), 3))
    path = tmp_path / f"x{suffix}"
    write_image(path, img)
    assert np.array_equal(read_image(path), img)


def test_color_input_to_luma(tmp_path):
    from PIL import Image

    rgb = np.zeros((4, 5, 3), dtype=np.uint8)
    rgb[..., 0] = 255
    Image.fromarray(rgb, mode="RGB").save(tmp_path / "c.png")
    out = read_image(tmp_path / "c.png")
    assert out.shape == (4, 5) and np.allclose(out, 76, atol=1)
