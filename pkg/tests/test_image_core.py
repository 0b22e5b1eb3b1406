import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bokeh_blend.image_core import (
    ImageReadError,
    UnsupportedFormatError,
    as_image,
    flip,
    load_image,
    load_plane,
    resize_bilinear,
    save_image,
    save_plane16,
)


def _write_pnm(path, magic, arr, maxval):
    h, w = arr.shape[:2]
    dtype = ">u2" if maxval > 255 else "u1"
    path.write_bytes(f"{magic}\n# comment\n{w} {h}\n{maxval}\n".encode() + arr.astype(dtype).tobytes())


def test_png8_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    codes = rng.integers(0, 256, size=(3, 5, 7))
    img = (codes / 255).astype(np.float32)
    save_image(img, tmp_path / "a.png")
    back = load_image(tmp_path / "a.png")
    assert back.shape == (3, 5, 7) and back.dtype == np.float32
    np.testing.assert_array_equal(np.round(back * 255), codes)


def test_png16_plane_roundtrip(tmp_path):
    plane = np.linspace(0, 1, 12, dtype=np.float32).reshape(3, 4)
    save_plane16(plane, tmp_path / "d.png")
    back = load_plane(tmp_path / "d.png")
    assert np.max(np.abs(back - plane)) <= 0.5 / 65535 + 1e-7


def test_pnm_maxval_scaling(tmp_path):
    gray = np.array([[0, 500], [1000, 250]])
    _write_pnm(tmp_path / "g.pgm", "P5", gray, 1000)
    np.testing.assert_allclose(load_plane(tmp_path / "g.pgm"), gray / 1000, atol=1e-7)

    rgb = np.arange(2 * 3 * 3).reshape(2, 3, 3) * 10
    _write_pnm(tmp_path / "c.ppm", "P6", rgb, 255)
    img = load_image(tmp_path / "c.ppm")
    np.testing.assert_allclose(img, np.moveaxis(rgb, -1, 0) / 255, atol=1e-7)


def test_load_plane_averages_colour(tmp_path):
    img = np.stack([np.full((2, 2), v) for v in (0.2, 0.4, 0.6)]).astype(np.float32)
    save_image(img, tmp_path / "c.png")
    np.testing.assert_allclose(load_plane(tmp_path / "c.png"), 0.4, atol=1 / 255)


def test_read_errors(tmp_path):
    with pytest.raises(ImageReadError):
        load_image(tmp_path / "missing.png")
    (tmp_path / "x.txt").write_text("hello")
    with pytest.raises((UnsupportedFormatError, ImageReadError)):
        load_image(tmp_path / "x.txt")


def test_as_image_rejects_bad_shapes():
    with pytest.raises(ValueError):
        as_image(np.zeros((2, 4, 4)))
    assert as_image(np.zeros((4, 4))).shape == (1, 4, 4)


def test_resize_identity_and_constant():
    rng = np.random.default_rng(1)
    img = rng.random((3, 6, 9)).astype(np.float32)
    np.testing.assert_array_equal(resize_bilinear(img, 9, 6), img)
    const = np.full((3, 5, 5), 0.3, dtype=np.float32)
    np.testing.assert_allclose(resize_bilinear(const, 11, 7), 0.3, atol=1e-7)


def test_resize_matches_half_pixel_oracle():
    src = np.arange(4, dtype=np.float64).reshape(1, 1, 4)
    out = resize_bilinear(src, 8, 1)
    # half-pixel centers: dst x maps to (x + 0.5) / 2 - 0.5, clamped at the edges
    xs = np.clip((np.arange(8) + 0.5) / 2 - 0.5, 0, 3)
    np.testing.assert_allclose(out[0, 0], xs)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from(["h", "v"]))
def test_flip_is_involution(h, w, axis):
    img = np.random.default_rng(h * 7 + w).random((3, h, w)).astype(np.float32)
    np.testing.assert_array_equal(flip(flip(img, axis), axis), img)
    expected = img[:, :, ::-1] if axis == "h" else img[:, ::-1, :]
    np.testing.assert_array_equal(flip(img, axis), expected)
