"""Raster I/O, bilinear resizing and flip augmentation.

Images are float32 numpy arrays laid out channel-planar as ``(C, H, W)``
with samples in [0, 1]. Depth maps and other single-plane rasters are
``(H, W)``.
"""

from __future__ import annotations

import os
from pathlib import Path

import cv2
import numpy as np

__all__ = [
    "ImageError",
    "ImageReadError",
    "UnsupportedFormatError",
    "as_image",
    "load_image",
    "load_plane",
    "save_image",
    "save_plane16",
    "resize_bilinear",
    "flip",
]


class ImageError(Exception):
    """Base class for raster I/O failures."""


class ImageReadError(ImageError):
    """The file is missing, truncated or not decodable."""


class UnsupportedFormatError(ImageError):
    """The file decodes but uses a format or bit depth we do not accept."""


def as_image(data, name: str = "image") -> np.ndarray:
    """Validate and coerce ``data`` to a ``(C, H, W)`` float array.

    A 2-D input is promoted to a single channel. float64 input is kept as
    float64 so the gradient checker can run a 64-bit shadow path.
    """
    arr = np.asarray(data)
    if arr.dtype != np.float64:
        arr = arr.astype(np.float32, copy=False)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[0] not in (1, 3):
        raise ValueError(f"{name}: expected (C, H, W) with C in (1, 3), got {arr.shape}")
    if arr.shape[1] < 1 or arr.shape[2] < 1:
        raise ValueError(f"{name}: empty raster {arr.shape}")
    return arr


def _read_pnm(path: Path) -> tuple[np.ndarray, int]:
    raw = path.read_bytes()
    if raw[:2] not in (b"P5", b"P6"):
        raise UnsupportedFormatError(f"{path}: only binary PGM (P5) / PPM (P6) are supported")
    channels = 1 if raw[:2] == b"P5" else 3
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        # skip whitespace and comments between header tokens
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            raise ImageReadError(f"{path}: malformed PNM header")
        fields.append(int(raw[start:pos]))
    pos += 1  # single whitespace byte after maxval
    width, height, maxval = fields
    if not 0 < maxval < 65536:
        raise UnsupportedFormatError(f"{path}: PNM maxval {maxval} out of range")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = width * height * channels
    if len(raw) - pos < count * dtype.itemsize:
        raise ImageReadError(f"{path}: truncated PNM data")
    body = np.frombuffer(raw, dtype=dtype, count=count, offset=pos)
    return body.reshape(height, width, channels), maxval


def _read_raw(path) -> tuple[np.ndarray, int]:
    """Return (H, W, C) integer samples in RGB order and the format max value."""
    path = Path(path)
    if not path.is_file():
        raise ImageReadError(f"{path}: no such file")
    with open(path, "rb") as fh:
        magic = fh.read(8)
    if magic[:2] in (b"P5", b"P6"):
        return _read_pnm(path)
    if magic != b"\x89PNG\r\n\x1a\n":
        raise UnsupportedFormatError(f"{path}: not a PNG or binary PGM/PPM file")
    data = cv2.imread(os.fspath(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ImageReadError(f"{path}: could not decode PNG")
    if data.dtype == np.uint8:
        maxval = 255
    elif data.dtype == np.uint16:
        maxval = 65535
    else:
        raise UnsupportedFormatError(f"{path}: unsupported sample type {data.dtype}")
    if data.ndim == 2:
        data = data[:, :, None]
    elif data.shape[2] == 4:
        data = data[:, :, 2::-1]  # BGRA -> RGB, alpha dropped
    elif data.shape[2] == 3:
        data = data[:, :, ::-1]
    else:
        raise UnsupportedFormatError(f"{path}: {data.shape[2]}-channel PNG not supported")
    return data, maxval


def load_image(path) -> np.ndarray:
    """Load an 8/16-bit PNG or binary PGM/PPM as a float32 ``(C, H, W)`` image."""
    data, maxval = _read_raw(path)
    img = data.astype(np.float32) / np.float32(maxval)
    return np.ascontiguousarray(img.transpose(2, 0, 1))


def load_plane(path) -> np.ndarray:
    """Load a single-channel raster (depth or saliency map) as ``(H, W)``.

    Colour files are reduced to their channel mean.
    """
    img = load_image(path)
    if img.shape[0] == 1:
        return img[0]
    return img.mean(axis=0, dtype=np.float64).astype(np.float32)


def _quantize(values: np.ndarray, maxval: int, dtype) -> np.ndarray:
    # round-half-up; np.rint would round half to even
    q = np.floor(np.asarray(values, dtype=np.float64) * maxval + 0.5)
    return np.clip(q, 0, maxval).astype(dtype)


def _write_png(path, data: np.ndarray) -> None:
    path = Path(path)
    if path.parent and not path.parent.is_dir():
        raise OSError(f"{path.parent}: directory does not exist")
    if data.ndim == 3 and data.shape[2] == 3:
        data = data[:, :, ::-1]
    ok = cv2.imwrite(os.fspath(path), np.ascontiguousarray(data))
    if not ok:
        raise OSError(f"{path}: could not write PNG")


def save_image(img, path) -> None:
    """Write ``img`` as an 8-bit PNG using round(sample * 255), clamped."""
    img = as_image(img)
    data = _quantize(img.transpose(1, 2, 0), 255, np.uint8)
    if data.shape[2] == 1:
        data = data[:, :, 0]
    _write_png(path, data)


def save_plane16(plane, path) -> None:
    """Write a single ``(H, W)`` plane as a 16-bit grayscale PNG."""
    plane = np.asarray(plane)
    if plane.ndim != 2:
        raise ValueError(f"expected a 2-D plane, got {plane.shape}")
    _write_png(path, _quantize(plane, 65535, np.uint16))


def _axis_taps(n_src: int, n_dst: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    scale = n_src / n_dst
    coord = (np.arange(n_dst, dtype=np.float64) + 0.5) * scale - 0.5
    coord = np.clip(coord, 0.0, n_src - 1)
    lo = np.floor(coord).astype(np.intp)
    hi = np.minimum(lo + 1, n_src - 1)
    frac = coord - lo
    return lo, hi, frac


def resize_bilinear(img, new_w: int, new_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel centers and edge clamping.

    Accepts ``(C, H, W)`` or ``(H, W)`` input and returns the same rank.
    Resizing to the current size returns an identical copy.
    """
    if new_w < 1 or new_h < 1:
        raise ValueError(f"target size must be positive, got {new_w}x{new_h}")
    arr = np.asarray(img)
    planar = arr.ndim == 2
    if planar:
        arr = arr[None]
    _, h, w = arr.shape
    if (h, w) == (new_h, new_w):
        out = arr.copy()
        return out[0] if planar else out

    dtype = arr.dtype if arr.dtype == np.float64 else np.float32
    src = arr.astype(np.float64)
    lo, hi, fy = _axis_taps(h, new_h)
    rows = src[:, lo, :] * (1.0 - fy)[None, :, None] + src[:, hi, :] * fy[None, :, None]
    lo, hi, fx = _axis_taps(w, new_w)
    out = rows[:, :, lo] * (1.0 - fx) + rows[:, :, hi] * fx
    out = out.astype(dtype)
    return out[0] if planar else out


def flip(img, axis: str) -> np.ndarray:
    """Mirror a raster; ``axis`` is ``"horizontal"`` (left-right) or ``"vertical"``."""
    arr = np.asarray(img)
    if axis in ("horizontal", "h"):
        return np.ascontiguousarray(arr[..., ::-1])
    if axis in ("vertical", "v"):
        return np.ascontiguousarray(arr[..., ::-1, :])
    raise ValueError(f"unknown flip axis {axis!r}")
