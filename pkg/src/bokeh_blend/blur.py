"""Separable Gaussian smoothing used to build the blur stack."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numba
import numpy as np
from numba import njit, prange

from .image_core import as_image

# TBB shipped in this environment is too old; probing it only emits a warning.
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

__all__ = [
    "GaussianKernel1D",
    "make_gaussian_kernel",
    "kernel_sigma",
    "gaussian_blur",
    "blur_stack",
    "max_threads",
]


@dataclass(frozen=True)
class GaussianKernel1D:
    size: int
    sigma: float
    taps: np.ndarray  # float64, length ``size``

    @property
    def radius(self) -> int:
        return self.size // 2


def kernel_sigma(size: int) -> float:
    """Sigma used for a ``size``-tap kernel (the usual OpenCV size rule)."""
    return 0.3 * ((size - 1) * 0.5 - 1.0) + 0.8


def make_gaussian_kernel(size: int) -> GaussianKernel1D:
    if not isinstance(size, (int, np.integer)) or size < 1 or size % 2 == 0:
        raise ValueError(f"kernel size must be a positive odd integer, got {size!r}")
    size = int(size)
    sigma = kernel_sigma(size)
    d = np.arange(size, dtype=np.float64) - size // 2
    taps = np.exp(-(d * d) / (2.0 * sigma * sigma))
    taps /= taps.sum()
    return GaussianKernel1D(size=size, sigma=sigma, taps=taps)


def max_threads() -> int:
    return numba.config.NUMBA_NUM_THREADS


def _mirror_index(n: int, radius: int) -> np.ndarray:
    """Source index for positions -radius .. n-1+radius, reflect-101 extension."""
    pos = np.arange(-radius, n + radius)
    if n == 1:
        return np.zeros_like(pos)
    period = 2 * (n - 1)
    m = np.abs(pos) % period
    return np.where(m >= n, period - m, m)


# Both passes accumulate tap-pair differences against the center sample, so a
# constant signal produces an exactly zero correction.
@njit(parallel=True, cache=True)
def _pass_rows(src, half, idx, out):
    h, w = src.shape
    r = half.shape[0] - 1
    for i in prange(h):
        row = src[i]
        buf = np.empty(w + 2 * r, dtype=src.dtype)
        for j in range(w + 2 * r):
            buf[j] = row[idx[j]]
        acc = np.zeros(w, dtype=src.dtype)
        for t in range(1, r + 1):
            wt = half[t]
            right = buf[r + t : r + t + w]
            left = buf[r - t : r - t + w]
            for j in range(w):
                c = row[j]
                acc[j] += wt * ((right[j] - c) + (left[j] - c))
        for j in range(w):
            out[i, j] = row[j] + acc[j]


@njit(parallel=True, cache=True)
def _pass_cols(src, half, idx, out):
    h, w = src.shape
    r = half.shape[0] - 1
    for i in prange(h):
        center = src[i]
        acc = np.zeros(w, dtype=src.dtype)
        for t in range(1, r + 1):
            wt = half[t]
            up = src[idx[i + r - t]]
            down = src[idx[i + r + t]]
            for j in range(w):
                c = center[j]
                acc[j] += wt * ((down[j] - c) + (up[j] - c))
        for j in range(w):
            out[i, j] = center[j] + acc[j]


def gaussian_blur(img, size: int, threads: int | None = None) -> np.ndarray:
    """Blur every channel with a separable ``size``x``size`` Gaussian.

    Borders use reflect-without-repeat. Rows of each pass are split across
    ``threads`` workers (default: all available).
    """
    img = as_image(img)
    kernel = make_gaussian_kernel(size)
    _, h, w = img.shape
    if size > 2 * min(h, w) + 1:
        raise ValueError(f"kernel size {size} too large for a {w}x{h} image")
    if size == 1:
        return img.copy()

    r = kernel.radius
    half = kernel.taps[r:].astype(img.dtype)
    idx_x = _mirror_index(w, r)
    idx_y = _mirror_index(h, r)
    prev = numba.get_num_threads()
    numba.set_num_threads(max(1, min(threads or max_threads(), max_threads())))
    try:
        out = np.empty_like(img)
        tmp = np.empty((h, w), dtype=img.dtype)
        for c in range(img.shape[0]):
            _pass_rows(np.ascontiguousarray(img[c]), half, idx_x, tmp)
            _pass_cols(tmp, half, idx_y, out[c])
    finally:
        numba.set_num_threads(prev)
    return out


def blur_stack(img, sizes: Sequence[int], threads: int | None = None) -> list[np.ndarray]:
    if len(sizes) == 0:
        raise ValueError("blur_stack needs at least one kernel size")
    return [gaussian_blur(img, k, threads=threads) for k in sizes]
