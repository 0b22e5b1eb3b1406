"""Saliency-masked baseline: keep the salient foreground, blur the rest."""

from __future__ import annotations

import numpy as np

from .blur import gaussian_blur
from .image_core import as_image

__all__ = ["BASELINE_KERNEL", "saliency_bokeh", "center_prior_saliency"]

BASELINE_KERNEL = 75


def saliency_bokeh(img, saliency, kernel: int = BASELINE_KERNEL) -> np.ndarray:
    """``S * img + (1 - S) * blur(img)``: the two-level blend with W0 = S."""
    img = as_image(img)
    s = np.asarray(saliency, dtype=img.dtype)
    if s.ndim == 3 and s.shape[0] == 1:
        s = s[0]
    if s.shape != img.shape[1:]:
        raise ValueError(f"saliency {s.shape} does not match image {img.shape[1:]}")
    if np.any(s < 0) or np.any(s > 1):
        raise ValueError("saliency values must lie in [0, 1]")
    blurred = gaussian_blur(img, kernel)
    return s[None] * img + (1 - s)[None] * blurred


def center_prior_saliency(width: int, height: int, softness: float = 0.15) -> np.ndarray:
    """Soft centered ellipse, used when no saliency map is supplied."""
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    ny = (yy + 0.5) / height - 0.5
    nx = (xx + 0.5) / width - 0.5
    r = np.sqrt((nx / 0.3) ** 2 + (ny / 0.35) ** 2)
    return np.clip((1.0 + softness - r) / (2 * softness), 0.0, 1.0).astype(np.float32)
