"""Per-pixel convex blending of an image with its smoothed copies.

Weight maps are ``(L, H, W)`` arrays with ``L = 1 + len(smoothed)``; plane 0
multiplies the original image. Each plane is shared across colour channels.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .image_core import as_image

__all__ = ["spatial_softmax", "blend", "brute_force_blend", "check_weight_maps"]


def spatial_softmax(logits) -> np.ndarray:
    """Softmax over the level axis, independently at every pixel."""
    z = np.asarray(logits)
    if z.dtype != np.float64:
        z = z.astype(np.float32)
    if z.ndim != 3:
        raise ValueError(f"logits must be (levels, H, W), got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits contain non-finite values")
    e = np.exp(z - z.max(axis=0, keepdims=True))
    e /= e.sum(axis=0, keepdims=True)
    return e


def check_weight_maps(weights, atol: float = 1e-5) -> np.ndarray:
    w = np.asarray(weights)
    if w.ndim != 3:
        raise ValueError(f"weight maps must be (levels, H, W), got {w.shape}")
    if np.any(w < 0) or np.any(w > 1):
        raise ValueError("weight maps must lie in [0, 1]")
    if not np.allclose(w.sum(axis=0, dtype=np.float64), 1.0, rtol=0, atol=atol):
        raise ValueError("weight maps do not sum to 1 at every pixel")
    return w


def _validate(original, smoothed, weights):
    original = as_image(original, "original")
    smoothed = [as_image(s, f"smoothed[{i}]") for i, s in enumerate(smoothed)]
    weights = np.asarray(weights)
    if weights.ndim != 3:
        raise ValueError(f"weight maps must be (levels, H, W), got {weights.shape}")
    for i, s in enumerate(smoothed):
        if s.shape != original.shape:
            raise ValueError(f"smoothed[{i}] shape {s.shape} != original {original.shape}")
    if weights.shape[0] != len(smoothed) + 1:
        raise ValueError(f"{weights.shape[0]} weight levels for {len(smoothed)} smoothed images")
    if weights.shape[1:] != original.shape[1:]:
        raise ValueError(f"weight maps {weights.shape[1:]} do not match image {original.shape[1:]}")
    return original, smoothed, weights


def blend(original, smoothed: Sequence, weights) -> np.ndarray:
    """Weighted sum ``W0 * original + sum_i W_i * smoothed[i-1]``."""
    original, smoothed, weights = _validate(original, smoothed, weights)
    dtype = np.result_type(original.dtype, weights.dtype)
    out = weights[0][None].astype(dtype) * original
    for w, src in zip(weights[1:], smoothed):
        out += w[None] * src
    return out


def brute_force_blend(original, smoothed: Sequence, weights) -> np.ndarray:
    """Reference blend: explicit loops, float64 accumulation."""
    original, smoothed, weights = _validate(original, smoothed, weights)
    sources = [original, *smoothed]
    c, h, w = original.shape
    out = np.zeros((c, h, w), dtype=np.float64)
    for ch in range(c):
        for y in range(h):
            for x in range(w):
                acc = 0.0
                for level, src in enumerate(sources):
                    acc += float(weights[level, y, x]) * float(src[ch, y, x])
                out[ch, y, x] = acc
    return out.astype(original.dtype)
