"""Resize, weight, blend and resize back: the end-to-end rendering path."""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np

from .blend import blend, spatial_softmax
from .blur import blur_stack
from .image_core import as_image, resize_bilinear
from .weights import FocusParams, WeightHead, depth_to_logits, hard_weights, head_forward

__all__ = ["compute_weights", "render_bokeh"]


def compute_weights(
    img,
    depth,
    focus: FocusParams | None = None,
    hard: bool = False,
    head: WeightHead | None = None,
) -> np.ndarray:
    """Weight maps from the learned head when given, else from the focus parameters."""
    if head is not None:
        return spatial_softmax(head_forward(img, depth, head))
    if focus is None:
        raise ValueError("either focus parameters or a weight head is required")
    if hard:
        return hard_weights(depth, focus)
    return spatial_softmax(depth_to_logits(depth, focus))


def render_bokeh(
    img,
    depth,
    sizes: Sequence[int],
    focus: FocusParams | None = None,
    hard: bool = False,
    head: WeightHead | None = None,
    proc_size: tuple[int, int] | None = None,
    threads: int | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Render at ``proc_size`` (W, H) and scale the result back to the input size.

    Returns the rendered image and the weight maps, both at input resolution.
    """
    img = as_image(img)
    depth = np.asarray(depth, dtype=np.float32)
    levels = len(sizes) + 1
    if head is not None and head.levels != levels:
        raise ValueError(f"model predicts {head.levels} levels but {len(sizes)} kernels were given")
    if head is None and focus is not None and focus.levels != levels:
        raise ValueError(f"{focus.levels} focus levels for {len(sizes)} kernels")

    _, h, w = img.shape
    pw, ph = proc_size or (w, h)
    work = resize_bilinear(img, pw, ph)
    work_depth = resize_bilinear(depth, pw, ph)

    weights = compute_weights(work, work_depth, focus, hard, head)
    out = blend(work, blur_stack(work, sizes, threads=threads), weights)
    out = np.clip(resize_bilinear(out, w, h), 0.0, 1.0)
    return out, resize_bilinear(weights, w, h)
