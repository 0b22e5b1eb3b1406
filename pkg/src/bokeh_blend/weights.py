"""Weight-map producers: a parametric depth mapping and a small trainable head.

Depth polarity: 0 is nearest to the camera, 1 is farthest.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import ClassVar

import numpy as np

from .image_core import as_image

__all__ = [
    "FocusParams",
    "WeightHead",
    "blur_strength",
    "depth_to_logits",
    "hard_weights",
    "head_init",
    "head_forward",
    "head_forward_cached",
    "conv3x3",
    "conv3x3_backward",
    "stack_inputs",
    "save_head",
    "load_head",
    "read_head",
    "HEAD_MAGIC",
]

HEAD_MAGIC = b"BKWH0001"
HIDDEN = 8
IN_CHANNELS = 4


def _default_centers(levels: int) -> tuple[float, ...]:
    return tuple(float(c) for c in np.linspace(0.0, 1.0, levels))


@dataclass(frozen=True)
class FocusParams:
    """Focal plane, softmax temperature and per-level blur-strength anchors."""

    focus_depth: float = 0.0
    tau: float = 0.05
    level_centers: tuple[float, ...] = (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.focus_depth <= 1.0:
            raise ValueError(f"focus_depth must be in [0, 1], got {self.focus_depth}")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        c = self.level_centers
        if len(c) < 2 or c[0] != 0.0 or any(b < a for a, b in zip(c, c[1:])) or c[-1] > 1.0:
            raise ValueError(f"level_centers must start at 0, be sorted and lie in [0, 1]: {c}")

    @classmethod
    def for_levels(cls, levels: int, focus_depth: float = 0.0, tau: float = 0.05) -> "FocusParams":
        """Evenly spaced centers for ``levels`` weight planes."""
        return cls(focus_depth=focus_depth, tau=tau, level_centers=_default_centers(levels))

    @property
    def levels(self) -> int:
        return len(self.level_centers)


def blur_strength(depth, focus_depth: float) -> np.ndarray:
    """Normalized distance from the focal plane, in [0, 1]."""
    d = np.asarray(depth, dtype=np.float64)
    return np.abs(d - focus_depth) / max(focus_depth, 1.0 - focus_depth)


def depth_to_logits(depth, params: FocusParams) -> np.ndarray:
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValueError(f"depth must be (H, W), got {depth.shape}")
    s = blur_strength(depth, params.focus_depth).astype(np.float32)
    centers = np.asarray(params.level_centers, dtype=np.float32)[:, None, None]
    diff = s[None] - centers
    return -(diff * diff) / np.float32(params.tau)


def hard_weights(depth, params: FocusParams) -> np.ndarray:
    """One-hot weights at the nearest level center; ties go to the lower level."""
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise ValueError(f"depth must be (H, W), got {depth.shape}")
    s = blur_strength(depth, params.focus_depth)
    centers = np.asarray(params.level_centers, dtype=np.float64)[:, None, None]
    choice = np.argmin((s[None] - centers) ** 2, axis=0)
    levels = np.arange(params.levels)[:, None, None]
    return (choice[None] == levels).astype(np.float32)


@dataclass
class WeightHead:
    """conv1: 4 -> 8 (3x3, bias), ReLU, conv2: 8 -> levels (3x3, bias)."""

    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray

    names: ClassVar[tuple[str, ...]] = ("conv1_w", "conv1_b", "conv2_w", "conv2_b")

    def __post_init__(self):
        levels = self.conv2_w.shape[0]
        expected = {
            "conv1_w": (HIDDEN, IN_CHANNELS, 3, 3),
            "conv1_b": (HIDDEN,),
            "conv2_w": (levels, HIDDEN, 3, 3),
            "conv2_b": (levels,),
        }
        for name, shape in expected.items():
            t = getattr(self, name)
            if t.shape != shape:
                raise ValueError(f"{name} has shape {t.shape}, expected {shape}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"{name} contains non-finite values")

    @property
    def levels(self) -> int:
        return self.conv2_w.shape[0]

    @property
    def dtype(self):
        return self.conv1_w.dtype

    def tensors(self) -> list[np.ndarray]:
        return [getattr(self, n) for n in self.names]

    def astype(self, dtype) -> "WeightHead":
        return WeightHead(*(t.astype(dtype) for t in self.tensors()))

    def copy(self) -> "WeightHead":
        return WeightHead(*(t.copy() for t in self.tensors()))

    def equals(self, other: "WeightHead") -> bool:
        return all(np.array_equal(a, b) for a, b in zip(self.tensors(), other.tensors()))


def head_init(seed: int, n_levels: int) -> WeightHead:
    if n_levels < 2:
        raise ValueError(f"need at least 2 levels, got {n_levels}")
    rng = np.random.default_rng(seed)
    a1 = np.sqrt(6.0 / (IN_CHANNELS * 9))
    a2 = np.sqrt(6.0 / (HIDDEN * 9))
    conv1_w = rng.uniform(-a1, a1, size=(HIDDEN, IN_CHANNELS, 3, 3))
    conv2_w = 0.01 * rng.uniform(-a2, a2, size=(n_levels, HIDDEN, 3, 3))
    return WeightHead(
        conv1_w=conv1_w.astype(np.float32),
        conv1_b=np.zeros(HIDDEN, dtype=np.float32),
        conv2_w=conv2_w.astype(np.float32),
        conv2_b=np.zeros(n_levels, dtype=np.float32),
    )


def _pad1(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")


def conv3x3(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Stride-1 3x3 cross-correlation with reflect padding; ``x`` is (Cin, H, W)."""
    cin, h, w = x.shape
    if h < 2 or w < 2:
        raise ValueError(f"conv3x3 needs at least 2x2 input, got {h}x{w}")
    p = _pad1(x)
    out = np.zeros((weight.shape[0], h * w), dtype=np.result_type(x.dtype, weight.dtype))
    for ky in range(3):
        for kx in range(3):
            patch = p[:, ky : ky + h, kx : kx + w].reshape(cin, h * w)
            out += weight[:, :, ky, kx] @ patch
    out += bias[:, None]
    return out.reshape(weight.shape[0], h, w)


def conv3x3_backward(x: np.ndarray, weight: np.ndarray, grad_out: np.ndarray):
    """Gradients of :func:`conv3x3` w.r.t. input, weight and bias."""
    cin, h, w = x.shape
    cout = weight.shape[0]
    p = _pad1(x)
    g = grad_out.reshape(cout, h * w)
    grad_w = np.zeros_like(weight)
    grad_p = np.zeros_like(p)
    for ky in range(3):
        for kx in range(3):
            patch = p[:, ky : ky + h, kx : kx + w].reshape(cin, h * w)
            grad_w[:, :, ky, kx] = g @ patch.T
            grad_p[:, ky : ky + h, kx : kx + w] += (weight[:, :, ky, kx].T @ g).reshape(cin, h, w)
    # fold the reflected border back onto the samples it was copied from
    rows = grad_p[:, 1 : h + 1, :].copy()
    rows[:, 1, :] += grad_p[:, 0, :]
    rows[:, h - 2, :] += grad_p[:, h + 1, :]
    grad_x = rows[:, :, 1 : w + 1].copy()
    grad_x[:, :, 1] += rows[:, :, 0]
    grad_x[:, :, w - 2] += rows[:, :, w + 1]
    return grad_x, grad_w, g.sum(axis=1)


def stack_inputs(img, depth) -> np.ndarray:
    """(R, G, B, depth) input planes for the head."""
    img = as_image(img)
    depth = np.asarray(depth)
    if img.shape[0] != 3:
        raise ValueError(f"head input must be RGB, got {img.shape[0]} channel(s)")
    if depth.shape != img.shape[1:]:
        raise ValueError(f"depth {depth.shape} does not match image {img.shape[1:]}")
    return np.concatenate([img, depth[None].astype(img.dtype)], axis=0)


def head_forward_cached(img, depth, head: WeightHead) -> tuple[np.ndarray, dict]:
    x = stack_inputs(img, depth).astype(head.dtype, copy=False)
    pre = conv3x3(x, head.conv1_w, head.conv1_b)
    act = np.maximum(pre, 0)
    logits = conv3x3(act, head.conv2_w, head.conv2_b)
    return logits, {"x": x, "pre": pre, "act": act}


def head_forward(img, depth, head: WeightHead) -> np.ndarray:
    """Logits of shape (levels, H, W)."""
    return head_forward_cached(img, depth, head)[0]


def _head_bytes(head: WeightHead) -> bytes:
    parts = [HEAD_MAGIC, struct.pack("<I", head.levels)]
    for t in head.tensors():
        parts.append(struct.pack("<I", t.ndim))
        parts.append(struct.pack(f"<{t.ndim}I", *t.shape))
    for t in head.tensors():
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return b"".join(parts)


def save_head(head: WeightHead, path) -> None:
    Path(path).write_bytes(_head_bytes(head))


def read_head(buf: bytes, offset: int = 0) -> tuple[WeightHead, int]:
    """Parse a serialized head from ``buf``; returns the head and the end offset."""
    if buf[offset : offset + 8] != HEAD_MAGIC:
        raise ValueError("not a weight-head file (bad magic)")
    pos = offset + 8
    try:
        (levels,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shapes = []
        for _ in range(4):
            (ndim,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            shapes.append(struct.unpack_from(f"<{ndim}I", buf, pos))
            pos += 4 * ndim
        tensors = []
        for shape in shapes:
            count = int(np.prod(shape))
            if len(buf) < pos + 4 * count:
                raise ValueError("truncated weight-head file")
            tensors.append(np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(shape).astype(np.float32))
            pos += 4 * count
    except struct.error as exc:
        raise ValueError(f"truncated weight-head header: {exc}") from None
    head = WeightHead(*tensors)
    if head.levels != levels:
        raise ValueError(f"header says {levels} levels, tensors have {head.levels}")
    return head, pos


def load_head(path) -> WeightHead:
    return read_head(Path(path).read_bytes())[0]
