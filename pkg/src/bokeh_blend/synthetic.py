"""Synthetic scenes whose bokeh targets are exactly representable by the blend model."""

from __future__ import annotations

import json
from collections.abc import Sequence
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .blend import blend
from .blur import blur_stack
from .image_core import load_image, load_plane, resize_bilinear, save_image, save_plane16
from .train import DEFAULT_KERNELS, SamplePair
from .weights import FocusParams, hard_weights

__all__ = [
    "SceneSpec",
    "random_scene_spec",
    "gen_scene",
    "gen_bokeh_gt",
    "quantize_scene",
    "write_dataset",
    "load_dataset",
    "MANIFEST",
]

MANIFEST = "manifest.json"
DEFAULT_LAYERS = (0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0)


@dataclass(frozen=True)
class SceneSpec:
    seed: int
    width: int
    height: int
    region_depths: tuple[float, ...]
    focus_depth: float = 0.0

    def __post_init__(self):
        n = len(self.region_depths)
        if not 2 <= n <= 6:
            raise ValueError(f"scene needs 2-6 regions, got {n}")
        if len(set(self.region_depths)) != n:
            raise ValueError("region depths must be distinct")
        if any(not 0.0 <= d <= 1.0 for d in self.region_depths):
            raise ValueError("region depths must lie in [0, 1]")
        if self.width < 2 or self.height < 2:
            raise ValueError("scene must be at least 2x2")


def random_scene_spec(
    seed: int,
    width: int,
    height: int,
    n_regions: int | None = None,
    layers: Sequence[float] = DEFAULT_LAYERS,
    focus_depth: float = 0.0,
    jitter: float = 0.05,
) -> SceneSpec:
    """Draw region depths near ``layers`` (each layer used at most once when possible)."""
    rng = np.random.default_rng([seed, 1])
    if n_regions is None:
        n_regions = int(rng.integers(2, 7))
    picks = list(rng.permutation(len(layers)))
    while len(picks) < n_regions:
        picks.append(int(rng.integers(len(layers))))
    depths: list[float] = []
    for i in picks[:n_regions]:
        for _ in range(100):
            d = float(np.clip(layers[i] + rng.uniform(-jitter, jitter), 0.0, 1.0))
            d = round(d * 65535) / 65535  # exact under 16-bit depth storage
            if d not in depths:
                break
        else:
            raise ValueError(f"cannot draw {n_regions} distinct depths from {len(layers)} layers with jitter {jitter}")
        depths.append(d)
    return SceneSpec(seed, width, height, tuple(depths), focus_depth)


def _smooth_noise(rng, h: int, w: int, cells: int) -> np.ndarray:
    coarse = rng.random((3, cells, cells)).astype(np.float32)
    return resize_bilinear(coarse, w, h)


def _region_texture(rng, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    tex = 0.25 + 0.5 * rng.random((3, 1, 1)).astype(np.float32)
    tex = tex + 0.35 * (_smooth_noise(rng, h, w, int(rng.integers(3, 9))) - 0.5)
    for _ in range(int(rng.integers(4, 10))):
        colour = rng.random((3, 1)).astype(np.float32)
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        size = rng.uniform(0.04, 0.18) * min(h, w)
        if rng.random() < 0.5:
            mask = (yy - cy) ** 2 + (xx - cx) ** 2 <= size * size
        else:
            mask = (np.abs(yy - cy) <= size) & (np.abs(xx - cx) <= size * rng.uniform(0.5, 2.0))
        tex[:, mask] = colour
    return np.clip(tex, 0.0, 1.0)


def gen_scene(spec: SceneSpec) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-textured RGB image and piecewise-constant depth map."""
    rng = np.random.default_rng([spec.seed, 2])
    h, w = spec.height, spec.width
    n = len(spec.region_depths)
    flat = rng.choice(h * w, size=n, replace=False)
    sites = np.stack([flat // w, flat % w], axis=1).astype(np.float64)
    yy, xx = np.mgrid[0:h, 0:w]
    dist = (yy[None] - sites[:, 0, None, None]) ** 2 + (xx[None] - sites[:, 1, None, None]) ** 2
    label = np.argmin(dist, axis=0)

    img = np.empty((3, h, w), dtype=np.float32)
    for r in range(n):
        tex = _region_texture(rng, h, w)
        mask = label == r
        img[:, mask] = tex[:, mask]
    depth = np.asarray(spec.region_depths, dtype=np.float32)[label]
    return img, depth


def gen_bokeh_gt(img, depth, focus: FocusParams, sizes: Sequence[int] = DEFAULT_KERNELS) -> np.ndarray:
    if focus.levels != len(sizes) + 1:
        raise ValueError(f"{focus.levels} focus levels for {len(sizes)} kernels")
    return blend(img, blur_stack(img, sizes), hard_weights(depth, focus))


def quantize_scene(img, depth) -> tuple[np.ndarray, np.ndarray]:
    """Snap to the 8-bit image / 16-bit depth grid used on disk."""
    # same arithmetic as the loader: integer code / max value in float32
    img = np.floor(np.asarray(img, dtype=np.float64) * 255 + 0.5).astype(np.float32) / np.float32(255)
    depth = np.floor(np.asarray(depth, dtype=np.float64) * 65535 + 0.5).astype(np.float32) / np.float32(65535)
    return img, depth


def write_dataset(
    out_dir,
    count: int,
    seed: int = 0,
    width: int = 64,
    height: int = 64,
    sizes: Sequence[int] = DEFAULT_KERNELS,
    focus: FocusParams | None = None,
    n_regions: int | None = None,
) -> list[SceneSpec]:
    """Write ``input/``, ``depth/`` and ``target/`` PNGs plus a JSON manifest.

    Targets are computed from the quantized input and depth, so reloading the
    files and recomputing the target reproduces the stored bytes.
    """
    focus = focus or FocusParams.for_levels(len(sizes) + 1)
    out = Path(out_dir)
    for sub in ("input", "depth", "target"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    specs = []
    for i in range(count):
        spec = random_scene_spec(seed * 100003 + i, width, height, n_regions, focus_depth=focus.focus_depth)
        img, depth = quantize_scene(*gen_scene(spec))
        target = gen_bokeh_gt(img, depth, focus, sizes)
        name = f"{i:04d}.png"
        save_image(img, out / "input" / name)
        save_plane16(depth, out / "depth" / name)
        save_image(target, out / "target" / name)
        specs.append(spec)
    manifest = {
        "seed": seed,
        "count": count,
        "width": width,
        "height": height,
        "kernels": list(sizes),
        "focus": asdict(focus),
        "scenes": [{"file": f"{i:04d}.png", **asdict(s)} for i, s in enumerate(specs)],
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2) + "\n")
    return specs


def load_dataset(data_dir) -> tuple[list[str], list[SamplePair]]:
    data_dir = Path(data_dir)
    names = sorted(p.name for p in (data_dir / "input").glob("*.png"))
    if not names:
        raise FileNotFoundError(f"{data_dir}/input: no PNG files")
    pairs = []
    for name in names:
        for sub in ("depth", "target"):
            if not (data_dir / sub / name).is_file():
                raise FileNotFoundError(f"{data_dir / sub / name}: missing counterpart of input/{name}")
        pairs.append(
            SamplePair(
                load_image(data_dir / "input" / name),
                load_plane(data_dir / "depth" / name),
                load_image(data_dir / "target" / name),
            )
        )
    return names, pairs
