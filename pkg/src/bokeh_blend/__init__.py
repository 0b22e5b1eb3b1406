"""Depth-guided bokeh by blending an image with Gaussian-smoothed copies of itself."""

from .blend import blend, spatial_softmax
from .blur import blur_stack, gaussian_blur, make_gaussian_kernel
from .image_core import ImageError, load_image, load_plane, resize_bilinear, save_image
from .metrics import psnr, ssim
from .render import compute_weights, render_bokeh
from .train import DEFAULT_KERNELS, PhaseConfig, run_training
from .weights import FocusParams, WeightHead, depth_to_logits, hard_weights, head_forward, head_init

__version__ = "0.1.0"

__all__ = [
    "blend",
    "spatial_softmax",
    "blur_stack",
    "gaussian_blur",
    "make_gaussian_kernel",
    "ImageError",
    "load_image",
    "load_plane",
    "resize_bilinear",
    "save_image",
    "psnr",
    "ssim",
    "compute_weights",
    "render_bokeh",
    "DEFAULT_KERNELS",
    "PhaseConfig",
    "run_training",
    "FocusParams",
    "WeightHead",
    "depth_to_logits",
    "hard_weights",
    "head_forward",
    "head_init",
]
