"""PSNR and single-scale SSIM for images in [0, 1]."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .image_core import as_image, load_image

__all__ = [
    "PSNR_CAP",
    "SSIM_C1",
    "SSIM_C2",
    "psnr",
    "ssim",
    "ssim_and_grad",
    "MetricReport",
    "evaluate_pairs",
]

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _pair(pred, target):
    pred = as_image(pred, "pred")
    target = as_image(target, "target")
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred.astype(np.float64), target.astype(np.float64)


def psnr(pred, target) -> float:
    """10*log10(1/MSE) in dB, capped at 99 dB (zero error reports the cap)."""
    pred, target = _pair(pred, target)
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _window() -> np.ndarray:
    d = np.arange(SSIM_WINDOW, dtype=np.float64) - SSIM_WINDOW // 2
    g = np.exp(-(d * d) / (2.0 * SSIM_SIGMA**2))
    return g / g.sum()


_WIN = _window()


def _filter_valid(x: np.ndarray) -> np.ndarray:
    """Separable Gaussian window over the last two axes, valid positions only."""
    k = SSIM_WINDOW
    h, w = x.shape[-2:]
    tmp = sum(_WIN[t] * x[..., :, t : t + w - k + 1] for t in range(k))
    return sum(_WIN[t] * tmp[..., t : t + h - k + 1, :] for t in range(k))


def _filter_full(x: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`_filter_valid` (the window is symmetric)."""
    p = SSIM_WINDOW - 1
    return _filter_valid(np.pad(x, ((0, 0), (p, p), (p, p))))


def _ssim_terms(x: np.ndarray, y: np.ndarray):
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ValueError(f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {x.shape[-1]}x{x.shape[-2]}")
    mu_x = _filter_valid(x)
    mu_y = _filter_valid(y)
    var_x = _filter_valid(x * x) - mu_x * mu_x
    var_y = _filter_valid(y * y) - mu_y * mu_y
    cov = _filter_valid(x * y) - mu_x * mu_y
    a = 2.0 * mu_x * mu_y + SSIM_C1
    b = 2.0 * cov + SSIM_C2
    c = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    d = var_x + var_y + SSIM_C2
    s = (a * b) / (c * d)
    return s, (mu_x, mu_y, a, b, c, d)


def ssim(pred, target) -> float:
    """Mean SSIM over valid window positions, averaged over channels."""
    pred, target = _pair(pred, target)
    s, _ = _ssim_terms(pred, target)
    return float(s.mean())


def ssim_and_grad(pred, target) -> tuple[float, np.ndarray]:
    """SSIM and its gradient with respect to ``pred`` (float64)."""
    x, y = _pair(pred, target)
    s, (mu_x, mu_y, a, b, c, d) = _ssim_terms(x, y)
    n = s.size
    g_mu = s * (2.0 * mu_y / a - 2.0 * mu_y / b - 2.0 * mu_x / c + 2.0 * mu_x / d) / n
    g_xx = -s / d / n
    g_xy = 2.0 * s / b / n
    grad = _filter_full(g_mu) + 2.0 * x * _filter_full(g_xx) + y * _filter_full(g_xy)
    return float(s.mean()), grad


@dataclass
class MetricReport:
    rows: list[tuple[str, float, float]] = field(default_factory=list)

    def add(self, name: str, pred, target) -> None:
        self.rows.append((name, psnr(pred, target), ssim(pred, target)))

    @property
    def mean_psnr(self) -> float:
        return float(np.mean([r[1] for r in self.rows])) if self.rows else float("nan")

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([r[2] for r in self.rows])) if self.rows else float("nan")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["path", "psnr", "ssim"])
            for name, p, s in self.rows:
                writer.writerow([name, f"{p:.6f}", f"{s:.6f}"])
            writer.writerow(["mean", f"{self.mean_psnr:.6f}", f"{self.mean_ssim:.6f}"])


def evaluate_pairs(pred_dir, gt_dir, loader=None) -> MetricReport:
    """Score every prediction against the same-named ground-truth file.

    Raises FileNotFoundError naming the first file without a counterpart.
    """
    loader = loader or load_image
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    exts = {".png", ".pgm", ".ppm"}
    preds = {p.name for p in pred_dir.iterdir() if p.suffix.lower() in exts}
    gts = {p.name for p in gt_dir.iterdir() if p.suffix.lower() in exts}
    for name in sorted(preds ^ gts):
        missing_in = gt_dir if name in preds else pred_dir
        raise FileNotFoundError(f"{name}: no counterpart in {missing_in}")
    if not preds:
        raise FileNotFoundError(f"{pred_dir}: no images to evaluate")
    report = MetricReport()
    for name in sorted(preds):
        report.add(name, loader(pred_dir / name), loader(gt_dir / name))
    return report
