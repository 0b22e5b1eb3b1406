"""Losses, analytic gradients, Adam and the three-phase training schedule."""

from __future__ import annotations

import logging
import struct
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .blend import blend, spatial_softmax
from .blur import blur_stack
from .image_core import as_image, flip, resize_bilinear
from .metrics import ssim, ssim_and_grad
from .weights import (
    WeightHead,
    _head_bytes,
    conv3x3_backward,
    head_forward_cached,
    head_init,
    read_head,
)

log = logging.getLogger(__name__)

__all__ = [
    "DEFAULT_KERNELS",
    "AdamHyper",
    "AdamState",
    "PhaseConfig",
    "SamplePair",
    "TrainResult",
    "l1_loss",
    "ssim_loss",
    "predict",
    "backward",
    "adam_step",
    "train_phases",
    "run_training",
    "mean_l1",
    "finite_difference_grads",
    "grad_check",
    "default_phases",
    "parse_phase_config",
    "load_phase_config",
    "save_checkpoint",
    "load_checkpoint",
]

DEFAULT_KERNELS = (25, 45, 75)
LOSSES = ("l1", "ssim")
STATE_MAGIC = b"BKAS0001"


@dataclass(frozen=True)
class AdamHyper:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.epsilon <= 0 or self.learning_rate <= 0:
            raise ValueError("epsilon and learning_rate must be positive")


@dataclass
class AdamState:
    step: int
    m: list[np.ndarray]
    v: list[np.ndarray]

    @classmethod
    def zeros_like(cls, head: WeightHead) -> "AdamState":
        return cls(0, [np.zeros_like(t) for t in head.tensors()], [np.zeros_like(t) for t in head.tensors()])


@dataclass(frozen=True)
class PhaseConfig:
    phase: int
    train_w: int
    train_h: int
    loss: str = "l1"
    iterations: int = 0
    lr_start: float = 1e-3
    lr_end: float = 1e-5

    def __post_init__(self):
        if self.phase not in (1, 2, 3):
            raise ValueError(f"phase must be 1, 2 or 3, got {self.phase}")
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.iterations < 0 or self.train_w < 1 or self.train_h < 1:
            raise ValueError("iterations must be >= 0 and dims positive")
        if self.lr_start <= 0 or self.lr_end <= 0:
            raise ValueError("learning rates must be positive")

    def lr(self, it: int) -> float:
        """Geometric decay from lr_start (first iteration) to lr_end (last)."""
        if self.iterations <= 1:
            return self.lr_start
        frac = it / (self.iterations - 1)
        return self.lr_start * (self.lr_end / self.lr_start) ** frac


def default_phases(iterations: Sequence[int] = (200, 100, 100)) -> list[PhaseConfig]:
    """Resolutions and losses of the three-phase schedule; lr 1e-3 decays to 1e-5 overall."""
    it1, it2, it3 = iterations
    return [
        PhaseConfig(1, 512, 384, "l1", it1, 1e-3, 1e-4),
        PhaseConfig(2, 1024, 768, "l1", it2, 3e-4, 3e-5),
        PhaseConfig(3, 1024, 768, "ssim", it3, 1e-4, 1e-5),
    ]


@dataclass
class SamplePair:
    input: np.ndarray
    depth: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        self.input = as_image(self.input, "input")
        self.target = as_image(self.target, "target")
        self.depth = np.asarray(self.depth)
        if self.input.shape != self.target.shape or self.depth.shape != self.input.shape[1:]:
            raise ValueError(
                f"mismatched sample dims: input {self.input.shape}, depth {self.depth.shape}, target {self.target.shape}"
            )

    def astype(self, dtype) -> "SamplePair":
        return SamplePair(self.input.astype(dtype), self.depth.astype(dtype), self.target.astype(dtype))

    def resized(self, w: int, h: int) -> "SamplePair":
        return SamplePair(resize_bilinear(self.input, w, h), resize_bilinear(self.depth, w, h), resize_bilinear(self.target, w, h))

    def flipped(self, axis: str) -> "SamplePair":
        return SamplePair(flip(self.input, axis), flip(self.depth, axis), flip(self.target, axis))


def l1_loss(pred, target) -> float:
    pred, target = as_image(pred), as_image(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean(np.abs(pred.astype(np.float64) - target.astype(np.float64))))


def ssim_loss(pred, target) -> float:
    return -ssim(pred, target)


def predict(head: WeightHead, image, depth, smoothed: Sequence[np.ndarray]) -> np.ndarray:
    logits, _ = head_forward_cached(image, depth, head)
    return blend(image, smoothed, spatial_softmax(logits))


def _loss_and_grad(pred, target, loss: str):
    if loss == "l1":
        diff = pred - target
        return l1_loss(pred, target), np.sign(diff) / diff.size
    if loss == "ssim":
        value, grad = ssim_and_grad(pred, target)
        return -value, -grad
    raise ValueError(f"unknown loss {loss!r}")


def backward(
    sample: SamplePair,
    head: WeightHead,
    sizes: Sequence[int] = DEFAULT_KERNELS,
    loss: str = "l1",
    smoothed: Sequence[np.ndarray] | None = None,
) -> tuple[float, WeightHead]:
    """Loss value and its exact gradient with respect to every head parameter.

    ``smoothed`` may carry a precomputed blur stack of ``sample.input``.
    """
    if len(sizes) + 1 != head.levels:
        raise ValueError(f"{len(sizes)} kernels need a head with {len(sizes) + 1} levels, got {head.levels}")
    dtype = head.dtype
    if smoothed is None:
        smoothed = blur_stack(sample.input, sizes)
    sources = [sample.input.astype(dtype, copy=False), *(s.astype(dtype, copy=False) for s in smoothed)]

    logits, cache = head_forward_cached(sample.input, sample.depth, head)
    weights = spatial_softmax(logits)
    pred = blend(sources[0], sources[1:], weights)
    value, g_pred = _loss_and_grad(pred, sample.target.astype(dtype, copy=False), loss)
    g_pred = g_pred.astype(dtype, copy=False)

    # output is linear in each weight plane; planes are shared across channels
    g_w = np.stack([(g_pred * src).sum(axis=0) for src in sources])
    g_logits = weights * (g_w - (weights * g_w).sum(axis=0, keepdims=True))

    g_act, g_conv2_w, g_conv2_b = conv3x3_backward(cache["act"], head.conv2_w, g_logits)
    g_pre = g_act * (cache["pre"] > 0)
    _, g_conv1_w, g_conv1_b = conv3x3_backward(cache["x"], head.conv1_w, g_pre)
    return value, WeightHead(g_conv1_w, g_conv1_b, g_conv2_w, g_conv2_b)


def adam_step(head: WeightHead, grads: WeightHead, state: AdamState, hyper: AdamHyper) -> tuple[WeightHead, AdamState]:
    """One bias-corrected Adam update; inputs are left untouched."""
    t = state.step + 1
    b1, b2 = hyper.beta1, hyper.beta2
    new_params, new_m, new_v = [], [], []
    for p, g, m, v in zip(head.tensors(), grads.tensors(), state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch in adam_step: {p.shape}, {g.shape}, {m.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params.append((p - hyper.learning_rate * m_hat / (np.sqrt(v_hat) + hyper.epsilon)).astype(p.dtype))
        new_m.append(m.astype(p.dtype))
        new_v.append(v.astype(p.dtype))
    return WeightHead(*new_params), AdamState(t, new_m, new_v)


@dataclass
class TrainResult:
    head: WeightHead
    state: AdamState
    phase_losses: list[float] = field(default_factory=list)


def _phase_samples(dataset: Sequence[SamplePair], cfg: PhaseConfig, sizes: Sequence[int]):
    samples = []
    for pair in dataset:
        pair = pair.resized(cfg.train_w, cfg.train_h)
        stack = blur_stack(pair.input, sizes)
        samples.append((pair, stack))
        # blur commutes with flips, so the stack is flipped rather than recomputed
        for axis in ("horizontal", "vertical"):
            samples.append((pair.flipped(axis), [flip(s, axis) for s in stack]))
    return samples


def run_training(
    dataset: Sequence[SamplePair],
    phases: Sequence[PhaseConfig],
    seed: int = 0,
    sizes: Sequence[int] = DEFAULT_KERNELS,
    hyper: AdamHyper | None = None,
    head: WeightHead | None = None,
) -> TrainResult:
    if not dataset:
        raise ValueError("training dataset is empty")
    hyper = hyper or AdamHyper()
    head = head if head is not None else head_init(seed, len(sizes) + 1)
    state = AdamState.zeros_like(head)
    rng = np.random.default_rng(seed)
    result = TrainResult(head, state)
    for cfg in phases:
        if cfg.iterations == 0:
            continue
        samples = _phase_samples(dataset, cfg, sizes)
        state = AdamState.zeros_like(head)
        order: list[int] = []
        recent: list[float] = []
        for it in range(cfg.iterations):
            if not order:
                order = list(rng.permutation(len(samples)))
            pair, stack = samples[order.pop()]
            value, grads = backward(pair, head, sizes, cfg.loss, smoothed=stack)
            head, state = adam_step(head, grads, state, replace(hyper, learning_rate=cfg.lr(it)))
            recent.append(value)
        final = float(np.mean(recent[-len(samples):]))
        log.info("phase %d: %d iterations, final %s loss %.6f", cfg.phase, cfg.iterations, cfg.loss, final)
        result.phase_losses.append(final)
    result.head, result.state = head, state
    return result


def train_phases(dataset, phases, seed: int = 0, sizes: Sequence[int] = DEFAULT_KERNELS) -> WeightHead:
    return run_training(dataset, phases, seed, sizes).head


def mean_l1(head: WeightHead, dataset: Sequence[SamplePair], sizes: Sequence[int] = DEFAULT_KERNELS) -> float:
    losses = []
    for pair in dataset:
        pred = predict(head, pair.input, pair.depth, blur_stack(pair.input, sizes))
        losses.append(l1_loss(pred, pair.target))
    return float(np.mean(losses))


def _patterns(head: WeightHead, sample: SamplePair, smoothed, loss: str):
    """Objective value plus the ReLU gate and L1 sign patterns at ``head``."""
    logits, cache = head_forward_cached(sample.input, sample.depth, head)
    pred = blend(sample.input, smoothed, spatial_softmax(logits))
    value, _ = _loss_and_grad(pred, sample.target, loss)
    gates = cache["pre"] > 0
    signs = np.sign(pred - sample.target) if loss == "l1" else None
    return value, gates, signs


def finite_difference_grads(
    head: WeightHead,
    sample: SamplePair,
    loss: str = "l1",
    sizes: Sequence[int] = DEFAULT_KERNELS,
    h: float = 1e-4,
    max_shrink: int = 4,
) -> WeightHead:
    """Central differences in float64.

    When a step of ``h`` crosses a ReLU or L1 kink the step is shrunk by 10x
    (up to ``max_shrink`` times) so both evaluations stay on the base point's
    smooth piece.
    """
    head = head.astype(np.float64)
    sample = sample.astype(np.float64)
    smoothed = blur_stack(sample.input, sizes)
    _, base_gates, base_signs = _patterns(head, sample, smoothed, loss)

    def same_piece(gates, signs):
        if not np.array_equal(gates, base_gates):
            return False
        return signs is None or np.array_equal(signs, base_signs)

    numeric = []
    for name in head.names:
        param = getattr(head, name)
        grad = np.zeros_like(param)
        for idx in np.ndindex(param.shape):
            orig = param[idx]
            step = h
            for _ in range(max_shrink + 1):
                param[idx] = orig + step
                f_plus, g_plus, s_plus = _patterns(head, sample, smoothed, loss)
                param[idx] = orig - step
                f_minus, g_minus, s_minus = _patterns(head, sample, smoothed, loss)
                param[idx] = orig
                if same_piece(g_plus, s_plus) and same_piece(g_minus, s_minus):
                    break
                step /= 10.0
            grad[idx] = (f_plus - f_minus) / (2.0 * step)
        numeric.append(grad)
    return WeightHead(*numeric)


def relative_error(analytic: WeightHead, numeric: WeightHead) -> float:
    worst = 0.0
    for a, n in zip(analytic.tensors(), numeric.tensors()):
        a = a.astype(np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def grad_check(
    head: WeightHead,
    sample: SamplePair,
    loss: str = "l1",
    sizes: Sequence[int] = DEFAULT_KERNELS,
    analytic: WeightHead | None = None,
) -> float:
    """Max relative error between analytic and central-difference gradients (float64).

    Pass ``analytic`` to check an externally supplied gradient instead of
    the one from :func:`backward`.
    """
    if analytic is None:
        _, analytic = backward(sample.astype(np.float64), head.astype(np.float64), sizes, loss)
    numeric = finite_difference_grads(head, sample, loss, sizes)
    return relative_error(analytic, numeric)


def parse_phase_config(text: str) -> tuple[list[PhaseConfig], dict[str, str]]:
    """Parse ``phaseN.key=value`` lines; other ``key=value`` lines are returned as globals.

    Missing phase keys fall back to :func:`default_phases`.
    """
    defaults = {cfg.phase: cfg for cfg in default_phases()}
    fields: dict[int, dict[str, object]] = {}
    extra: dict[str, str] = {}
    casts = {"width": ("train_w", int), "height": ("train_h", int), "loss": ("loss", str),
             "iterations": ("iterations", int), "lr_start": ("lr_start", float), "lr_end": ("lr_end", float)}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key.startswith("phase"):
            extra[key] = value
            continue
        head, _, sub = key.partition(".")
        try:
            phase = int(head[len("phase"):])
            attr, cast = casts[sub]
            fields.setdefault(phase, {})[attr] = cast(value)
        except (ValueError, KeyError):
            raise ValueError(f"line {lineno}: bad phase setting {key!r}={value!r}") from None
    phases = []
    for phase in sorted(fields):
        if phase not in defaults:
            raise ValueError(f"unknown phase {phase}")
        phases.append(replace(defaults[phase], **fields[phase]))
    return phases, extra


def load_phase_config(path) -> tuple[list[PhaseConfig], dict[str, str]]:
    return parse_phase_config(Path(path).read_text())


def save_checkpoint(head: WeightHead, state: AdamState, path) -> None:
    parts = [_head_bytes(head), STATE_MAGIC, struct.pack("<I", state.step)]
    for t in (*state.m, *state.v):
        parts.append(np.ascontiguousarray(t, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_checkpoint(path) -> tuple[WeightHead, AdamState | None]:
    """Read a head file, plus the optimizer state when one is appended."""
    buf = Path(path).read_bytes()
    head, pos = read_head(buf)
    if pos == len(buf):
        return head, None
    if buf[pos : pos + 8] != STATE_MAGIC:
        raise ValueError("unrecognized data after weight head")
    (step,) = struct.unpack_from("<I", buf, pos + 8)
    pos += 12
    tensors = []
    for t in (*head.tensors(), *head.tensors()):
        count = t.size
        if len(buf) < pos + 4 * count:
            raise ValueError("truncated optimizer state")
        tensors.append(np.frombuffer(buf, dtype="<f4", count=count, offset=pos).reshape(t.shape).astype(np.float32))
        pos += 4 * count
    n = len(head.tensors())
    return head, AdamState(step, tensors[:n], tensors[n:])
