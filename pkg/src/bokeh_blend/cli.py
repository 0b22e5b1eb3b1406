"""Command-line entry point: ``bokeh {render,train,eval,synth,bench,baseline}``."""

from __future__ import annotations

import argparse
import logging
import shutil
import statistics
import sys
import time
from pathlib import Path

import numpy as np

from . import blur
from .baseline import BASELINE_KERNEL, center_prior_saliency, saliency_bokeh
from .blend import blend, spatial_softmax
from .image_core import ImageError, load_image, load_plane, save_image
from .metrics import evaluate_pairs
from .render import render_bokeh
from .synthetic import gen_scene, load_dataset, random_scene_spec, write_dataset
from .train import (
    DEFAULT_KERNELS,
    PhaseConfig,
    load_checkpoint,
    load_phase_config,
    run_training,
    save_checkpoint,
)
from .weights import FocusParams, depth_to_logits

log = logging.getLogger("bokeh_blend")


class CommandError(Exception):
    """A user-facing failure; reported without a traceback."""


def parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return w, h


def parse_kernels(text: str) -> tuple[int, ...]:
    try:
        sizes = tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated odd sizes, got {text!r}") from None
    if not sizes or any(k < 1 or k % 2 == 0 for k in sizes):
        raise argparse.ArgumentTypeError(f"kernel sizes must be positive and odd, got {text!r}")
    return sizes


class _Outputs:
    """Tracks written files so a failed command can remove them."""

    def __init__(self):
        self.paths: list[Path] = []

    def add(self, path) -> Path:
        path = Path(path)
        self.paths.append(path)
        return path

    def rollback(self) -> None:
        for p in reversed(self.paths):
            if p.is_dir():
                shutil.rmtree(p, ignore_errors=True)
            elif p.exists():
                p.unlink()


def desk_phases(width: int, height: int, sizes) -> list[PhaseConfig]:
    """Default schedule for small datasets: phase 1 at half resolution when the kernels allow."""
    half_w, half_h = max(2, width // 2), max(2, height // 2)
    if max(sizes) > 2 * min(half_w, half_h) + 1:
        half_w, half_h = width, height
    return [
        PhaseConfig(1, half_w, half_h, "l1", 500, 1e-3, 1e-4),
        PhaseConfig(2, width, height, "l1", 200, 3e-4, 3e-5),
        PhaseConfig(3, width, height, "ssim", 200, 1e-4, 1e-5),
    ]


def cmd_render(args) -> int:
    img = load_image(args.input)
    if img.shape[0] == 1:
        img = np.repeat(img, 3, axis=0)
    depth = load_plane(args.depth)
    head = None
    focus = None
    if args.model:
        head, _ = load_checkpoint(args.model)
    else:
        focus = FocusParams.for_levels(len(args.kernels) + 1, args.focus, args.tau)
    out, weights = render_bokeh(
        img, depth, args.kernels, focus=focus, hard=args.hard, head=head,
        proc_size=args.proc_size, threads=args.threads,
    )
    outputs = _Outputs()
    try:
        save_image(out, outputs.add(args.out))
        if args.dump_weights:
            wdir = Path(args.dump_weights)
            if not wdir.exists():
                outputs.add(wdir)
            wdir.mkdir(parents=True, exist_ok=True)
            for i, plane in enumerate(weights):
                save_image(plane, outputs.add(wdir / f"W{i}.png"))
    except Exception:
        outputs.rollback()
        raise
    log.info("wrote %s", args.out)
    return 0


def cmd_train(args) -> int:
    names, dataset = load_dataset(args.data)
    sizes = args.kernels
    if args.phases:
        phases, extra = load_phase_config(args.phases)
        if sizes is None and "kernels" in extra:
            sizes = parse_kernels(extra["kernels"])
    else:
        _, h, w = dataset[0].input.shape
        phases = desk_phases(w, h, sizes or DEFAULT_KERNELS)
    sizes = sizes or DEFAULT_KERNELS
    log.info("training on %d pairs, kernels %s", len(dataset), ",".join(map(str, sizes)))
    result = run_training(dataset, phases, seed=args.seed, sizes=sizes)
    ran = [cfg for cfg in phases if cfg.iterations > 0]
    for cfg, loss in zip(ran, result.phase_losses):
        print(f"phase {cfg.phase}: {cfg.iterations} iterations at {cfg.train_w}x{cfg.train_h}, final {cfg.loss} loss {loss:.6f}")
    try:
        save_checkpoint(result.head, result.state, args.out)
    except Exception:
        Path(args.out).unlink(missing_ok=True)
        raise
    return 0


def cmd_eval(args) -> int:
    report = evaluate_pairs(args.pred, args.gt)
    if args.csv:
        try:
            report.write_csv(args.csv)
        except Exception:
            Path(args.csv).unlink(missing_ok=True)
            raise
    print(f"{len(report.rows)} images: mean PSNR {report.mean_psnr:.4f} dB, mean SSIM {report.mean_ssim:.4f}")
    return 0


def cmd_synth(args) -> int:
    out = Path(args.out)
    outputs = _Outputs()
    if not out.exists():
        outputs.add(out)
    try:
        focus = FocusParams.for_levels(len(args.kernels) + 1, args.focus, args.tau)
        write_dataset(out, args.count, args.seed, *args.size, sizes=args.kernels, focus=focus, n_regions=args.regions)
    except Exception:
        if outputs.paths:
            outputs.rollback()
        else:
            for sub in ("input", "depth", "target"):
                shutil.rmtree(out / sub, ignore_errors=True)
            (out / "manifest.json").unlink(missing_ok=True)
        raise
    print(f"wrote {args.count} scenes to {out}")
    return 0


def time_render(img, depth, sizes, focus: FocusParams, threads: int, iters: int) -> list[float]:
    """Wall times of blur stack + parametric weights + blend; no file access inside."""
    times = []
    for _ in range(iters):
        t0 = time.perf_counter()
        stack = blur.blur_stack(img, sizes, threads=threads)
        weights = spatial_softmax(depth_to_logits(depth, focus))
        blend(img, stack, weights)
        times.append(time.perf_counter() - t0)
    return times


def cmd_bench(args) -> int:
    w, h = args.size
    img, depth = gen_scene(random_scene_spec(args.seed, w, h, n_regions=4))
    focus = FocusParams.for_levels(len(args.kernels) + 1)
    effective = max(1, min(args.threads, blur.max_threads()))
    # warm-up compiles the blur kernels outside the timed region
    blur.blur_stack(img[:, :8, :8], (3,), threads=effective)
    times = time_render(img, depth, args.kernels, focus, effective, args.iters)
    print(
        f"bench size={w}x{h} kernels={','.join(map(str, args.kernels))} threads={args.threads} "
        f"(effective {effective}) iters={args.iters} median={statistics.median(times):.4f}s min={min(times):.4f}s"
    )
    return 0


def cmd_baseline(args) -> int:
    img = load_image(args.input)
    if args.saliency:
        sal = load_plane(args.saliency)
    else:
        sal = center_prior_saliency(img.shape[2], img.shape[1])
    out = saliency_bokeh(img, sal, args.kernel)
    try:
        save_image(out, args.out)
    except Exception:
        Path(args.out).unlink(missing_ok=True)
        raise
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bokeh", description="Depth-guided bokeh rendering by blending smoothed images.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", help="render a bokeh image from an image and its depth map")
    p.add_argument("--input", required=True)
    p.add_argument("--depth", required=True, help="depth map, 0 = near, 1 = far")
    p.add_argument("--model", help="weight-head checkpoint; overrides --focus/--tau/--hard")
    p.add_argument("--out", required=True)
    p.add_argument("--kernels", type=parse_kernels, default=DEFAULT_KERNELS)
    p.add_argument("--focus", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--hard", action="store_true", help="one-hot weights at the nearest level")
    p.add_argument("--proc-size", type=parse_size, default=(1024, 768), help="processing size WxH")
    p.add_argument("--dump-weights", metavar="DIR", help="write one grayscale PNG per weight map")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("train", help="train the weight head on a synthetic dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--phases", help="phaseN.key=value config file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kernels", type=parse_kernels, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="PSNR/SSIM of predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="write a synthetic dataset with exact targets")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=parse_size, default=(64, 64))
    p.add_argument("--kernels", type=parse_kernels, default=DEFAULT_KERNELS)
    p.add_argument("--focus", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=0.05)
    p.add_argument("--regions", type=int, default=None, help="regions per scene (default: random 2-6)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("bench", help="time blur stack + weights + blend, I/O excluded")
    p.add_argument("--size", type=parse_size, default=(1024, 1536))
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--kernels", type=parse_kernels, default=DEFAULT_KERNELS)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("baseline", help="saliency-masked baseline with a 75x75 background blur")
    p.add_argument("--input", required=True)
    p.add_argument("--saliency", help="grayscale saliency map (default: centered ellipse)")
    p.add_argument("--kernel", type=int, default=BASELINE_KERNEL)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ImageError, OSError, ValueError, CommandError) as exc:
        print(f"bokeh {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
