import numpy as np
import pytest

from bokeh_blend.blur import blur_stack
from bokeh_blend.train import (
    AdamHyper,
    AdamState,
    PhaseConfig,
    SamplePair,
    adam_step,
    backward,
    grad_check,
    load_checkpoint,
    parse_phase_config,
    run_training,
    save_checkpoint,
)
from bokeh_blend.weights import FocusParams, WeightHead, head_init, hard_weights
from bokeh_blend.blend import blend

SIZES = (3, 5, 7)


def _head(seed, scale=0.1):
    """A head far enough from init that every level is in play."""
    rng = np.random.default_rng(seed)
    h = head_init(seed, len(SIZES) + 1)
    return WeightHead(
        h.conv1_w.astype(np.float64),
        rng.normal(scale=0.05, size=h.conv1_b.shape),
        rng.normal(scale=scale, size=h.conv2_w.shape),
        rng.normal(scale=scale, size=h.conv2_b.shape),
    )


def _sample(seed, h=10, w=9):
    rng = np.random.default_rng(seed)
    img = rng.random((3, h, w))
    depth = rng.choice([0.0, 0.35, 0.65, 1.0], size=(h, w))
    target = blend(img, blur_stack(img, SIZES), hard_weights(depth, FocusParams()))
    return SamplePair(img, depth, target)


def _grad_ones(head):
    return WeightHead(*(np.ones_like(t) for t in head.tensors()))


def test_adam_first_step_closed_form():
    head = head_init(0, 4)
    new, state = adam_step(head, _grad_ones(head), AdamState.zeros_like(head), AdamHyper())
    for a, b in zip(new.tensors(), head.tensors()):
        np.testing.assert_allclose(a - b, -1e-3 / (1 + 1e-8), rtol=1e-4)
    assert state.step == 1


def test_adam_second_step_by_hand():
    head = head_init(0, 2).astype(np.float64)
    g1, g2 = 2.0, -1.0
    hyper = AdamHyper()
    grads1 = WeightHead(*(np.full_like(t, g1) for t in head.tensors()))
    grads2 = WeightHead(*(np.full_like(t, g2) for t in head.tensors()))
    h1, s1 = adam_step(head, grads1, AdamState.zeros_like(head), hyper)
    h2, _ = adam_step(h1, grads2, s1, hyper)
    m = 0.9 * 0.1 * g1 + 0.1 * g2
    v = 0.999 * 0.001 * g1**2 + 0.001 * g2**2
    step2 = -1e-3 * (m / (1 - 0.9**2)) / (np.sqrt(v / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(h2.conv2_b - h1.conv2_b, step2, rtol=1e-10)


def test_adam_leaves_inputs_untouched():
    head = head_init(1, 3)
    before = head.copy()
    state = AdamState.zeros_like(head)
    adam_step(head, _grad_ones(head), state, AdamHyper())
    assert head.equals(before) and state.step == 0 and not state.m[0].any()


@pytest.mark.parametrize("seed", range(3))
def test_grad_check_l1(seed):
    assert grad_check(_head(seed), _sample(seed), "l1", SIZES) <= 1e-4


@pytest.mark.parametrize("seed", range(2))
def test_grad_check_ssim(seed):
    sample = _sample(seed, 12, 11)
    assert grad_check(_head(seed), sample, "ssim", SIZES) <= 1e-3


def test_grad_check_catches_mutation():
    head, sample = _head(0), _sample(0)
    _, grads = backward(sample, head, SIZES, "l1")
    grads.conv2_b[1] *= 2
    assert grad_check(head, sample, "l1", SIZES, analytic=grads) > 0.3


def test_lr_schedule_endpoints():
    cfg = PhaseConfig(1, 8, 8, "l1", 5, 1e-3, 1e-5)
    assert cfg.lr(0) == pytest.approx(1e-3)
    assert cfg.lr(4) == pytest.approx(1e-5)
    assert cfg.lr(2) == pytest.approx(1e-4)


def test_zero_iterations_returns_init():
    result = run_training([_sample(0)], [PhaseConfig(1, 9, 10, "l1", 0)], seed=3, sizes=SIZES)
    assert result.head.equals(head_init(3, 4))
    assert result.phase_losses == []


def test_training_deterministic_and_improves():
    data = [_sample(s, 12, 12) for s in range(3)]
    phases = [PhaseConfig(1, 12, 12, "l1", 40, 1e-2, 1e-3)]
    a = run_training(data, phases, seed=1, sizes=SIZES)
    b = run_training(data, phases, seed=1, sizes=SIZES)
    assert a.head.equals(b.head)
    assert a.phase_losses == b.phase_losses
    start = run_training(data, [PhaseConfig(1, 12, 12, "l1", 1, 1e-12, 1e-12)], seed=1, sizes=SIZES)
    assert a.phase_losses[0] < start.phase_losses[0]


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        run_training([], [PhaseConfig(1, 8, 8, "l1", 1)])


def test_parse_phase_config():
    text = """
    # desk schedule
    phase1.width=64
    phase1.height=48
    phase1.iterations=10
    phase3.loss=ssim
    phase3.lr_start=2e-4
    kernels=25,45,75
    """
    phases, extra = parse_phase_config(text)
    assert [p.phase for p in phases] == [1, 3]
    assert (phases[0].train_w, phases[0].train_h, phases[0].iterations) == (64, 48, 10)
    assert phases[1].lr_start == 2e-4 and phases[1].train_w == 1024
    assert extra == {"kernels": "25,45,75"}
    for bad in ("phase1.width", "phase9.width=3", "phase1.colour=red", "phase2.loss=l2"):
        with pytest.raises(ValueError):
            parse_phase_config(bad)


def test_checkpoint_roundtrip(tmp_path):
    head = head_init(2, 4)
    _, state = adam_step(head, _grad_ones(head), AdamState.zeros_like(head), AdamHyper())
    save_checkpoint(head, state, tmp_path / "c.bin")
    back, back_state = load_checkpoint(tmp_path / "c.bin")
    assert back.equals(head)
    assert back_state.step == 1
    for a, b in zip(back_state.m + back_state.v, state.m + state.v):
        np.testing.assert_array_equal(a, b)
    raw = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "t.bin")
