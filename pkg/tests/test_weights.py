import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bokeh_blend.blend import spatial_softmax
from bokeh_blend.weights import (
    HEAD_MAGIC,
    FocusParams,
    WeightHead,
    conv3x3,
    conv3x3_backward,
    depth_to_logits,
    hard_weights,
    head_forward,
    head_init,
    load_head,
    read_head,
    save_head,
)


def naive_conv(x, weight, bias):
    """Per-pixel loops over a reflect-101 padded input."""
    cin, h, w = x.shape
    p = np.pad(x, ((0, 0), (1, 1), (1, 1)), mode="reflect")
    out = np.zeros((weight.shape[0], h, w))
    for o in range(weight.shape[0]):
        for y in range(h):
            for xx in range(w):
                out[o, y, xx] = np.sum(weight[o] * p[:, y : y + 3, xx : xx + 3]) + bias[o]
    return out


def test_focus_params_validation():
    with pytest.raises(ValueError):
        FocusParams(focus_depth=1.5)
    with pytest.raises(ValueError):
        FocusParams(tau=0)
    assert FocusParams.for_levels(3).level_centers == (0.0, 0.5, 1.0)


def test_logits_prefer_nearest_level():
    depth = np.array([[0.0, 1 / 3, 2 / 3, 1.0]], dtype=np.float32)
    w = spatial_softmax(depth_to_logits(depth, FocusParams()))
    np.testing.assert_array_equal(np.argmax(w, axis=0)[0], [0, 1, 2, 3])
    assert w[0, 0, 0] > 0.9


def test_focus_plane_stays_sharp():
    depth = np.full((2, 2), 0.6, dtype=np.float32)
    hw = hard_weights(depth, FocusParams(focus_depth=0.6))
    assert np.all(hw[0] == 1)


def test_hard_weights_ties_go_low():
    depth = np.array([[1 / 6]], dtype=np.float64)
    hw = hard_weights(depth, FocusParams())
    assert hw[:, 0, 0].tolist() == [1, 0, 0, 0]


def test_hard_is_limit_of_softmax():
    depth = np.random.default_rng(0).choice([0.02, 0.3, 0.7, 0.97], size=(5, 5)).astype(np.float32)
    soft = spatial_softmax(depth_to_logits(depth, FocusParams(tau=1e-4)))
    np.testing.assert_allclose(soft, hard_weights(depth, FocusParams()), atol=1e-6)


def test_init_is_deterministic_and_scaled():
    a, b = head_init(7, 4), head_init(7, 4)
    assert a.equals(b) and not a.equals(head_init(8, 4))
    assert np.all(np.abs(a.conv1_w) <= np.sqrt(6 / 36))
    assert np.all(np.abs(a.conv2_w) <= 0.01 * np.sqrt(6 / 72))
    assert not a.conv1_b.any() and not a.conv2_b.any()


def test_conv_matches_naive():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 5, 6))
    weight = rng.normal(size=(3, 4, 3, 3))
    bias = rng.normal(size=3)
    np.testing.assert_allclose(conv3x3(x, weight, bias), naive_conv(x, weight, bias), atol=1e-12)


def test_conv_backward_is_adjoint():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 4, 5))
    weight = rng.normal(size=(3, 2, 3, 3))
    g = rng.normal(size=(3, 4, 5))
    gx, gw, gb = conv3x3_backward(x, weight, g)
    # <conv(x), g> is linear in x and in weight
    zero = np.zeros(3)
    assert np.sum(conv3x3(x, weight, zero) * g) == pytest.approx(np.sum(gx * x))
    assert np.sum(conv3x3(x, weight, zero) * g) == pytest.approx(np.sum(gw * weight))
    np.testing.assert_allclose(gb, g.sum(axis=(1, 2)))


def test_head_translation_equivariance():
    rng = np.random.default_rng(3)
    head = head_init(0, 4)
    img = rng.random((3, 12, 12)).astype(np.float32)
    depth = rng.random((12, 12)).astype(np.float32)
    full = head_forward(img, depth, head)
    shifted = head_forward(np.roll(img, 3, axis=2), np.roll(depth, 3, axis=1), head)
    # away from borders a shift of the input shifts the logits
    np.testing.assert_allclose(shifted[:, 2:-2, 5:-2], full[:, 2:-2, 2:-5], atol=1e-6)


def test_head_shape_validation():
    h = head_init(0, 3)
    with pytest.raises(ValueError):
        WeightHead(h.conv1_w, h.conv1_b, h.conv2_w, np.zeros(4, dtype=np.float32))
    with pytest.raises(ValueError):
        WeightHead(h.conv1_w * np.nan, h.conv1_b, h.conv2_w, h.conv2_b)


def test_serialization_roundtrip(tmp_path):
    head = head_init(5, 3)
    save_head(head, tmp_path / "h.bin")
    raw = (tmp_path / "h.bin").read_bytes()
    assert raw.startswith(HEAD_MAGIC)
    assert load_head(tmp_path / "h.bin").equals(head)
    back, end = read_head(raw)
    assert end == len(raw)
    with pytest.raises(ValueError):
        read_head(raw[:-3])
    with pytest.raises(ValueError):
        read_head(b"XXXX" + raw[4:])


@settings(max_examples=20, deadline=None)
@given(st.floats(0, 1), st.floats(0.01, 1.0), st.integers(2, 6))
def test_logits_give_valid_weights(focus, tau, levels):
    depth = np.random.default_rng(levels).random((6, 6)).astype(np.float32)
    w = spatial_softmax(depth_to_logits(depth, FocusParams.for_levels(levels, focus, tau)))
    assert w.shape == (levels, 6, 6)
    assert np.all(w >= 0) and np.all(w <= 1)
    np.testing.assert_allclose(w.sum(axis=0), 1, atol=1e-5)
