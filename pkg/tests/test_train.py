import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cosnet.errors import ConfigError, NonFiniteError
from cosnet.model import ModelConfig, build_model
from cosnet.params import ParamStore
from cosnet.train import (
    OptimState,
    ToySpec,
    generate_toy_dataset,
    optimizer_step,
    poly_lr,
    train_toy,
)

SMALL = ModelConfig(stage_channels=(4, 8, 8, 8), stage_depths=(1, 1, 1, 1), decoder_width=8, num_classes=3, mlp_ratio=2)


def _store(**arrays):
    s = ParamStore()
    for k, v in arrays.items():
        s.add(k, np.array(v, dtype=np.float64))
    return s


# --- schedule ------------------------------------------------------------------


def test_poly_lr_examples():
    assert poly_lr(0, 100, 1e-3) == 1e-3
    assert poly_lr(50, 100, 1e-3) == pytest.approx(5e-4)
    assert poly_lr(100, 100, 1e-3) == 0.0
    assert poly_lr(75, 100, 1.0, power=2.0) == pytest.approx(0.0625)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 500), st.floats(0.1, 3.0))
def test_poly_lr_monotone(total, power):
    lrs = [poly_lr(i, total, 1.0, power) for i in range(total + 1)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))


@pytest.mark.parametrize("it,total", [(-1, 10), (11, 10), (0, 0)])
def test_poly_lr_rejects_out_of_range(it, total):
    with pytest.raises(ValueError):
        poly_lr(it, total, 1e-3)


# --- AdamW ---------------------------------------------------------------------


def test_adamw_first_step_by_hand():
    s = _store(w=[1.0])
    optimizer_step(s, {"w": np.array([0.5])}, OptimState(lr=0.1, weight_decay=0.01))
    # decay first: 1 - 0.1*0.01 = 0.999; bias-corrected m/sqrt(v) = 0.5/0.5
    expected = 0.999 - 0.1 * 0.5 / (0.5 + 1e-8)
    assert s["w"].data[0] == pytest.approx(expected, abs=1e-15)


def test_adamw_zero_grad_zero_decay_is_identity():
    s = _store(w=[[1.5, -2.0]])
    before = s["w"].data.copy()
    optimizer_step(s, {"w": np.zeros((1, 2))}, OptimState(weight_decay=0.0))
    np.testing.assert_array_equal(s["w"].data, before)


def test_adamw_converges_on_quadratic_bowl():
    target = np.array([3.0, -1.0, 0.5])
    s = _store(w=np.zeros(3))
    st_ = OptimState(lr=0.1, weight_decay=0.0)
    for _ in range(200):
        optimizer_step(s, {"w": 2 * (s["w"].data - target)}, st_)
    np.testing.assert_allclose(s["w"].data, target, atol=0.05)


def test_adamw_names_non_finite_parameter():
    s = _store(a=[1.0], b=[2.0])
    with pytest.raises(NonFiniteError, match="'b'"):
        optimizer_step(s, {"a": np.array([0.1]), "b": np.array([np.inf])}, OptimState())
    assert s["a"].data[0] == 1.0  # nothing applied


# --- synthetic data ------------------------------------------------------------


def _paint_reference(shapes, size):
    """Per-pixel rasteriser written independently of the vectorised one."""
    labels = np.zeros((size, size), dtype=np.int64)
    for y in range(size):
        for x in range(size):
            for sh in shapes:
                dy = (y + 0.5 - sh.cy) / sh.half_h
                dx = (x + 0.5 - sh.cx) / sh.half_w
                inside = dy * dy + dx * dx <= 1 if sh.kind == "disk" else abs(dy) <= 1 and abs(dx) <= 1
                if inside:
                    labels[y, x] = sh.label
    return labels


def test_dataset_is_deterministic():
    a = generate_toy_dataset(ToySpec(seed=4))
    b = generate_toy_dataset(ToySpec(seed=4))
    assert a.tobytes() == b.tobytes()
    assert generate_toy_dataset(ToySpec(seed=5)).tobytes() != a.tobytes()


def test_dataset_contents():
    data = generate_toy_dataset(ToySpec(seed=0))
    assert data.images.shape == (8, 3, 64, 64) and data.labels.shape == (8, 64, 64)
    assert 0.0 <= data.images.min() and data.images.max() <= 1.0
    assert set(np.unique(data.labels)) == {0, 1, 2, 3, 4}


@pytest.mark.parametrize("seed", [0, 1])
def test_labels_match_reference_rasteriser(seed):
    data = generate_toy_dataset(ToySpec(seed=seed, num_images=3, size=32))
    for shapes, labels in zip(data.shapes, data.labels):
        np.testing.assert_array_equal(labels, _paint_reference(shapes, 32))


def test_shape_pixels_carry_shape_colour():
    data = generate_toy_dataset(ToySpec(seed=2, num_images=2))
    img = data.images[0].transpose(1, 2, 0)
    top = data.shapes[0][-1]
    # the last-painted shape owns its centre
    cy, cx = int(top.cy), int(top.cx)
    assert data.labels[0, cy, cx] == top.label
    np.testing.assert_allclose(img[cy, cx], top.color)


def test_toy_spec_validation():
    with pytest.raises(ConfigError):
        ToySpec(size=50)
    with pytest.raises(ConfigError):
        ToySpec(num_classes=6)


# --- loop ------------------------------------------------------------------------


def test_zero_iterations_leave_params_untouched():
    data = generate_toy_dataset(ToySpec(seed=0, num_images=2, size=32, num_classes=3))
    params = build_model(SMALL, 1)
    before = params.tobytes()
    result = train_toy(SMALL, data, 0, params=params)
    assert result.losses == [] and result.params.tobytes() == before


def test_short_run_lowers_loss_and_reports_steps():
    data = generate_toy_dataset(ToySpec(seed=0, num_images=2, size=32, num_classes=3))
    seen = []
    result = train_toy(SMALL, data, 15, seed=0, lr=3e-3, on_step=lambda i, l, lr: seen.append((i, lr)))
    assert [i for i, _ in seen] == list(range(15))
    assert seen[0][1] == 3e-3 and seen[-1][1] == pytest.approx(3e-3 / 15)
    assert result.final_loss < result.losses[0]


def test_training_is_deterministic():
    data = generate_toy_dataset(ToySpec(seed=0, num_images=2, size=32, num_classes=3))
    a = train_toy(SMALL, data, 3, seed=2)
    b = train_toy(SMALL, data, 3, seed=2)
    assert a.params.tobytes() == b.params.tobytes() and a.losses == b.losses


def test_class_count_mismatch_is_rejected():
    data = generate_toy_dataset(ToySpec(num_images=1, size=32, num_classes=4))
    with pytest.raises(ConfigError):
        train_toy(SMALL, data, 1)


def test_ablation_row1_trains():
    cfg = SMALL.ablation(1)
    data = generate_toy_dataset(ToySpec(seed=0, num_images=2, size=32, num_classes=3))
    result = train_toy(cfg, data, 5, lr=3e-3)
    assert np.isfinite(result.final_loss)
