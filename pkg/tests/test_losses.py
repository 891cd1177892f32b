"""Tests for the masked losses and their analytic gradients."""

import numpy as np
import pytest
import torch

from aaa_toolkit.errors import NumericInputError, ShapeError
from aaa_toolkit.losses import (
    SliceTensor,
    baseline_dice_loss,
    batch_loss,
    batch_loss_grad,
    combined_loss,
    combined_loss_grad,
    effective_loss_config,
    masked_bce_loss,
    masked_combined_loss,
    masked_dice_loss,
)
from aaa_toolkit.schemas import BaselineObjective, LossMode, MaskedLossConfig

CFG = MaskedLossConfig()


def _random_tensor(rng, n_side=8, allow_fraction=0.7):
    n = n_side * n_side
    return SliceTensor(
        P=rng.uniform(0.05, 0.95, n),
        Y=(rng.random(n) < 0.4).astype(float),
        A=(rng.random(n) < allow_fraction).astype(float),
        H=n_side,
        W=n_side,
    )


def _with_p(t, p):
    return SliceTensor(P=p, Y=t.Y, A=t.A, H=t.H, W=t.W)


def test_gradient_matches_finite_differences():
    """Test the analytic gradient against central differences on random slices."""
    rng = np.random.default_rng(0)
    h = 1e-6

    for _ in range(100):
        t = _random_tensor(rng)
        analytic = combined_loss_grad(t, CFG)
        numeric = np.empty(t.N)
        for i in range(t.N):
            up, down = t.P.copy(), t.P.copy()
            up[i] += h
            down[i] -= h
            numeric[i] = (combined_loss(_with_p(t, up), CFG) - combined_loss(_with_p(t, down), CFG)) / (2 * h)

        error = np.linalg.norm(analytic - numeric) / max(np.linalg.norm(numeric), 1e-12)
        assert error < 1e-5


def test_excluded_pixels_do_not_matter():
    """Test that predictions where A = 0 change neither loss nor gradient."""
    rng = np.random.default_rng(1)
    t = _random_tensor(rng, allow_fraction=0.5)
    excluded = t.A == 0
    p = t.P.copy()
    p[excluded] = rng.random(int(excluded.sum()))
    other = _with_p(t, p)

    assert combined_loss(other, CFG) == combined_loss(t, CFG)
    assert masked_dice_loss(other, CFG) == masked_dice_loss(t, CFG)
    assert masked_bce_loss(other, CFG) == masked_bce_loss(t, CFG)
    grad = combined_loss_grad(t, CFG)
    assert np.all(grad[excluded] == 0.0)
    np.testing.assert_array_equal(combined_loss_grad(other, CFG), grad)


def test_all_ones_allow_equals_baseline_mode():
    """Test that A = 1 everywhere reproduces the unmasked loss exactly."""
    rng = np.random.default_rng(2)
    t = _random_tensor(rng, allow_fraction=1.1)
    baseline = CFG.model_copy(update={"baseline_mode": True})

    assert combined_loss(t, CFG) == combined_loss(t, baseline)
    np.testing.assert_array_equal(combined_loss_grad(t, CFG), combined_loss_grad(t, baseline))


def test_baseline_mode_ignores_allow_mask():
    """Test that baseline mode counts excluded false positives."""
    t = SliceTensor(
        P=np.array([1.0, 0.9, 0.0, 0.0]),
        Y=np.array([1.0, 0.0, 0.0, 0.0]),
        A=np.array([1.0, 0.0, 1.0, 1.0]),
        H=2,
        W=2,
    )

    assert masked_dice_loss(t, CFG) < 1e-6
    assert baseline_dice_loss(t, CFG) > 0.25


def test_dice_empty_ground_truth_and_prediction():
    """Test that an empty prediction on an empty slice has zero Dice loss."""
    t = SliceTensor(P=np.zeros(16), Y=np.zeros(16), A=np.ones(16), H=4, W=4)

    assert masked_dice_loss(t, CFG) == 0.0


def test_bce_is_finite_at_saturated_predictions():
    """Test the clamp on P = 0 and P = 1 and the zero gradient it implies."""
    t = SliceTensor(P=np.array([0.0, 1.0, 0.0, 1.0]), Y=np.array([1.0, 0.0, 0.0, 1.0]), A=np.ones(4), H=2, W=2)
    bce_only = CFG.model_copy(update={"w": 1.0})

    loss = masked_bce_loss(t, CFG)

    assert np.isfinite(loss)
    assert loss == pytest.approx(-np.log(1e-7) / 2.0, rel=1e-5)
    assert np.all(combined_loss_grad(t, bce_only) == 0.0)


def test_slice_tensor_validation():
    """Test shape and value checks on construction."""
    with pytest.raises(ShapeError):
        SliceTensor(P=np.zeros(5), Y=np.zeros(4), A=np.zeros(4), H=2, W=2)
    with pytest.raises(NumericInputError):
        SliceTensor(P=np.array([0.1, np.nan, 0.2, 0.3]), Y=np.zeros(4), A=np.zeros(4), H=2, W=2)
    with pytest.raises(NumericInputError):
        SliceTensor(P=np.array([0.1, 1.5, 0.2, 0.3]), Y=np.zeros(4), A=np.zeros(4), H=2, W=2)
    with pytest.raises(NumericInputError):
        SliceTensor(P=np.zeros(4), Y=np.array([0.0, 0.5, 1.0, 0.0]), A=np.zeros(4), H=2, W=2)


def test_from_maps_flattens_x_fastest():
    """Test the flattening order of 2D [x, y] maps."""
    prob = np.array([[0.1, 0.2, 0.3], [0.4, 0.5, 0.6]])

    t = SliceTensor.from_maps(prob, np.zeros((2, 3)), np.ones((2, 3)))

    assert (t.W, t.H) == (2, 3)
    assert t.P.tolist() == [0.1, 0.4, 0.2, 0.5, 0.3, 0.6]
    with pytest.raises(ShapeError):
        SliceTensor.from_maps(prob, np.zeros((3, 2)), np.ones((2, 3)))


def test_effective_loss_config():
    """Test the loss each training mode optimizes."""
    assert effective_loss_config(CFG, LossMode.ANATOMY_AWARE) == CFG

    dice = effective_loss_config(CFG, LossMode.BASELINE)
    assert dice.baseline_mode and dice.w == 0.0

    combined = effective_loss_config(CFG, LossMode.BASELINE, BaselineObjective.COMBINED)
    assert combined.baseline_mode and combined.w == CFG.w


def test_batch_loss_is_slice_mean():
    """Test batch averaging of losses and gradients."""
    rng = np.random.default_rng(3)
    tensors = [_random_tensor(rng) for _ in range(3)]

    assert batch_loss(tensors, CFG) == pytest.approx(np.mean([combined_loss(t, CFG) for t in tensors]))
    grads = batch_loss_grad(tensors, CFG)
    np.testing.assert_allclose(grads[1], combined_loss_grad(tensors[1], CFG) / 3.0)
    with pytest.raises(ShapeError):
        batch_loss([], CFG)


def test_autograd_function_uses_analytic_gradient():
    """Test that backward of the torch loss returns the numpy gradient maps."""
    rng = np.random.default_rng(4)
    probs = torch.tensor(rng.uniform(0.05, 0.95, (2, 1, 6, 5)), dtype=torch.float64, requires_grad=True)
    gt = (rng.random((2, 6, 5)) < 0.5).astype(float)
    allow = (rng.random((2, 6, 5)) < 0.8).astype(float)

    loss = masked_combined_loss(probs, gt, allow, CFG)
    loss.backward()

    p = probs.detach().numpy()
    tensors = [SliceTensor.from_maps(p[b, 0], gt[b], allow[b]) for b in range(2)]
    assert loss.item() == pytest.approx(batch_loss(tensors, CFG))
    expected = batch_loss_grad(tensors, CFG)
    for b in range(2):
        np.testing.assert_allclose(probs.grad[b, 0].numpy(), expected[b].reshape(6, 5, order="F"))
