"""Tests for the Adam update."""

import numpy as np
import pytest
import torch
from torch import nn

from aaa_toolkit.errors import ShapeError
from aaa_toolkit.optim import AdamState, TorchAdam, adam_step


def test_first_step_moves_by_learning_rate():
    """Test that bias correction makes the first step lr * sign(g)."""
    params = {"w": np.array([1.0, -2.0, 0.5])}
    grads = {"w": np.array([0.3, -4.0, 1e-3])}

    new, state = adam_step(params, grads, AdamState(), lr=0.01)

    expected = params["w"] - 0.01 * grads["w"] / (np.abs(grads["w"]) + 1e-8)
    np.testing.assert_allclose(new["w"], expected, rtol=1e-12)
    assert state.t == 1
    np.testing.assert_allclose(state.m["w"], 0.1 * grads["w"])
    np.testing.assert_allclose(state.v["w"], 0.001 * grads["w"] ** 2)
    assert params["w"].tolist() == [1.0, -2.0, 0.5]


def test_minimizes_quadratic():
    """Test convergence on f(x) = |x|^2 / 2."""
    params = {"x": np.array([3.0, -1.5])}
    state = AdamState()

    for _ in range(2000):
        params, state = adam_step(params, {"x": params["x"].copy()}, state, lr=0.05)

    assert np.linalg.norm(params["x"]) < 1e-2


def test_mismatched_gradients():
    """Test key and shape checks."""
    params = {"w": np.zeros(3)}

    with pytest.raises(ShapeError):
        adam_step(params, {"v": np.zeros(3)}, AdamState(), lr=0.1)
    with pytest.raises(ShapeError):
        adam_step(params, {"w": np.zeros(4)}, AdamState(), lr=0.1)


def test_torch_adam_updates_module():
    """Test that TorchAdam applies the update to module parameters."""
    torch.manual_seed(0)
    layer = nn.Linear(3, 1).to(torch.float64)
    before = {name: p.detach().clone() for name, p in layer.named_parameters()}
    optimizer = TorchAdam(layer, lr=0.1)

    optimizer.zero_grad()
    layer(torch.ones(4, 3, dtype=torch.float64)).sum().backward()
    grads = {name: p.grad.detach().clone() for name, p in layer.named_parameters()}
    optimizer.step()

    for name, p in layer.named_parameters():
        torch.testing.assert_close(p.detach(), before[name] - 0.1 * torch.sign(grads[name]), rtol=0, atol=1e-6)
    assert optimizer.state.t == 1
