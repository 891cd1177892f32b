"""Adam with bias correction on float64 parameter dictionaries."""

import logging
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from aaa_toolkit.errors import ShapeError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Step counter and first/second moment estimates per parameter."""

    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """
    One Adam update; inputs are left untouched.

    Raises:
        ShapeError: grads keys or shapes differ from params
    """
    if set(params) != set(grads):
        raise ShapeError(f"gradient keys {sorted(grads)} do not match parameters {sorted(params)}")
    t = state.t + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, value in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != value.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter has {value.shape}")
        m = beta1 * state.m.get(name, np.zeros_like(value)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(value)) + (1.0 - beta2) * (g * g)
        new_params[name] = value - lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamState(t=t, m=new_m, v=new_v)


class TorchAdam:
    """Apply adam_step to the parameters of a torch module."""

    def __init__(self, net: nn.Module, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        self.net.zero_grad(set_to_none=True)

    def step(self) -> None:
        named = dict(self.net.named_parameters())
        params = {name: p.detach().to(torch.float64).numpy().copy() for name, p in named.items()}
        grads = {
            name: (p.grad.detach().to(torch.float64).numpy() if p.grad is not None else np.zeros_like(params[name]))
            for name, p in named.items()
        }
        updated, self.state = adam_step(params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
        with torch.no_grad():
            for name, p in named.items():
                p.copy_(torch.from_numpy(updated[name]))
