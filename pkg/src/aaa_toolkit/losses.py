"""Masked Dice, masked BCE and their combination, with analytic gradients.

All arithmetic is float64 numpy. Positions with A = 0 contribute exact
zeros to every sum, so the losses and their gradients do not depend on the
predictions there.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
import torch

from aaa_toolkit.errors import NumericInputError, ShapeError
from aaa_toolkit.schemas import BaselineObjective, LossMode, MaskedLossConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SliceTensor:
    """Flattened prediction P, ground truth Y and allow mask A of one H x W slice."""

    P: np.ndarray
    Y: np.ndarray
    A: np.ndarray
    H: int
    W: int

    def __post_init__(self) -> None:
        n = self.H * self.W
        arrays = {}
        for name in ("P", "Y", "A"):
            arr = np.asarray(getattr(self, name), dtype=np.float64).reshape(-1)
            if arr.shape[0] != n:
                raise ShapeError(f"{name} has length {arr.shape[0]}, expected H*W = {n}")
            arrays[name] = arr
        p = arrays["P"]
        if not np.all(np.isfinite(p)):
            raise NumericInputError("P contains NaN or Inf")
        if np.any(p < 0.0) or np.any(p > 1.0):
            raise NumericInputError("P values must lie in [0, 1]")
        for name in ("Y", "A"):
            values = arrays[name]
            if not np.all((values == 0.0) | (values == 1.0)):
                raise NumericInputError(f"{name} must be binary")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def N(self) -> int:
        return self.H * self.W

    @classmethod
    def from_maps(cls, prob: np.ndarray, gt: np.ndarray, allow: np.ndarray) -> "SliceTensor":
        """Build from 2D [x, y] maps, flattened x-fastest."""
        if not prob.shape == gt.shape == allow.shape or prob.ndim != 2:
            raise ShapeError(f"maps must share one 2D shape, got {prob.shape}, {gt.shape}, {allow.shape}")
        width, height = prob.shape
        return cls(
            prob.ravel(order="F"), gt.ravel(order="F"), allow.ravel(order="F"), H=height, W=width
        )


def _allow(t: SliceTensor, cfg: MaskedLossConfig) -> np.ndarray:
    return np.ones_like(t.A) if cfg.baseline_mode else t.A


def _dice_terms(t: SliceTensor, a: np.ndarray) -> tuple[float, float]:
    ap = a * t.P
    intersection = float(np.sum(ap * t.Y))
    total = float(np.sum(ap) + np.sum(a * t.Y))
    return intersection, total


def masked_dice_loss(t: SliceTensor, cfg: MaskedLossConfig) -> float:
    """1 - (2 sum APY + eps) / (sum AP + sum AY + eps)."""
    intersection, total = _dice_terms(t, _allow(t, cfg))
    return 1.0 - (2.0 * intersection + cfg.epsilon) / (total + cfg.epsilon)


def _clamped(t: SliceTensor, cfg: MaskedLossConfig) -> np.ndarray:
    return np.clip(t.P, cfg.clamp, 1.0 - cfg.clamp)


def masked_bce_loss(t: SliceTensor, cfg: MaskedLossConfig) -> float:
    """Allow-weighted mean binary cross-entropy, P clamped to [delta, 1 - delta]."""
    a = _allow(t, cfg)
    pc = _clamped(t, cfg)
    bce = -(t.Y * np.log(pc) + (1.0 - t.Y) * np.log(1.0 - pc))
    return float(np.sum(a * bce)) / (float(np.sum(a)) + cfg.epsilon)


def combined_loss(t: SliceTensor, cfg: MaskedLossConfig) -> float:
    return cfg.w * masked_bce_loss(t, cfg) + (1.0 - cfg.w) * masked_dice_loss(t, cfg)


def masked_dice_grad(t: SliceTensor, cfg: MaskedLossConfig) -> np.ndarray:
    a = _allow(t, cfg)
    intersection, total = _dice_terms(t, a)
    denom = total + cfg.epsilon
    return a * ((2.0 * intersection + cfg.epsilon) - 2.0 * t.Y * denom) / denom**2


def masked_bce_grad(t: SliceTensor, cfg: MaskedLossConfig) -> np.ndarray:
    """Gradient of masked_bce_loss; zero where the clamp is active."""
    a = _allow(t, cfg)
    pc = _clamped(t, cfg)
    active = (t.P > cfg.clamp) & (t.P < 1.0 - cfg.clamp)
    d_bce = -t.Y / pc + (1.0 - t.Y) / (1.0 - pc)
    return np.where(active, a * d_bce, 0.0) / (float(np.sum(a)) + cfg.epsilon)


def combined_loss_grad(t: SliceTensor, cfg: MaskedLossConfig) -> np.ndarray:
    """dL/dP_i of combined_loss, length N."""
    return cfg.w * masked_bce_grad(t, cfg) + (1.0 - cfg.w) * masked_dice_grad(t, cfg)


def baseline_dice_loss(t: SliceTensor, cfg: MaskedLossConfig) -> float:
    """Unmasked Dice loss: every pixel counts."""
    return masked_dice_loss(t, cfg.model_copy(update={"baseline_mode": True}))


def effective_loss_config(
    cfg: MaskedLossConfig,
    mode: LossMode,
    objective: BaselineObjective = BaselineObjective.DICE,
) -> MaskedLossConfig:
    """
    Loss config a training mode actually optimizes.

    Anatomy-aware training uses the masked combined loss as configured. The
    baseline ignores A; with the Dice objective it is the plain Dice loss.
    """
    if mode is LossMode.ANATOMY_AWARE:
        return cfg
    update: dict[str, object] = {"baseline_mode": True}
    if objective is BaselineObjective.DICE:
        update["w"] = 0.0
    return cfg.model_copy(update=update)


def batch_loss(tensors: Sequence[SliceTensor], cfg: MaskedLossConfig) -> float:
    """Mean of per-slice combined losses."""
    if not tensors:
        raise ShapeError("batch_loss needs at least one slice")
    return float(np.mean([combined_loss(t, cfg) for t in tensors]))


def batch_loss_grad(tensors: Sequence[SliceTensor], cfg: MaskedLossConfig) -> list[np.ndarray]:
    """Per-slice gradients of batch_loss."""
    if not tensors:
        raise ShapeError("batch_loss_grad needs at least one slice")
    scale = 1.0 / len(tensors)
    return [combined_loss_grad(t, cfg) * scale for t in tensors]


class MaskedCombinedLoss(torch.autograd.Function):
    """
    Batch-mean combined loss on a (B, 1, X, Y) probability tensor.

    The backward pass is the analytic gradient from combined_loss_grad, so
    the network is trained on exactly the loss evaluated by this module.
    """

    @staticmethod
    def forward(  # type: ignore[override]
        ctx: torch.autograd.function.FunctionCtx,
        probs: torch.Tensor,
        gt: np.ndarray,
        allow: np.ndarray,
        cfg: MaskedLossConfig,
    ) -> torch.Tensor:
        p = probs.detach().cpu().to(torch.float64).numpy()
        tensors = [SliceTensor.from_maps(p[b, 0], gt[b], allow[b]) for b in range(p.shape[0])]
        grads = batch_loss_grad(tensors, cfg)
        grad_maps = np.stack([g.reshape(p.shape[2:], order="F") for g in grads])[:, None]
        ctx.grad_maps = torch.from_numpy(grad_maps)  # type: ignore[attr-defined]
        return probs.new_tensor(batch_loss(tensors, cfg))

    @staticmethod
    def backward(  # type: ignore[override]
        ctx: torch.autograd.function.FunctionCtx, grad_output: torch.Tensor
    ) -> tuple[torch.Tensor | None, None, None, None]:
        grad_maps: torch.Tensor = ctx.grad_maps  # type: ignore[attr-defined]
        return grad_output * grad_maps.to(grad_output.dtype), None, None, None


def masked_combined_loss(
    probs: torch.Tensor, gt: np.ndarray, allow: np.ndarray, cfg: MaskedLossConfig
) -> torch.Tensor:
    """Differentiable batch loss; gt and allow are (B, X, Y) binary arrays."""
    return MaskedCombinedLoss.apply(probs, gt, allow, cfg)  # type: ignore[no-any-return]
