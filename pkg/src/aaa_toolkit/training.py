"""Early-stopping training loop for the U-Net."""

import copy
import logging
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from aaa_toolkit.augment import augment_pair, sample_seed
from aaa_toolkit.config import settings
from aaa_toolkit.dataset import SliceSample
from aaa_toolkit.errors import ConfigurationError
from aaa_toolkit.losses import effective_loss_config, masked_combined_loss
from aaa_toolkit.metrics import binarize, slice_metrics, write_csv
from aaa_toolkit.optim import TorchAdam
from aaa_toolkit.prometheus_metrics import RunMetrics
from aaa_toolkit.schemas import ExperimentConfig
from aaa_toolkit.unet import UNet, build_unet, configure_torch, predict

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_dice: float


@dataclass
class TrainingResult:
    net: UNet
    best_epoch: int
    best_val_dice: float
    history: list[EpochRecord] = field(default_factory=list)


def validation_dice(net: UNet, samples: Sequence[SliceSample], threshold: float = 0.5) -> float:
    """Mean Dice over validation slices with ground truth (0.0 when there are none)."""
    if not samples:
        return 0.0
    probs = predict(net, np.stack([s.image for s in samples]))
    scores = []
    for sample, prob in zip(samples, probs, strict=True):
        row = slice_metrics(binarize(prob, threshold), sample.gt)
        if row.has_gt and row.dice is not None:
            scores.append(row.dice)
    return float(np.mean(scores)) if scores else 0.0


def _epoch_batches(n: int, batch_size: int, steps: int | None, rng: np.random.Generator) -> list[np.ndarray]:
    order = rng.permutation(n)
    if steps is None:
        return [order[i : i + batch_size] for i in range(0, n, batch_size)]
    picks = np.resize(order, steps * batch_size)
    return [picks[i * batch_size : (i + 1) * batch_size] for i in range(steps)]


def _assemble(
    samples: Sequence[SliceSample], indices: np.ndarray, cfg: ExperimentConfig, epoch: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    images, gts, allows = [], [], []
    for idx in indices:
        sample = samples[int(idx)]
        seed = sample_seed(cfg.train.seed, epoch, int(idx))
        image, gt, allow = augment_pair(sample.image, sample.gt, sample.allow, seed, cfg.augment)
        images.append(image)
        gts.append(gt)
        allows.append(allow)
    return np.stack(images), np.stack(gts), np.stack(allows)


def train(
    cfg: ExperimentConfig,
    train_samples: Sequence[SliceSample],
    val_samples: Sequence[SliceSample],
    metrics: RunMetrics | None = None,
) -> TrainingResult:
    """
    Train from a seeded initialization and keep the best validation epoch.

    Raises:
        ConfigurationError: empty training or validation split
    """
    if not train_samples:
        raise ConfigurationError("training split has no slices", key="phantom_set.n_train")
    if not val_samples:
        raise ConfigurationError("validation split has no slices", key="phantom_set.n_val")

    configure_torch(settings.torch_threads)
    torch.manual_seed(cfg.train.seed)
    tc = cfg.train
    mode = tc.loss_mode.value
    net = build_unet(cfg.unet, tc.dtype)
    optimizer = TorchAdam(net, tc.lr, tc.beta1, tc.beta2, tc.eps_adam)
    loss_cfg = effective_loss_config(cfg.loss, tc.loss_mode, tc.baseline_objective)
    dtype = getattr(torch, tc.dtype)

    best_state = copy.deepcopy(net.state_dict())
    best_dice = -1.0
    best_epoch = 0
    stale = 0
    history: list[EpochRecord] = []

    for epoch in range(1, tc.max_epochs + 1):
        rng = np.random.default_rng([tc.seed, epoch])
        losses = []
        for indices in _epoch_batches(len(train_samples), tc.batch_size, tc.steps_per_epoch, rng):
            images, gts, allows = _assemble(train_samples, indices, cfg, epoch)
            net.train()
            probs = net(torch.from_numpy(images[:, None]).to(dtype))
            loss = masked_combined_loss(probs, gts, allows, loss_cfg)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            losses.append(float(loss.item()))
            if metrics is not None:
                metrics.train_steps_total.labels(mode=mode).inc()

        val = validation_dice(net, val_samples, cfg.eval.threshold)
        record = EpochRecord(epoch=epoch, train_loss=float(np.mean(losses)), val_dice=val)
        history.append(record)
        if metrics is not None:
            metrics.epochs_total.labels(mode=mode).inc()
        logger.info(
            f"Epoch {epoch}: train_loss={record.train_loss:.4f} val_dice={val:.4f}",
            extra={"epoch": epoch, "mode": mode, "train_loss": record.train_loss, "val_dice": val},
        )

        if val > best_dice:
            best_dice = val
            best_epoch = epoch
            best_state = copy.deepcopy(net.state_dict())
            stale = 0
        else:
            stale += 1
            if stale >= tc.patience:
                logger.info(
                    f"Early stopping at epoch {epoch}, best epoch {best_epoch}",
                    extra={"epoch": epoch, "best_epoch": best_epoch, "mode": mode},
                )
                break

    net.load_state_dict(best_state)
    net.eval()
    if metrics is not None:
        metrics.best_val_dice.labels(mode=mode).set(best_dice)
    return TrainingResult(net=net, best_epoch=best_epoch, best_val_dice=best_dice, history=history)


def write_history(history: Sequence[EpochRecord], path: Path) -> None:
    write_csv(path, ["epoch", "train_loss", "val_dice"], [[r.epoch, r.train_loss, r.val_dice] for r in history])
