"""2D U-Net, seeded initialization, gradients and checkpoint files."""

import json
import logging
import math
from pathlib import Path
from typing import Any

import numpy as np
import torch
from torch import nn

from aaa_toolkit.errors import ShapeError, VolumeIOError
from aaa_toolkit.losses import masked_combined_loss
from aaa_toolkit.schemas import MaskedLossConfig, UNetConfig
from aaa_toolkit.volume import Volume3D, VolumeKind

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"AAAUNET1"
CHECKPOINT_VERSION = 1


def configure_torch(threads: int) -> None:
    """Single-device deterministic CPU execution."""
    torch.set_num_threads(threads)
    torch.use_deterministic_algorithms(True)


class DoubleConv(nn.Module):
    """Two 3x3 convolutions, each followed by optional batch norm and ReLU."""

    def __init__(self, in_channels: int, out_channels: int, use_batchnorm: bool):
        super().__init__()
        layers: list[nn.Module] = []
        for c_in in (in_channels, out_channels):
            layers.append(nn.Conv2d(c_in, out_channels, kernel_size=3, padding=1))
            if use_batchnorm:
                layers.append(nn.BatchNorm2d(out_channels))
            layers.append(nn.ReLU())
        self.block = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.block(x)


class UNet(nn.Module):
    """
    Encoder-decoder with skip connections and a sigmoid head.

    Level k of the encoder has base_channels * 2**k channels; the bottleneck
    has base_channels * 2**levels. Inputs are (B, C, X, Y) with X and Y
    divisible by 2**levels.
    """

    def __init__(self, cfg: UNetConfig):
        super().__init__()
        self.cfg = cfg
        widths = [cfg.base_channels * 2**k for k in range(cfg.levels)]
        self.encoders = nn.ModuleList()
        c_in = cfg.in_channels
        for width in widths:
            self.encoders.append(DoubleConv(c_in, width, cfg.use_batchnorm))
            c_in = width
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = DoubleConv(widths[-1], widths[-1] * 2, cfg.use_batchnorm)
        self.ups = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for width in reversed(widths):
            self.ups.append(nn.ConvTranspose2d(width * 2, width, kernel_size=2, stride=2))
            self.decoders.append(DoubleConv(width * 2, width, cfg.use_batchnorm))
        self.head = nn.Conv2d(widths[0], 1, kernel_size=1)

    def check_input(self, x: torch.Tensor) -> None:
        factor = 2**self.cfg.levels
        if x.ndim != 4 or x.shape[2] % factor or x.shape[3] % factor:
            raise ShapeError(f"input {tuple(x.shape)} spatial dims must be divisible by {factor}")

    def encode(self, x: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor]:
        """Skip features per level and the bottleneck tensor."""
        self.check_input(x)
        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
            x = self.pool(x)
        return skips, self.bottleneck(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skips, x = self.encode(x)
        for up, decoder, skip in zip(self.ups, self.decoders, reversed(skips), strict=True):
            x = decoder(torch.cat([up(x), skip], dim=1))
        return torch.sigmoid(self.head(x))


def init_weights(net: UNet, seed: int) -> None:
    """Fan-in scaled uniform weights drawn from a seeded numpy generator, zero biases."""
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for module in net.modules():
            if isinstance(module, nn.ConvTranspose2d):
                kx, ky = module.kernel_size
                sx, sy = module.stride
                fan_in = module.in_channels * max(1, (kx * ky) // (sx * sy))
            elif isinstance(module, nn.Conv2d):
                kx, ky = module.kernel_size
                fan_in = module.in_channels * kx * ky
            elif isinstance(module, nn.BatchNorm2d):
                module.reset_parameters()
                continue
            else:
                continue
            bound = math.sqrt(6.0 / fan_in)
            values = rng.uniform(-bound, bound, size=tuple(module.weight.shape))
            module.weight.copy_(torch.from_numpy(values))
            if module.bias is not None:
                module.bias.zero_()


def build_unet(cfg: UNetConfig, dtype: str = "float32") -> UNet:
    net = UNet(cfg).to(getattr(torch, dtype))
    init_weights(net, cfg.seed)
    return net


def _as_batch(images: np.ndarray, net: UNet) -> torch.Tensor:
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    dtype = next(net.parameters()).dtype
    return torch.from_numpy(arr[:, None]).to(dtype)


def predict(net: UNet, images: np.ndarray) -> np.ndarray:
    """Inference-mode probabilities for one (X, Y) image or a (B, X, Y) stack."""
    net.eval()
    with torch.no_grad():
        out = net(_as_batch(images, net)).to(torch.float64).numpy()[:, 0]
    return out[0] if np.asarray(images).ndim == 2 else out


def predict_volume(net: UNet, volume: Volume3D) -> Volume3D:
    """Slice-wise axial inference over a normalized volume."""
    planes = np.moveaxis(volume.data, 2, 0)
    probs = np.stack([predict(net, plane) for plane in planes], axis=2)
    return volume.with_data(probs, VolumeKind.INTENSITY)


def parameter_gradients(
    net: UNet,
    images: np.ndarray,
    gt: np.ndarray,
    allow: np.ndarray,
    cfg: MaskedLossConfig,
) -> dict[str, np.ndarray]:
    """
    Gradients of the batch-mean combined loss w.r.t. every parameter.

    Args:
        images: (B, X, Y) inputs
        gt: (B, X, Y) binary ground truth
        allow: (B, X, Y) binary allow masks

    Returns:
        Parameter name -> float64 gradient array
    """
    net.zero_grad(set_to_none=True)
    loss = masked_combined_loss(net(_as_batch(images, net)), np.asarray(gt), np.asarray(allow), cfg)
    loss.backward()
    return {
        name: (p.grad.detach().to(torch.float64).numpy().copy() if p.grad is not None else np.zeros(tuple(p.shape)))
        for name, p in net.named_parameters()
    }


def save_checkpoint(net: UNet, path: Path, meta: dict[str, Any] | None = None) -> None:
    """
    Write magic, version, JSON header length, sorted JSON header and a
    little-endian float64 blob of every state_dict tensor.
    """
    state = net.state_dict()
    tensors = [[name, list(tensor.shape)] for name, tensor in state.items()]
    header = {
        "dtype": str(next(net.parameters()).dtype).removeprefix("torch."),
        "meta": meta or {},
        "tensors": tensors,
        "unet": net.cfg.model_dump(),
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    blob = b"".join(
        tensor.detach().cpu().to(torch.float64).numpy().astype("<f8").tobytes() for tensor in state.values()
    )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("wb") as f:
            f.write(CHECKPOINT_MAGIC)
            f.write(np.array([CHECKPOINT_VERSION, len(header_bytes)], dtype="<u4").tobytes())
            f.write(header_bytes)
            f.write(blob)
    except OSError as e:
        raise VolumeIOError(f"Cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint {path}", extra={"tensors": len(tensors)})


def load_checkpoint(path: Path) -> tuple[UNet, dict[str, Any]]:
    """Rebuild the network stored by save_checkpoint; returns (net, meta)."""
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise VolumeIOError(f"Cannot read checkpoint {path}: {e}") from e
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise VolumeIOError(f"{path} is not a U-Net checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    version, header_len = (int(v) for v in np.frombuffer(raw[pos : pos + 8], dtype="<u4"))
    if version != CHECKPOINT_VERSION:
        raise VolumeIOError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    header = json.loads(raw[pos : pos + header_len].decode("utf-8"))
    pos += header_len

    net = UNet(UNetConfig.model_validate(header["unet"])).to(getattr(torch, header["dtype"]))
    state = net.state_dict()
    loaded: dict[str, torch.Tensor] = {}
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = pos + 8 * count
        if end > len(raw):
            raise VolumeIOError(f"{path}: truncated parameter blob")
        values = np.frombuffer(raw[pos:end], dtype="<f8").reshape(shape)
        loaded[name] = torch.from_numpy(values.copy()).to(state[name].dtype)
        pos = end
    net.load_state_dict(loaded)
    return net, header["meta"]
