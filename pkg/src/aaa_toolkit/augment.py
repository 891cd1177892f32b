"""Paired on-the-fly augmentation of (image, ground truth, allow mask)."""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from aaa_toolkit.errors import ShapeError
from aaa_toolkit.schemas import AugmentConfig

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class AugmentParams:
    """One sampled transform. elastic is a (2, g, g) coarse displacement grid in pixels."""

    flip: bool = False
    rotation_deg: float = 0.0
    translation_px: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    gain: float = 1.0
    noise_sigma: float = 0.0
    noise_seed: int = 0
    elastic: np.ndarray | None = None

    def spatial_identity(self) -> bool:
        return (
            self.rotation_deg == 0.0
            and self.translation_px == (0.0, 0.0)
            and self.scale == 1.0
            and (self.elastic is None or not np.any(self.elastic))
        )

    def is_identity(self) -> bool:
        return not self.flip and self.spatial_identity() and self.gain == 1.0 and self.noise_sigma == 0.0


def sample_seed(seed: int, epoch: int, sample_idx: int) -> int:
    """Per-sample stream independent of batch order."""
    return int(np.random.SeedSequence([seed, epoch, sample_idx]).generate_state(1)[0])


def sample_params(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    if not cfg.enabled:
        return AugmentParams()
    flip = bool(rng.random() < cfg.flip_prob)
    rotation = float(rng.uniform(-cfg.rotation_deg, cfg.rotation_deg))
    tx, ty = (float(v) for v in rng.uniform(-cfg.translation_px, cfg.translation_px, size=2))
    scale = float(rng.uniform(*cfg.scale_range))
    gain = float(rng.uniform(1.0 - cfg.intensity_jitter, 1.0 + cfg.intensity_jitter))
    noise_seed = int(rng.integers(0, 2**31 - 1))
    elastic = None
    if rng.random() < cfg.elastic_prob:
        elastic = rng.uniform(-cfg.elastic_max_px, cfg.elastic_max_px, size=(2, cfg.elastic_grid, cfg.elastic_grid))
    return AugmentParams(
        flip=flip,
        rotation_deg=rotation,
        translation_px=(tx, ty),
        scale=scale,
        gain=gain,
        noise_sigma=cfg.noise_sigma,
        noise_seed=noise_seed,
        elastic=elastic,
    )


def _displacement(elastic: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Bilinear upsampling of the coarse grid to (2, X, Y)."""
    g = elastic.shape[1]
    u = np.linspace(0.0, g - 1.0, shape[0])
    v = np.linspace(0.0, g - 1.0, shape[1])
    uu, vv = np.meshgrid(u, v, indexing="ij")
    return np.stack([ndimage.map_coordinates(elastic[c], [uu, vv], order=1, mode="nearest") for c in range(2)])


def _source_coordinates(params: AugmentParams, shape: tuple[int, int]) -> np.ndarray:
    cx, cy = (shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0
    xx, yy = np.meshgrid(np.arange(shape[0], dtype=np.float64), np.arange(shape[1], dtype=np.float64), indexing="ij")
    theta = math.radians(params.rotation_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # Inverse of p' = R * s * (p - c) + c + t
    dx = (xx - cx - params.translation_px[0]) / params.scale
    dy = (yy - cy - params.translation_px[1]) / params.scale
    src_x = cos_t * dx + sin_t * dy + cx
    src_y = -sin_t * dx + cos_t * dy + cy
    coords = np.stack([src_x, src_y])
    if params.elastic is not None:
        coords = coords + _displacement(params.elastic, shape)
    return coords


def augment_pair(
    image: np.ndarray,
    gt: np.ndarray,
    allow: np.ndarray,
    params_or_seed: AugmentParams | int,
    cfg: AugmentConfig | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Apply one sampled transform identically to an aligned slice triple.

    The image is interpolated bilinearly, gt and allow by nearest neighbour
    so they stay binary. Intensity gain and noise touch the image only.
    """
    if not image.shape == gt.shape == allow.shape or image.ndim != 2:
        raise ShapeError(f"augment_pair needs equal 2D shapes, got {image.shape}, {gt.shape}, {allow.shape}")
    if isinstance(params_or_seed, AugmentParams):
        params = params_or_seed
    else:
        params = sample_params(cfg or AugmentConfig(), np.random.default_rng(params_or_seed))

    if params.is_identity():
        return image.copy(), gt.copy(), allow.copy()

    img, y, a = image, gt, allow
    if params.flip:
        img, y, a = img[::-1, :], y[::-1, :], a[::-1, :]

    if not params.spatial_identity():
        coords = _source_coordinates(params, image.shape)
        img = ndimage.map_coordinates(img, coords, order=1, mode="nearest")
        y = ndimage.map_coordinates(y, coords, order=0, mode="nearest")
        a = ndimage.map_coordinates(a, coords, order=0, mode="nearest")

    img = img * params.gain
    if params.noise_sigma > 0:
        img = img + np.random.default_rng(params.noise_seed).normal(0.0, params.noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0)
    return np.ascontiguousarray(img), np.ascontiguousarray(y), np.ascontiguousarray(a)
