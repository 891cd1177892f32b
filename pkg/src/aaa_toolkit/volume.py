"""Voxel grid data model, resampling, HU windowing and axial slicing."""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import ndimage

from aaa_toolkit.errors import BoundsError, InvariantError, ModeError, ParameterError, ShapeError

logger = logging.getLogger(__name__)


class VolumeKind(str, Enum):
    """What the voxel values of a volume mean."""

    INTENSITY = "intensity"
    BINARY_MASK = "binary-mask"
    INTEGER_LABELS = "integer-labels"


class ResampleMode(str, Enum):
    """Interpolation used by resample."""

    TRILINEAR = "trilinear"
    NEAREST = "nearest"


def _check_kind(data: np.ndarray, kind: VolumeKind) -> None:
    if kind is VolumeKind.BINARY_MASK:
        if not np.all((data == 0) | (data == 1)):
            raise InvariantError("binary-mask volume holds values other than 0 and 1")
    elif kind is VolumeKind.INTEGER_LABELS:
        if not np.all(np.isfinite(data)) or np.any(data < 0) or np.any(data != np.floor(data)):
            raise InvariantError("integer-labels volume holds negative or non-integer values")


@dataclass(frozen=True, eq=False)
class Volume3D:
    """
    Scalar voxel grid.

    data is indexed [x, y, z] and stored as read-only float64; the flat
    payload order is x-fastest (Fortran order). origin is the center of the
    first voxel in mm.
    """

    data: np.ndarray
    spacing: tuple[float, float, float]
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    kind: VolumeKind = VolumeKind.INTENSITY

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 3:
            raise InvariantError(f"Volume3D data must be 3D, got shape {arr.shape}")
        if min(arr.shape) < 1:
            raise InvariantError(f"Volume3D dims must be >= 1, got {arr.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or len(origin) != 3:
            raise InvariantError("spacing and origin must have 3 components")
        if not all(math.isfinite(s) and s > 0 for s in spacing):
            raise InvariantError(f"spacing components must be > 0, got {spacing}")
        kind = VolumeKind(self.kind)
        _check_kind(arr, kind)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "kind", kind)

    @property
    def dims(self) -> tuple[int, int, int]:
        nx, ny, nz = self.data.shape
        return (nx, ny, nz)

    @property
    def voxel_volume(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def flat(self) -> np.ndarray:
        """Voxel values in x-fastest order."""
        return self.data.ravel(order="F")

    def with_data(self, data: np.ndarray, kind: VolumeKind | None = None) -> "Volume3D":
        """New volume on the same grid."""
        return Volume3D(data, self.spacing, self.origin, kind or self.kind)

    def voxel_to_mm(self, index: np.ndarray) -> np.ndarray:
        """Map (..., 3) voxel indices to mm coordinates."""
        return np.asarray(self.origin) + np.asarray(index, dtype=np.float64) * np.asarray(self.spacing)

    def same_grid(self, other: "Volume3D") -> bool:
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing)
            and np.allclose(self.origin, other.origin)
        )

    def equals(self, other: "Volume3D") -> bool:
        """Bit-exact equality of geometry, kind and data."""
        return (
            self.dims == other.dims
            and self.spacing == other.spacing
            and self.origin == other.origin
            and self.kind == other.kind
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True, eq=False)
class Slice2D:
    """Axial plane indexed [x, y]; width W = nx, height H = ny."""

    data: np.ndarray
    spacing: tuple[float, float]
    z_mm: float = 0.0
    kind: VolumeKind = field(default=VolumeKind.INTENSITY)

    def __post_init__(self) -> None:
        arr = np.array(self.data, dtype=np.float64, copy=True)
        if arr.ndim != 2 or min(arr.shape) < 1:
            raise InvariantError(f"Slice2D data must be a non-empty 2D array, got shape {arr.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) != 2 or not all(s > 0 for s in spacing):
            raise InvariantError(f"slice spacing must be two positive values, got {self.spacing}")
        kind = VolumeKind(self.kind)
        _check_kind(arr, kind)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "kind", kind)

    @property
    def width(self) -> int:
        return int(self.data.shape[0])

    @property
    def height(self) -> int:
        return int(self.data.shape[1])

    def flat(self) -> np.ndarray:
        """Pixel values in x-fastest order (length H*W)."""
        return self.data.ravel(order="F")


def extract_slice(volume: Volume3D, index: int, axis: str = "z") -> Slice2D:
    """
    Extract one axial plane.

    Raises:
        ModeError: axis other than "z"
        BoundsError: index outside [0, nz)
    """
    if axis != "z":
        raise ModeError(f"Only axial (z) slicing is supported, got axis={axis!r}")
    nz = volume.dims[2]
    if not 0 <= index < nz:
        raise BoundsError(f"slice index {index} outside [0, {nz})")
    z_mm = volume.origin[2] + index * volume.spacing[2]
    return Slice2D(volume.data[:, :, index], volume.spacing[:2], z_mm=z_mm, kind=volume.kind)


def insert_slice(volume: Volume3D, slc: Slice2D, index: int) -> Volume3D:
    """Return a copy of volume with plane `index` replaced by slc."""
    nz = volume.dims[2]
    if not 0 <= index < nz:
        raise BoundsError(f"slice index {index} outside [0, {nz})")
    if slc.data.shape != volume.dims[:2]:
        raise ShapeError(f"slice shape {slc.data.shape} does not match volume plane {volume.dims[:2]}")
    data = volume.data.copy()
    data[:, :, index] = slc.data
    return volume.with_data(data)


def resample(
    volume: Volume3D,
    target_spacing: tuple[float, float, float],
    mode: ResampleMode | str,
) -> Volume3D:
    """
    Resample onto a new spacing with voxel edges aligned to the input extent.

    Output dims are round(n * s / t), at least 1 per axis. The first output
    voxel center sits half an output voxel inside the input's outer edge.

    Raises:
        ParameterError: non-positive target spacing
        ModeError: trilinear interpolation of a mask or label volume
    """
    mode = ResampleMode(mode)
    target = np.asarray(target_spacing, dtype=np.float64)
    if target.shape != (3,) or np.any(target <= 0):
        raise ParameterError(f"target_spacing must be three positive values, got {target_spacing}")
    if mode is ResampleMode.TRILINEAR and volume.kind is not VolumeKind.INTENSITY:
        raise ModeError(f"trilinear resampling is not defined for {volume.kind.value} volumes")

    source = np.asarray(volume.spacing)
    if np.array_equal(source, target):
        return volume.with_data(volume.data)

    in_dims = np.asarray(volume.dims, dtype=np.float64)
    out_dims = tuple(max(1, int(math.floor(v + 0.5))) for v in in_dims * source / target)
    scale = target / source
    offset = 0.5 * scale - 0.5
    order = 1 if mode is ResampleMode.TRILINEAR else 0
    data = ndimage.affine_transform(
        volume.data,
        scale,
        offset=offset,
        output_shape=out_dims,
        order=order,
        mode="nearest",
        prefilter=False,
    )
    if order == 1:
        # Interpolation may overshoot by rounding error only.
        data = np.clip(data, volume.data.min(), volume.data.max())
    origin = np.asarray(volume.origin) + 0.5 * target - 0.5 * source
    logger.debug(
        f"Resampled {volume.dims} -> {out_dims}",
        extra={"mode": mode.value, "target_spacing": tuple(target)},
    )
    return Volume3D(data, tuple(target), tuple(origin), volume.kind)


def window_normalize(volume: Volume3D, lo_hu: float, hi_hu: float) -> Volume3D:
    """Map [lo_hu, hi_hu] linearly to [0, 1] with clamping."""
    if not lo_hu < hi_hu:
        raise ParameterError(f"window requires lo < hi, got ({lo_hu}, {hi_hu})")
    scaled = np.clip((volume.data - lo_hu) / (hi_hu - lo_hu), 0.0, 1.0)
    return volume.with_data(scaled, VolumeKind.INTENSITY)


def to_display_range(volume: Volume3D) -> np.ndarray:
    """Normalized [0, 1] intensities as uint8 [0, 255] for export."""
    return np.round(np.clip(volume.data, 0.0, 1.0) * 255.0).astype(np.uint8)


def crop_center(
    data: np.ndarray,
    size: int,
    center: tuple[int, int] | None = None,
    fill: float = 0.0,
) -> np.ndarray:
    """
    Square size x size window of a 2D array centered on `center`.

    Parts of the window outside the array are filled with `fill`.
    """
    if data.ndim != 2:
        raise ShapeError(f"crop_center expects a 2D array, got shape {data.shape}")
    if center is None:
        center = (data.shape[0] // 2, data.shape[1] // 2)
    out = np.full((size, size), fill, dtype=np.float64)
    half = size // 2
    x0, y0 = center[0] - half, center[1] - half
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, data.shape[0]), min(y0 + size, data.shape[1])
    if sx0 < sx1 and sy0 < sy1:
        out[sx0 - x0 : sx1 - x0, sy0 - y0 : sy1 - y0] = data[sx0:sx1, sy0:sy1]
    return out


def paste_center(
    crop: np.ndarray,
    shape: tuple[int, int],
    center: tuple[int, int] | None = None,
    fill: float = 0.0,
) -> np.ndarray:
    """Inverse of crop_center: place a square crop into a `shape` array."""
    size = crop.shape[0]
    if crop.ndim != 2 or crop.shape[1] != size:
        raise ShapeError(f"paste_center expects a square 2D crop, got shape {crop.shape}")
    if center is None:
        center = (shape[0] // 2, shape[1] // 2)
    out = np.full(shape, fill, dtype=np.float64)
    half = size // 2
    x0, y0 = center[0] - half, center[1] - half
    sx0, sy0 = max(x0, 0), max(y0, 0)
    sx1, sy1 = min(x0 + size, shape[0]), min(y0 + size, shape[1])
    if sx0 < sx1 and sy0 < sy1:
        out[sx0:sx1, sy0:sy1] = crop[sx0 - x0 : sx1 - x0, sy0 - y0 : sy1 - y0]
    return out
