"""Organ exclusion masks, allow masks and aorta-based slice filtering."""

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field

import numpy as np

from aaa_toolkit.errors import (
    AlignmentError,
    ConfigurationError,
    InvariantError,
    ParameterError,
    ShapeError,
)
from aaa_toolkit.schemas import AnatomyConfig
from aaa_toolkit.volume import ResampleMode, Slice2D, Volume3D, VolumeKind, extract_slice, resample

logger = logging.getLogger(__name__)

# A binary Slice2D: 1 where the loss may look, 0 in excluded organs.
AllowMask = Slice2D


@dataclass(frozen=True, eq=False)
class OrganLabelMap:
    """Multi-organ label volume with its label table."""

    volume: Volume3D
    label_table: Mapping[int, str]
    vascular_ids: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if self.volume.kind is not VolumeKind.INTEGER_LABELS:
            raise InvariantError(f"label map must be integer-labels, got {self.volume.kind.value}")
        object.__setattr__(self, "vascular_ids", frozenset(int(i) for i in self.vascular_ids))
        missing_vascular = self.vascular_ids - set(self.label_table)
        if missing_vascular:
            raise ConfigurationError(f"vascular ids not in label table: {sorted(missing_vascular)}")
        present = {int(v) for v in np.unique(self.volume.data)}
        unknown = present - set(self.label_table)
        if unknown:
            raise InvariantError(f"label ids {sorted(unknown)} are not in the label table")

    @classmethod
    def from_config(cls, volume: Volume3D, cfg: AnatomyConfig) -> "OrganLabelMap":
        return cls(volume, dict(cfg.label_table), frozenset(cfg.vascular_ids))


def build_exclusion_mask(labels: OrganLabelMap) -> Volume3D:
    """1 where a voxel carries a non-vascular organ label, 0 elsewhere."""
    data = labels.volume.data
    vascular = np.isin(data, list(labels.vascular_ids)) if labels.vascular_ids else np.zeros(data.shape, bool)
    exclusion = (data != 0) & ~vascular
    logger.debug(
        "Built exclusion mask",
        extra={"excluded_voxels": int(exclusion.sum()), "dims": labels.volume.dims},
    )
    return labels.volume.with_data(exclusion.astype(np.float64), VolumeKind.BINARY_MASK)


def _nearest_indices(n_out: int, out_spacing: float, in_spacing: float) -> np.ndarray:
    """Input pixel index under each output pixel center, both grids sharing the lower edge."""
    centers = (np.arange(n_out) + 0.5) * out_spacing
    return np.floor(centers / in_spacing).astype(np.int64)


def _align_plane(
    plane: np.ndarray,
    plane_spacing: tuple[float, float],
    shape: tuple[int, int],
    spacing: tuple[float, float],
) -> np.ndarray:
    if plane.shape == shape and np.allclose(plane_spacing, spacing):
        return plane
    ix = _nearest_indices(shape[0], spacing[0], plane_spacing[0])
    iy = _nearest_indices(shape[1], spacing[1], plane_spacing[1])
    if ix.max() >= plane.shape[0] or iy.max() >= plane.shape[1]:
        raise AlignmentError(
            f"exclusion plane {plane.shape} at {plane_spacing} mm does not cover "
            f"target grid {shape} at {spacing} mm"
        )
    return plane[np.ix_(ix, iy)]


def allow_mask_for_slice(
    exclusion: Volume3D,
    slice_index: int,
    target: Slice2D | None = None,
    gt: Slice2D | None = None,
    gt_override: bool = True,
) -> AllowMask:
    """
    Allow mask A = 1 - exclusion for one axial slice.

    Args:
        exclusion: Binary exclusion volume
        slice_index: Axial index into exclusion
        target: Slice whose grid A is aligned to (nearest); defaults to the exclusion grid
        gt: Ground-truth slice; with gt_override its positive pixels force A = 1
        gt_override: See gt

    Raises:
        InvariantError: exclusion is not binary
        BoundsError: slice_index out of range
        AlignmentError: exclusion plane cannot be aligned to the target grid
    """
    if exclusion.kind is not VolumeKind.BINARY_MASK:
        raise InvariantError("allow_mask_for_slice requires a binary exclusion volume")
    plane = extract_slice(exclusion, slice_index)
    reference = target if target is not None else gt
    data = plane.data
    spacing = plane.spacing
    if reference is not None:
        data = _align_plane(plane.data, plane.spacing, reference.data.shape, reference.spacing)
        spacing = reference.spacing
    allow = 1.0 - data
    if gt is not None and gt_override:
        if gt.data.shape != allow.shape:
            raise AlignmentError(f"ground truth {gt.data.shape} does not match allow mask {allow.shape}")
        allow = np.where(gt.data > 0, 1.0, allow)
    return Slice2D(allow, spacing, z_mm=plane.z_mm, kind=VolumeKind.BINARY_MASK)


def allow_masks_for_volume(
    labels: OrganLabelMap,
    gt: Volume3D,
    gt_override: bool = True,
) -> Volume3D:
    """Allow-mask volume on the ground-truth grid for a whole patient."""
    exclusion = build_exclusion_mask(labels)
    if not exclusion.same_grid(gt):
        exclusion = resample(exclusion, gt.spacing, ResampleMode.NEAREST)
        if exclusion.dims != gt.dims:
            raise AlignmentError(f"exclusion grid {exclusion.dims} does not match ground truth {gt.dims}")
    allow = 1.0 - exclusion.data
    if gt_override:
        overridden = int(np.count_nonzero((gt.data > 0) & (allow == 0)))
        if overridden:
            logger.info(
                f"Ground truth overrides exclusion on {overridden} voxels",
                extra={"overridden_voxels": overridden},
            )
        allow = np.where(gt.data > 0, 1.0, allow)
    return gt.with_data(allow, VolumeKind.BINARY_MASK)


def filter_slices_by_aorta(labels: OrganLabelMap, min_voxels: int = 1, aorta_id: int = 1) -> list[int]:
    """
    Axial indices whose aorta voxel count reaches min_voxels, ascending.

    Raises:
        ParameterError: min_voxels < 1
        ConfigurationError: aorta_id not in the label table
    """
    if min_voxels < 1:
        raise ParameterError(f"min_voxels must be >= 1, got {min_voxels}")
    if aorta_id not in labels.label_table:
        raise ConfigurationError(f"aorta id {aorta_id} is not in the label table", key="anatomy.aorta_id")
    counts = np.count_nonzero(labels.volume.data == aorta_id, axis=(0, 1))
    return [int(z) for z in np.flatnonzero(counts >= min_voxels)]


def gate_prediction(prob: np.ndarray, allow: np.ndarray) -> np.ndarray:
    """Zero predictions inside excluded regions."""
    if prob.shape != allow.shape:
        raise ShapeError(f"prediction {prob.shape} and allow mask {allow.shape} differ in shape")
    return np.where(allow > 0, prob, 0.0)
