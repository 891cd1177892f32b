"""Tests for exclusion masks, allow masks and aorta slice filtering."""

import numpy as np
import pytest

from aaa_toolkit.anatomy import (
    OrganLabelMap,
    allow_mask_for_slice,
    allow_masks_for_volume,
    build_exclusion_mask,
    filter_slices_by_aorta,
    gate_prediction,
)
from aaa_toolkit.errors import AlignmentError, ConfigurationError, InvariantError, ParameterError, ShapeError
from aaa_toolkit.schemas import AnatomyConfig
from aaa_toolkit.volume import Slice2D, Volume3D, VolumeKind

TABLE = {0: "background", 1: "aorta", 2: "iliac_artery", 3: "vertebra", 4: "bowel"}


@pytest.fixture
def labels():
    """4x4x3 label map: aorta column, an iliac pixel, a vertebra block and bowel in slice 2."""
    data = np.zeros((4, 4, 3))
    data[1, 1, :2] = 1
    data[2, 1, 0] = 2
    data[3, 2:4, :] = 3
    data[0, 3, 2] = 4
    volume = Volume3D(data, (1.0, 1.0, 1.0), kind=VolumeKind.INTEGER_LABELS)
    return OrganLabelMap(volume, TABLE, frozenset({1, 2}))


def test_exclusion_mask_marks_non_vascular_labels(labels):
    """Test that only non-vascular, non-background labels are excluded."""
    exclusion = build_exclusion_mask(labels)

    assert exclusion.kind is VolumeKind.BINARY_MASK
    expected = np.isin(labels.volume.data, [3, 4]).astype(float)
    np.testing.assert_array_equal(exclusion.data, expected)


def test_label_map_rejects_unknown_labels():
    """Test that labels missing from the table are rejected."""
    volume = Volume3D(np.full((2, 2, 2), 9.0), (1, 1, 1), kind=VolumeKind.INTEGER_LABELS)

    with pytest.raises(InvariantError):
        OrganLabelMap(volume, TABLE, frozenset({1}))


def test_label_map_requires_integer_labels():
    """Test that an intensity volume cannot serve as a label map."""
    volume = Volume3D(np.zeros((2, 2, 2)), (1, 1, 1))

    with pytest.raises(InvariantError):
        OrganLabelMap(volume, TABLE)


def test_from_config_uses_vascular_ids(labels):
    """Test construction from the anatomy config."""
    label_map = OrganLabelMap.from_config(labels.volume, AnatomyConfig())

    assert label_map.vascular_ids == frozenset({1, 2})


def test_allow_mask_with_ground_truth_override(labels):
    """Test that ground-truth pixels force A = 1 inside excluded organs."""
    exclusion = build_exclusion_mask(labels)
    gt_plane = np.zeros((4, 4))
    gt_plane[3, 2] = 1.0
    gt = Slice2D(gt_plane, (1.0, 1.0), kind=VolumeKind.BINARY_MASK)

    plain = allow_mask_for_slice(exclusion, 0)
    overridden = allow_mask_for_slice(exclusion, 0, gt=gt)
    kept = allow_mask_for_slice(exclusion, 0, gt=gt, gt_override=False)

    assert plain.data[3, 2] == 0.0
    assert overridden.data[3, 2] == 1.0
    assert kept.data[3, 2] == 0.0
    assert overridden.kind is VolumeKind.BINARY_MASK


def test_allow_mask_aligned_to_finer_target(labels):
    """Test nearest alignment of the exclusion plane to a finer slice grid."""
    exclusion = build_exclusion_mask(labels)
    target = Slice2D(np.zeros((8, 8)), (0.5, 0.5))

    allow = allow_mask_for_slice(exclusion, 1, target=target)

    assert allow.data.shape == (8, 8)
    np.testing.assert_array_equal(allow.data[::2, ::2], 1.0 - exclusion.data[:, :, 1])
    np.testing.assert_array_equal(allow.data[1::2, 1::2], 1.0 - exclusion.data[:, :, 1])


def test_allow_mask_alignment_failure(labels):
    """Test that a target grid beyond the exclusion plane cannot be aligned."""
    exclusion = build_exclusion_mask(labels)
    target = Slice2D(np.zeros((8, 8)), (1.0, 1.0))

    with pytest.raises(AlignmentError):
        allow_mask_for_slice(exclusion, 0, target=target)


def test_allow_mask_needs_binary_exclusion(labels):
    """Test that a label volume is not accepted as exclusion mask."""
    with pytest.raises(InvariantError):
        allow_mask_for_slice(labels.volume, 0)


def test_allow_masks_for_volume(labels):
    """Test the whole-patient allow stack with ground-truth override."""
    gt_data = np.zeros((4, 4, 3))
    gt_data[1, 1, :2] = 1
    gt_data[3, 3, 1] = 1
    gt = Volume3D(gt_data, (1, 1, 1), kind=VolumeKind.BINARY_MASK)

    allow = allow_masks_for_volume(labels, gt)

    assert allow.dims == gt.dims
    assert allow.data[3, 3, 1] == 1.0
    assert allow.data[3, 3, 0] == 0.0
    assert allow.data[0, 3, 2] == 0.0
    assert allow.data[0, 0, 0] == 1.0


def test_filter_slices_by_aorta(labels):
    """Test aorta slice selection and its threshold."""
    assert filter_slices_by_aorta(labels) == [0, 1]
    assert filter_slices_by_aorta(labels, min_voxels=2) == []


def test_filter_slices_errors(labels):
    """Test invalid thresholds and aorta ids."""
    with pytest.raises(ParameterError):
        filter_slices_by_aorta(labels, min_voxels=0)
    with pytest.raises(ConfigurationError):
        filter_slices_by_aorta(labels, aorta_id=42)


def test_gate_prediction():
    """Test that gating zeroes predictions in excluded pixels only."""
    prob = np.full((2, 2), 0.9)
    allow = np.array([[1.0, 0.0], [1.0, 1.0]])

    gated = gate_prediction(prob, allow)

    assert gated.tolist() == [[0.9, 0.0], [0.9, 0.9]]
    with pytest.raises(ShapeError):
        gate_prediction(prob, np.ones((3, 3)))
