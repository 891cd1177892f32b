"""Tests for the voxel grid model, resampling and windowing."""

import numpy as np
import pytest

from aaa_toolkit.errors import BoundsError, InvariantError, ModeError, ParameterError, ShapeError
from aaa_toolkit.volume import (
    ResampleMode,
    Slice2D,
    Volume3D,
    VolumeKind,
    crop_center,
    extract_slice,
    insert_slice,
    paste_center,
    resample,
    to_display_range,
    window_normalize,
)


def _ramp(dims=(4, 5, 6), spacing=(1.0, 1.0, 1.0), kind=VolumeKind.INTENSITY):
    data = np.arange(np.prod(dims), dtype=np.float64).reshape(dims)
    return Volume3D(data, spacing, (0.0, 0.0, 0.0), kind)


def test_volume_invariants():
    """Test that invalid shapes, spacings and kinds are rejected."""
    with pytest.raises(InvariantError):
        Volume3D(np.zeros((4, 4)), (1.0, 1.0, 1.0))
    with pytest.raises(InvariantError):
        Volume3D(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))
    with pytest.raises(InvariantError):
        Volume3D(np.full((2, 2, 2), 2.0), (1.0, 1.0, 1.0), kind=VolumeKind.BINARY_MASK)
    with pytest.raises(InvariantError):
        Volume3D(np.full((2, 2, 2), 1.5), (1.0, 1.0, 1.0), kind=VolumeKind.INTEGER_LABELS)


def test_volume_data_is_read_only_copy():
    """Test that the stored payload is a read-only float64 copy."""
    source = np.zeros((2, 3, 4), dtype=np.int16)
    volume = Volume3D(source, (1, 1, 1))
    source[0, 0, 0] = 9

    assert volume.data.dtype == np.float64
    assert volume.data[0, 0, 0] == 0.0
    with pytest.raises(ValueError):
        volume.data[0, 0, 0] = 1.0


def test_flat_order_is_x_fastest():
    """Test the flat payload order."""
    volume = _ramp(dims=(2, 3, 1))

    assert volume.flat()[:3].tolist() == [volume.data[0, 0, 0], volume.data[1, 0, 0], volume.data[0, 1, 0]]


def test_extract_slice():
    """Test axial slicing and its z position."""
    volume = Volume3D(np.random.default_rng(0).random((4, 5, 6)), (0.5, 0.5, 2.0), (0.0, 0.0, 10.0))

    slc = extract_slice(volume, 3)

    assert slc.data.shape == (4, 5)
    assert slc.width == 4 and slc.height == 5
    assert slc.z_mm == 16.0
    np.testing.assert_array_equal(slc.data, volume.data[:, :, 3])


def test_extract_slice_errors():
    """Test out-of-range indices and non-axial slicing."""
    volume = _ramp()
    with pytest.raises(BoundsError):
        extract_slice(volume, 6)
    with pytest.raises(BoundsError):
        extract_slice(volume, -1)
    with pytest.raises(ModeError):
        extract_slice(volume, 0, axis="x")


def test_insert_slice_replaces_plane():
    """Test that insert_slice replaces exactly one plane."""
    volume = _ramp()
    plane = Slice2D(np.full((4, 5), -1.0), (1.0, 1.0))

    out = insert_slice(volume, plane, 2)

    assert np.all(out.data[:, :, 2] == -1.0)
    np.testing.assert_array_equal(out.data[:, :, 3], volume.data[:, :, 3])
    with pytest.raises(ShapeError):
        insert_slice(volume, Slice2D(np.zeros((3, 3)), (1.0, 1.0)), 0)


def test_resample_dims_and_origin():
    """Test output dims and the half-voxel origin shift."""
    volume = Volume3D(np.ones((10, 10, 10)), (1.0, 1.0, 2.0))

    out = resample(volume, (1.0, 1.0, 1.0), ResampleMode.TRILINEAR)

    assert out.dims == (10, 10, 20)
    assert out.spacing == (1.0, 1.0, 1.0)
    assert out.origin == (0.0, 0.0, -0.5)
    assert np.all(out.data == 1.0)


def test_resample_same_spacing_is_identity():
    """Test that resampling onto the same spacing keeps the data."""
    volume = _ramp()

    out = resample(volume, volume.spacing, "nearest")

    assert out.equals(volume)


def test_resample_nearest_keeps_masks_binary():
    """Test that nearest resampling keeps a mask binary and trilinear is refused."""
    mask = Volume3D((np.random.default_rng(1).random((8, 8, 8)) > 0.5).astype(float), (1, 1, 1), kind="binary-mask")

    out = resample(mask, (0.5, 0.5, 0.5), ResampleMode.NEAREST)

    assert out.dims == (16, 16, 16)
    assert set(np.unique(out.data)) <= {0.0, 1.0}
    with pytest.raises(ModeError):
        resample(mask, (0.5, 0.5, 0.5), ResampleMode.TRILINEAR)
    with pytest.raises(ParameterError):
        resample(mask, (0.5, 0.0, 0.5), ResampleMode.NEAREST)


def test_trilinear_stays_within_input_range():
    """Test that trilinear interpolation does not overshoot."""
    volume = Volume3D(np.random.default_rng(2).random((6, 6, 6)), (1.0, 1.0, 1.0))

    out = resample(volume, (0.7, 0.7, 1.3), ResampleMode.TRILINEAR)

    assert out.data.min() >= volume.data.min()
    assert out.data.max() <= volume.data.max()


def test_window_normalize():
    """Test HU windowing to [0, 1] with clamping."""
    volume = Volume3D(np.array([-1000.0, -150.0, 225.0, 600.0, 3000.0]).reshape(5, 1, 1), (1, 1, 1))

    out = window_normalize(volume, -150.0, 600.0)

    assert out.data.ravel().tolist() == [0.0, 0.0, 0.5, 1.0, 1.0]
    with pytest.raises(ParameterError):
        window_normalize(volume, 600.0, -150.0)


def test_display_range():
    """Test uint8 export of normalized intensities."""
    volume = Volume3D(np.array([0.0, 0.5, 1.0]).reshape(3, 1, 1), (1, 1, 1))

    out = to_display_range(volume)

    assert out.dtype == np.uint8
    assert out.ravel().tolist() == [0, 128, 255]


def test_crop_and_paste_center():
    """Test that paste_center undoes crop_center and pads with the fill value."""
    data = np.arange(100, dtype=np.float64).reshape(10, 10)

    crop = crop_center(data, 4, center=(5, 5))
    assert crop.shape == (4, 4)
    np.testing.assert_array_equal(crop, data[3:7, 3:7])

    edge = crop_center(data, 4, center=(0, 0), fill=-1.0)
    assert edge[0, 0] == -1.0
    assert edge[2, 2] == data[0, 0]

    back = paste_center(crop, data.shape, center=(5, 5))
    np.testing.assert_array_equal(back[3:7, 3:7], crop)
    assert back.sum() == crop.sum()
