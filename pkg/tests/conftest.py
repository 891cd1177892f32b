"""Test fixtures and utilities."""

import logging
import math

import numpy as np
import pytest

from aaa_toolkit import logging_config
from aaa_toolkit.config import dump_config
from aaa_toolkit.mesh import TriMesh
from aaa_toolkit.phantom import generate, write_phantom
from aaa_toolkit.schemas import (
    AugmentConfig,
    DistractorSpec,
    ExperimentConfig,
    PhantomSetConfig,
    PhantomSpec,
    PreprocessConfig,
    RunConfig,
    TrainConfig,
    UNetConfig,
)
from aaa_toolkit.volume import Volume3D, VolumeKind


@pytest.fixture(autouse=True)
def reset_logging():
    """Remove handlers installed by configure_logging after each test."""
    yield
    root = logging.getLogger()
    for handler in list(logging_config._handlers):
        root.removeHandler(handler)
        handler.close()
    logging_config._handlers.clear()


@pytest.fixture
def small_spec():
    """48^3 phantom with two distractor organs clear of the aneurysm."""
    return PhantomSpec(
        dims=(48, 48, 48),
        axis_center_mm=(24.0, 24.0),
        lumen_radius_mm=4.0,
        bulge_radius_mm=9.0,
        bulge_center_z_mm=24.0,
        bulge_sigma_z_mm=6.0,
        noise_sigma_hu=5.0,
        distractors=[
            DistractorSpec(
                name="vertebra", label=3, center_mm=(24.0, 40.0, 24.0), semi_axes_mm=(5.0, 2.0, 16.0), mean_hu=80.0
            ),
            DistractorSpec(
                name="kidney", label=5, center_mm=(38.0, 10.0, 24.0), semi_axes_mm=(3.0, 3.0, 8.0), mean_hu=70.0
            ),
        ],
        seed=3,
    )


@pytest.fixture
def small_config(small_spec):
    """Experiment config that trains in seconds on a three-phantom cohort."""
    return ExperimentConfig(
        run=RunConfig(seed=7, compare_seeds=(1,)),
        preprocess=PreprocessConfig(crop_size=32),
        phantom=small_spec,
        phantom_set=PhantomSetConfig(count=3, n_train=1, n_val=1, n_test=1, jitter=False),
        unet=UNetConfig(levels=2, base_channels=4),
        augment=AugmentConfig(elastic_prob=0.0),
        train=TrainConfig(lr=1e-3, batch_size=2, max_epochs=2, patience=1, steps_per_epoch=2),
    )


@pytest.fixture
def config_file(tmp_path, small_config):
    """small_config written as an INI file."""
    path = tmp_path / "experiment.ini"
    path.write_text(dump_config(small_config), encoding="utf-8")
    return path


@pytest.fixture
def run_dir(tmp_path):
    """Empty output directory for one run."""
    path = tmp_path / "run"
    path.mkdir()
    return path


@pytest.fixture
def make_ball():
    """Factory for binary balls: make_ball(radius, dims, center=None, spacing=(1, 1, 1))."""

    def _make(radius, dims, center=None, spacing=(1.0, 1.0, 1.0)):
        spacing = np.asarray(spacing, dtype=np.float64)
        if center is None:
            center = (np.asarray(dims) - 1) / 2.0 * spacing
        axes = [np.arange(n) * s for n, s in zip(dims, spacing)]
        X, Y, Z = np.meshgrid(*axes, indexing="ij")
        inside = (X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2 <= radius**2
        return Volume3D(inside.astype(np.float64), tuple(spacing), (0.0, 0.0, 0.0), VolumeKind.BINARY_MASK)

    return _make


@pytest.fixture
def make_cylinder_mask():
    """Factory for a z-aligned binary tube around the voxel column (cx, cy)."""

    def _make(radius, dims=(32, 32, 40), axis=(15, 15), z_range=(4, 35)):
        X, Y, Z = np.meshgrid(*(np.arange(n) for n in dims), indexing="ij")
        inside = ((X - axis[0]) ** 2 + (Y - axis[1]) ** 2 <= radius**2) & (Z >= z_range[0]) & (Z <= z_range[1])
        return Volume3D(inside.astype(np.float64), (1.0, 1.0, 1.0), (0.0, 0.0, 0.0), VolumeKind.BINARY_MASK)

    return _make


@pytest.fixture
def unit_cube_mesh():
    """Closed unit cube, 8 vertices, 12 outward triangles."""
    vertices = np.array(
        [
            [0, 0, 0],
            [1, 0, 0],
            [1, 1, 0],
            [0, 1, 0],
            [0, 0, 1],
            [1, 0, 1],
            [1, 1, 1],
            [0, 1, 1],
        ],
        dtype=np.float64,
    )
    faces = np.array(
        [
            [0, 2, 1], [0, 3, 2],  # z = 0
            [4, 5, 6], [4, 6, 7],  # z = 1
            [0, 1, 5], [0, 5, 4],  # y = 0
            [3, 7, 6], [3, 6, 2],  # y = 1
            [0, 4, 7], [0, 7, 3],  # x = 0
            [1, 2, 6], [1, 6, 5],  # x = 1
        ]
    )
    return TriMesh(vertices, faces)


@pytest.fixture
def make_tube_mesh():
    """Factory for a capped polygonal cylinder along z: make_tube_mesh(radius, length, n_theta, n_rings)."""

    def _make(radius, length, n_theta=128, n_rings=41, center=(0.0, 0.0), z0=0.0):
        theta = np.linspace(0.0, 2.0 * math.pi, n_theta, endpoint=False)
        zs = np.linspace(z0, z0 + length, n_rings)
        ring = np.column_stack([center[0] + radius * np.cos(theta), center[1] + radius * np.sin(theta)])
        vertices = [np.column_stack([ring, np.full(n_theta, z)]) for z in zs]
        vertices.append(np.array([[center[0], center[1], z0], [center[0], center[1], z0 + length]]))
        vertices = np.vstack(vertices)
        bottom, top = n_rings * n_theta, n_rings * n_theta + 1

        def vid(k, j):
            return k * n_theta + j % n_theta

        faces = []
        for k in range(n_rings - 1):
            for j in range(n_theta):
                a, b, c, d = vid(k, j), vid(k, j + 1), vid(k + 1, j + 1), vid(k + 1, j)
                faces.append([a, b, c])
                faces.append([a, c, d])
        for j in range(n_theta):
            faces.append([bottom, vid(0, j + 1), vid(0, j)])
            faces.append([top, vid(n_rings - 1, j), vid(n_rings - 1, j + 1)])
        return TriMesh(vertices, np.asarray(faces))

    return _make


@pytest.fixture
def phantom_data_dir(tmp_path, small_spec):
    """Two small phantom patients on disk, phantom_000 and phantom_001."""
    root = tmp_path / "data"
    for k in range(2):
        write_phantom(generate(small_spec.model_copy(update={"seed": k})), root / f"phantom_{k:03d}")
    return root
