"""Mask stacking, volume smoothing and marching-cubes surface extraction."""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph
from skimage import measure

from aaa_toolkit.errors import MetadataError, ParameterError, ShapeError
from aaa_toolkit.mesh import TriMesh, clean, laplacian_smooth, signed_volume, taubin_smooth
from aaa_toolkit.prometheus_metrics import RunMetrics
from aaa_toolkit.schemas import ReconConfig
from aaa_toolkit.volume import Slice2D, Volume3D, VolumeKind

logger = logging.getLogger(__name__)


def stack_slices(
    masks: Sequence[Slice2D],
    z_positions: Sequence[float],
    origin_xy: tuple[float, float] = (0.0, 0.0),
    z_spacing: float | None = None,
) -> Volume3D:
    """
    Stack axial masks into a binary volume ordered by z.

    The z spacing is the median gap between positions; a single slice
    uses `z_spacing` (1 mm when not given).

    Raises:
        ShapeError: masks of different shape or a position count mismatch
        MetadataError: z positions not strictly increasing
    """
    if not masks or len(masks) != len(z_positions):
        raise ShapeError(f"{len(masks)} masks for {len(z_positions)} z positions")
    shape = masks[0].data.shape
    if any(m.data.shape != shape for m in masks):
        raise ShapeError("all masks must share one in-plane shape")
    z = np.asarray(z_positions, dtype=np.float64)
    gaps = np.diff(z)
    if np.any(gaps <= 0):
        raise MetadataError(f"slice positions must be strictly increasing, got {z.tolist()}")
    sz = float(np.median(gaps)) if len(gaps) else float(z_spacing or 1.0)
    data = np.stack([m.data for m in masks], axis=2)
    sx, sy = masks[0].spacing
    return Volume3D(
        (data > 0).astype(np.float64),
        (sx, sy, sz),
        (origin_xy[0], origin_xy[1], float(z[0])),
        VolumeKind.BINARY_MASK,
    )


def gaussian_smooth(volume: Volume3D, sigma_voxels: float) -> Volume3D:
    """Separable Gaussian with kernel radius ceil(3 sigma) and reflecting borders."""
    if sigma_voxels < 0:
        raise ParameterError(f"sigma must be >= 0, got {sigma_voxels}")
    if sigma_voxels == 0:
        return volume
    radius = int(math.ceil(3.0 * sigma_voxels))
    data = ndimage.gaussian_filter(volume.data, sigma_voxels, mode="reflect", radius=radius)
    data = np.clip(data, volume.data.min(), volume.data.max())
    return volume.with_data(data, VolumeKind.INTENSITY)


def marching_cubes(volume: Volume3D, iso: float = 0.5) -> TriMesh:
    """
    Closed isosurface in mm coordinates, oriented with positive enclosed volume.

    The grid is padded with a below-iso border so surfaces touching the
    volume boundary are closed. No crossing gives an empty mesh.
    """
    data = volume.data
    if data.size == 0 or data.max() < iso:
        return TriMesh.empty()
    padded = np.pad(data, 1, mode="constant", constant_values=min(float(data.min()), iso) - 1.0)
    spacing = np.asarray(volume.spacing)
    verts, faces, _, _ = measure.marching_cubes(
        padded, level=iso, spacing=tuple(spacing), method="lewiner", allow_degenerate=False
    )
    verts = verts.astype(np.float64) - spacing + np.asarray(volume.origin)

    # Weld coincident vertices so shared edges index the same vertex.
    welded, inverse = np.unique(np.round(verts, 9), axis=0, return_inverse=True)
    mesh = clean(TriMesh(welded, inverse.reshape(-1)[faces]))
    if signed_volume(mesh) < 0:
        mesh = TriMesh(mesh.vertices, mesh.faces[:, ::-1])
    logger.debug(
        f"Marching cubes produced {mesh.n_faces} triangles",
        extra={"iso": iso, "n_vertices": mesh.n_vertices},
    )
    return mesh


@dataclass
class ComponentReport:
    kept_faces: int
    dropped_faces: list[int] = field(default_factory=list)


def face_components(mesh: TriMesh) -> np.ndarray:
    """Connected component id of every triangle."""
    n = mesh.n_vertices
    f = mesh.faces
    rows = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
    cols = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    graph = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = csgraph.connected_components(graph, directed=False)
    return np.asarray(labels[f[:, 0]])


def keep_largest_component(mesh: TriMesh) -> tuple[TriMesh, ComponentReport]:
    """Largest connected surface by triangle count; the rest is reported."""
    if mesh.is_empty():
        return mesh, ComponentReport(kept_faces=0)
    labels = face_components(mesh)
    ids, counts = np.unique(labels, return_counts=True)
    largest = ids[np.argmax(counts)]
    dropped = sorted((int(c) for i, c in zip(ids, counts, strict=True) if i != largest), reverse=True)
    if dropped:
        logger.warning(
            f"Dropped {len(dropped)} smaller surface components",
            extra={"dropped_faces": dropped, "kept_faces": int(counts.max())},
        )
    kept = clean(TriMesh(mesh.vertices, mesh.faces[labels == largest]))
    return kept, ComponentReport(kept_faces=kept.n_faces, dropped_faces=dropped)


def reconstruct(mask: Volume3D, cfg: ReconConfig, metrics: RunMetrics | None = None) -> TriMesh:
    """Smooth, extract, optionally keep the largest component, then Laplacian and Taubin passes."""
    smoothed = gaussian_smooth(mask, cfg.volume_sigma_voxels)
    mesh = marching_cubes(smoothed, cfg.iso)
    if mesh.is_empty():
        logger.warning("Mask has no surface at the iso level", extra={"iso": cfg.iso})
        return mesh
    if cfg.keep_largest_component:
        mesh, _ = keep_largest_component(mesh)
    mesh = laplacian_smooth(mesh, cfg.laplacian_iterations, cfg.laplacian_lambda)
    mesh = taubin_smooth(mesh, cfg.taubin_iterations, cfg.taubin_lambda, cfg.taubin_mu)
    if metrics is not None:
        metrics.mesh_triangles.set(mesh.n_faces)
    logger.info(
        f"Reconstructed surface with {mesh.n_faces} triangles",
        extra={"n_vertices": mesh.n_vertices, "sigma": cfg.volume_sigma_voxels},
    )
    return mesh
