"""Indexed triangle meshes: topology checks, smoothing and measurements."""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse

from aaa_toolkit.errors import InvariantError, MeasurementError, ParameterError, TopologyError

logger = logging.getLogger(__name__)

DEGENERATE_AREA_MM2 = 1e-12


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Vertices in mm and outward-oriented triangles (counter-clockwise seen from outside)."""

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self) -> None:
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise InvariantError("triangle indices out of range")
        vertices.setflags(write=False)
        faces.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_faces(self) -> int:
        return int(self.faces.shape[0])

    def is_empty(self) -> bool:
        return self.n_faces == 0

    def with_vertices(self, vertices: np.ndarray) -> "TriMesh":
        return TriMesh(vertices, self.faces)

    @classmethod
    def empty(cls) -> "TriMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))


def triangle_areas(mesh: TriMesh) -> np.ndarray:
    v = mesh.vertices[mesh.faces]
    return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)


def edge_face_counts(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Unique undirected edges (E, 2) and the number of faces using each."""
    if mesh.is_empty():
        return np.zeros((0, 2), dtype=np.int64), np.zeros(0, dtype=np.int64)
    f = mesh.faces
    edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    unique, counts = np.unique(edges, axis=0, return_counts=True)
    return unique, counts


def edge_manifold_check(mesh: TriMesh) -> None:
    """Raise TopologyError when an edge is shared by more than two faces."""
    _, counts = edge_face_counts(mesh)
    if np.any(counts > 2):
        raise TopologyError(f"{int(np.sum(counts > 2))} edges are shared by more than two triangles")


def is_watertight(mesh: TriMesh) -> bool:
    """Every edge shared by exactly two triangles."""
    if mesh.is_empty():
        return False
    _, counts = edge_face_counts(mesh)
    return bool(np.all(counts == 2))


def clean(mesh: TriMesh) -> TriMesh:
    """Drop triangles with repeated indices or area below DEGENERATE_AREA_MM2 and unused vertices."""
    f = mesh.faces
    keep = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    keep &= triangle_areas(mesh) > DEGENERATE_AREA_MM2
    return compact(TriMesh(mesh.vertices, f[keep]))


def compact(mesh: TriMesh) -> TriMesh:
    """Remove vertices no triangle references."""
    used, inverse = np.unique(mesh.faces.ravel(), return_inverse=True)
    return TriMesh(mesh.vertices[used], inverse.reshape(-1, 3))


def _adjacency(mesh: TriMesh) -> sparse.csr_matrix:
    edges, _ = edge_face_counts(mesh)
    n = mesh.n_vertices
    rows = np.concatenate([edges[:, 0], edges[:, 1]])
    cols = np.concatenate([edges[:, 1], edges[:, 0]])
    return sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))


def _umbrella(mesh: TriMesh) -> sparse.csr_matrix:
    """Uniform neighbour-mean operator D^-1 A; isolated vertices map to themselves."""
    adjacency = _adjacency(mesh)
    degree = np.asarray(adjacency.sum(axis=1)).ravel()
    inv = np.where(degree > 0, 1.0 / np.maximum(degree, 1.0), 0.0)
    mean = sparse.diags(inv) @ adjacency
    isolated = sparse.diags((degree == 0).astype(np.float64))
    return (mean + isolated).tocsr()


def _laplacian_steps(mesh: TriMesh, factors: list[float]) -> TriMesh:
    edge_manifold_check(mesh)
    umbrella = _umbrella(mesh)
    v = mesh.vertices.copy()
    for factor in factors:
        # Synchronous update: every vertex reads the previous positions.
        v = v + factor * (umbrella @ v - v)
    return mesh.with_vertices(v)


def laplacian_smooth(mesh: TriMesh, iterations: int, lam: float) -> TriMesh:
    """
    v <- v + lam * (mean of neighbours - v), repeated `iterations` times.

    Raises:
        TopologyError: non-manifold edges
    """
    if iterations < 0:
        raise ParameterError(f"iterations must be >= 0, got {iterations}")
    if iterations == 0:
        return mesh
    return _laplacian_steps(mesh, [lam] * iterations)


def taubin_smooth(mesh: TriMesh, iterations: int, lam: float, mu: float) -> TriMesh:
    """
    Alternating shrink (lam) and inflate (mu) Laplacian steps.

    Raises:
        ParameterError: unless lam > 0 > mu and |mu| > lam
        TopologyError: non-manifold edges
    """
    if not (lam > 0 > mu and abs(mu) > lam):
        raise ParameterError(f"Taubin smoothing needs lambda > 0 > mu and |mu| > lambda, got {lam}, {mu}")
    if iterations < 0:
        raise ParameterError(f"iterations must be >= 0, got {iterations}")
    if iterations == 0:
        return mesh
    return _laplacian_steps(mesh, [lam, mu] * iterations)


def signed_volume(mesh: TriMesh) -> float:
    """Sum of signed tetrahedra against the vertex centroid."""
    if mesh.is_empty():
        return 0.0
    center = mesh.vertices.mean(axis=0)
    v = mesh.vertices[mesh.faces] - center
    return float(np.einsum("ij,ij->i", v[:, 0], np.cross(v[:, 1], v[:, 2])).sum() / 6.0)


@dataclass(frozen=True)
class MeshMeasures:
    surface_area_mm2: float
    volume_mm3: float


def mesh_measures(mesh: TriMesh) -> MeshMeasures:
    """
    Surface area and enclosed volume.

    Raises:
        MeasurementError: mesh is empty or not watertight
    """
    if not is_watertight(mesh):
        raise MeasurementError("surface area and volume need a non-empty watertight mesh")
    return MeshMeasures(
        surface_area_mm2=float(triangle_areas(mesh).sum()),
        volume_mm3=abs(signed_volume(mesh)),
    )
