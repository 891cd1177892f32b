"""Cross-sections, radii and clinical descriptors along a centerline."""

import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from pydantic import BaseModel, Field
from scipy.spatial import ConvexHull, QhullError
from scipy.spatial.distance import pdist

from aaa_toolkit.centerline import Centerline
from aaa_toolkit.errors import (
    EmptySectionError,
    GeometryError,
    MeasurementError,
    TopologyError,
    VolumeIOError,
)
from aaa_toolkit.mesh import TriMesh, mesh_measures
from aaa_toolkit.metrics import write_csv
from aaa_toolkit.phantom import AnalyticRecord
from aaa_toolkit.prometheus_metrics import RunMetrics
from aaa_toolkit.schemas import CenterlineConfig, SurfaceLabel

logger = logging.getLogger(__name__)

CENTERLINE_FILE = "centerline.csv"
PROFILE_FILE = "diameter_profile.csv"
DESCRIPTORS_FILE = "descriptors.csv"
REPORT_FILE = "report.txt"


@dataclass(frozen=True)
class Section:
    """One closed mesh-plane contour in mm and in plane coordinates around the cut point."""

    points: np.ndarray
    coords: np.ndarray
    area_mm2: float


@dataclass(frozen=True)
class RadiusMeasures:
    r_inscribed: float
    r_equiv_area: float
    d_max_chord: float


def polygon_area(coords: np.ndarray) -> float:
    x, y = coords[:, 0], coords[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def contains(coords: np.ndarray, point: np.ndarray) -> bool:
    """Even-odd rule."""
    x, y = coords[:, 0], coords[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    px, py = float(point[0]), float(point[1])
    straddles = (y > py) != (yn > py)
    dy = np.where(straddles, yn - y, 1.0)
    x_cross = x + (py - y) * (xn - x) / dy
    return bool(np.count_nonzero(straddles & (px < x_cross)) % 2 == 1)


def segment_distances(coords: np.ndarray, point: np.ndarray) -> np.ndarray:
    """Distance from point to each closed-contour segment."""
    a = coords
    b = np.roll(coords, -1, axis=0)
    ab = b - a
    denom = np.einsum("ij,ij->i", ab, ab)
    t = np.divide(np.einsum("ij,ij->i", point - a, ab), denom, out=np.zeros(len(a)), where=denom > 0)
    nearest = a + np.clip(t, 0.0, 1.0)[:, None] * ab
    return np.linalg.norm(point - nearest, axis=1)


def _plane_basis(tangent: np.ndarray, normal: np.ndarray | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    t = tangent / np.linalg.norm(tangent)
    u = normal if normal is not None else np.eye(3)[int(np.argmin(np.abs(t)))]
    u = u - np.dot(u, t) * t
    if np.linalg.norm(u) < 1e-12:
        u = np.eye(3)[int(np.argmin(np.abs(t)))]
        u = u - np.dot(u, t) * t
    u /= np.linalg.norm(u)
    return t, u, np.cross(t, u)


def _loops(segments: np.ndarray, n_nodes: int) -> list[list[int]]:
    """Chain degree-2 node pairs into closed loops."""
    adjacency: list[list[int]] = [[] for _ in range(n_nodes)]
    for a, b in segments:
        adjacency[a].append(int(b))
        adjacency[b].append(int(a))
    visited = np.zeros(n_nodes, dtype=bool)
    loops = []
    for start in range(n_nodes):
        if visited[start]:
            continue
        loop = [start]
        visited[start] = True
        prev, cur = -1, start
        while True:
            first, second = adjacency[cur]
            nxt = second if first == prev else first
            if nxt == start or visited[nxt]:
                break
            loop.append(nxt)
            visited[nxt] = True
            prev, cur = cur, nxt
        if len(loop) >= 3:
            loops.append(loop)
    return loops


def cross_section(
    mesh: TriMesh,
    point: np.ndarray,
    tangent: np.ndarray,
    normal: np.ndarray | None = None,
) -> Section:
    """
    Contour where the plane through `point` normal to `tangent` cuts the mesh.

    Vertices lying on the plane count as being on its positive side. When
    several loops result, the innermost loop around the point wins, else
    the loop nearest to it.

    Raises:
        EmptySectionError: the plane misses the mesh
        TopologyError: the cut is not a set of closed loops
    """
    point = np.asarray(point, dtype=np.float64)
    t, u, v = _plane_basis(np.asarray(tangent, dtype=np.float64), normal)
    sd = (mesh.vertices - point) @ t
    positive = sd >= 0
    faces = mesh.faces
    side = positive[faces]
    cut = side.any(axis=1) & ~side.all(axis=1)
    if not cut.any():
        raise EmptySectionError(f"plane through {point.tolist()} does not cut the mesh")

    cut_faces = faces[cut]
    ends = []
    for k in range(3):
        a, b = cut_faces[:, k], cut_faces[:, (k + 1) % 3]
        ends.append((np.minimum(a, b), np.maximum(a, b), positive[a] != positive[b]))
    # Every cut triangle has exactly two crossing edges.
    edge_pairs = []
    for lo, hi, crosses in ends:
        edge_pairs.append(np.where(crosses[:, None], np.column_stack([lo, hi]), -1))
    stacked = np.stack(edge_pairs, axis=1)
    picked = stacked[stacked[:, :, 0] >= 0].reshape(-1, 2, 2)
    keys, inverse = np.unique(picked.reshape(-1, 2), axis=0, return_inverse=True)
    segments = inverse.reshape(-1, 2)
    degree = np.bincount(segments.ravel(), minlength=len(keys))
    if np.any(degree != 2):
        raise TopologyError("mesh-plane intersection is not closed (mesh not watertight)")

    va, vb = mesh.vertices[keys[:, 0]], mesh.vertices[keys[:, 1]]
    da, db = sd[keys[:, 0]], sd[keys[:, 1]]
    nodes = va + (da / (da - db))[:, None] * (vb - va)
    coords = np.column_stack([(nodes - point) @ u, (nodes - point) @ v])

    loops = _loops(segments, len(keys))
    if not loops:
        raise EmptySectionError(f"plane through {point.tolist()} gives only degenerate loops")
    origin = np.zeros(2)
    enclosing = [lp for lp in loops if contains(coords[lp], origin)]
    if enclosing:
        best = min(enclosing, key=lambda lp: polygon_area(coords[lp]))
    else:
        best = min(loops, key=lambda lp: float(segment_distances(coords[lp], origin).min()))
    return Section(points=nodes[best], coords=coords[best], area_mm2=polygon_area(coords[best]))


def radius_measures(coords: np.ndarray, center: np.ndarray | None = None) -> RadiusMeasures:
    """
    Inscribed radius about the center, equivalent-area radius and maximum chord.

    Raises:
        GeometryError: the center lies outside the contour
    """
    coords = np.asarray(coords, dtype=np.float64)
    c = np.zeros(2) if center is None else np.asarray(center, dtype=np.float64)
    if not contains(coords, c):
        raise GeometryError(f"center {c.tolist()} lies outside the contour")
    try:
        hull = coords[ConvexHull(coords).vertices]
    except (QhullError, ValueError):
        hull = coords
    return RadiusMeasures(
        r_inscribed=float(segment_distances(coords, c).min()),
        r_equiv_area=math.sqrt(polygon_area(coords) / math.pi),
        d_max_chord=float(pdist(hull).max()),
    )


class Descriptors(BaseModel):
    """Clinical descriptors of one reconstructed vessel."""

    surface_label: SurfaceLabel = Field(..., description="Which wall the mesh represents")
    n_points: int
    n_failed_sections: int
    centerline_length_mm: float
    tortuosity: float
    max_diameter_mm: float
    max_diameter_s_mm: float = Field(..., description="Arc length at the maximal diameter")
    mean_curvature_per_mm: float
    max_curvature_per_mm: float
    surface_area_mm2: float
    volume_mm3: float
    max_diameter_over_length: float
    shape_indices: dict[str, float] = Field(default_factory=dict)


def shape_index(name: str, line: Centerline) -> float:
    d = line.d_max_chord
    d_max = float(np.nanmax(d))
    if name == "size_ratio_max_over_min":
        return d_max / float(np.nanmin(d))
    if name == "size_ratio_max_over_inlet":
        return d_max / float(d[0])
    if name == "aspect_ratio_length_over_diameter":
        return line.length_mm / d_max
    raise KeyError(name)


def measure_sections(line: Centerline, mesh: TriMesh, metrics: RunMetrics | None = None) -> tuple[Centerline, int]:
    """Radii at every centerline point; failed sections become NaN."""
    n = len(line.points)
    r_ins, r_eq, d_chord = np.full(n, np.nan), np.full(n, np.nan), np.full(n, np.nan)
    failed = 0
    for i in range(n):
        try:
            section = cross_section(mesh, line.points[i], line.tangents[i], line.normals[i])
            radii = radius_measures(section.coords)
        except (EmptySectionError, TopologyError, GeometryError) as e:
            failed += 1
            if metrics is not None:
                metrics.sections_failed_total.inc()
            logger.warning(
                f"Cross-section {i} skipped: {e}",
                extra={"index": i, "s_mm": float(line.s[i]), "error": type(e).__name__},
            )
            continue
        r_ins[i], r_eq[i], d_chord[i] = radii.r_inscribed, radii.r_equiv_area, radii.d_max_chord
    return replace(line, r_inscribed=r_ins, r_equiv_area=r_eq, d_max_chord=d_chord), failed


def morphometry(
    line: Centerline,
    mesh: TriMesh,
    cfg: CenterlineConfig,
    metrics: RunMetrics | None = None,
) -> tuple[Centerline, Descriptors]:
    """
    Measure every cross-section and summarize the vessel.

    Raises:
        MeasurementError: no cross-section could be measured or the mesh is not watertight
    """
    measured = mesh_measures(mesh)
    line, failed = measure_sections(line, mesh, metrics)
    if np.all(np.isnan(line.d_max_chord)):
        raise MeasurementError("no cross-section along the centerline could be measured")
    k_max = int(np.nanargmax(line.d_max_chord))
    d_max = float(line.d_max_chord[k_max])
    descriptors = Descriptors(
        surface_label=cfg.surface_label,
        n_points=len(line.points),
        n_failed_sections=failed,
        centerline_length_mm=line.length_mm,
        tortuosity=line.tortuosity,
        max_diameter_mm=d_max,
        max_diameter_s_mm=float(line.s[k_max]),
        mean_curvature_per_mm=float(np.mean(line.curvature)),
        max_curvature_per_mm=float(np.max(line.curvature)),
        surface_area_mm2=measured.surface_area_mm2,
        volume_mm3=measured.volume_mm3,
        max_diameter_over_length=d_max / line.length_mm,
        shape_indices={name: shape_index(name, line) for name in cfg.shape_indices},
    )
    logger.info(
        f"Max diameter {d_max:.1f} mm at s={descriptors.max_diameter_s_mm:.1f} mm",
        extra={"failed_sections": failed, "surface_label": cfg.surface_label.value},
    )
    return line, descriptors


def write_centerline(line: Centerline, path: Path) -> None:
    rows = [
        [*map(float, p), float(s), float(k), float(ri), float(re), float(dc)]
        for p, s, k, ri, re, dc in zip(
            line.points, line.s, line.curvature, line.r_inscribed, line.r_equiv_area, line.d_max_chord, strict=True
        )
    ]
    write_csv(path, ["x", "y", "z", "s", "kappa", "r_inscribed", "r_equiv_area", "d_max_chord"], rows)


def write_profile(line: Centerline, path: Path) -> None:
    """Diameter profile d(s) under the three radius definitions."""
    rows = [
        [float(s), float(dc), 2.0 * float(re), 2.0 * float(ri)]
        for s, dc, re, ri in zip(line.s, line.d_max_chord, line.r_equiv_area, line.r_inscribed, strict=True)
    ]
    write_csv(path, ["s", "d_max_chord", "d_equiv_area", "d_inscribed"], rows)


def write_descriptors(descriptors: Descriptors, path: Path) -> None:
    rows: list[list[object]] = []
    for key, value in descriptors.model_dump(mode="json").items():
        if key == "shape_indices":
            rows.extend([f"shape_index.{name}", v] for name, v in value.items())
        else:
            rows.append([key, value])
    write_csv(path, ["name", "value"], rows)


def format_report(descriptors: Descriptors, analytic: AnalyticRecord | None = None) -> str:
    """Predicted (and optionally true) diameter, area and volume in cm units."""
    rows = [
        ("Maximal Diameter", descriptors.max_diameter_mm / 10.0, "cm", "max_diameter_mm", 10.0),
        ("Surface Area", descriptors.surface_area_mm2 / 100.0, "cm²", "surface_area_mm2", 100.0),
        ("Volume", descriptors.volume_mm3 / 1000.0, "cm³", "volume_mm3", 1000.0),
    ]
    lines = [f"Morphometry report (surface: {descriptors.surface_label.value})"]
    for title, value, unit, key, scale in rows:
        line = f"{title} (pred) {value:.1f} {unit}"
        if analytic is not None:
            line += f" / (true) {getattr(analytic, key) / scale:.1f} {unit}"
        lines.append(line)
    lines.append(f"Centerline Length {descriptors.centerline_length_mm / 10.0:.1f} cm")
    lines.append(f"Tortuosity {descriptors.tortuosity:.3f}")
    lines.append(f"Mean Curvature {descriptors.mean_curvature_per_mm:.4f} 1/mm")
    for name, value in descriptors.shape_indices.items():
        lines.append(f"{name} {value:.3f}")
    return "\n".join(lines) + "\n"


def write_morphometry(
    line: Centerline,
    descriptors: Descriptors,
    out_dir: Path,
    analytic: AnalyticRecord | None = None,
) -> None:
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_centerline(line, out_dir / CENTERLINE_FILE)
        write_profile(line, out_dir / PROFILE_FILE)
        write_descriptors(descriptors, out_dir / DESCRIPTORS_FILE)
        (out_dir / REPORT_FILE).write_text(format_report(descriptors, analytic), encoding="utf-8")
    except OSError as e:
        raise VolumeIOError(f"cannot write morphometry outputs to {out_dir}: {e}", path=str(out_dir)) from e
