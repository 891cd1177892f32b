"""
Vessel centerlines from a binary mask.

The distance to the wall drives a fast-marching front from the inlet;
the minimal-cost path is recovered by descending the arrival times from
the outlet. Cost is inversely proportional to the wall distance, so the
path stays near the medial axis.
"""

import heapq
import logging
import math
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse import csgraph

from aaa_toolkit.errors import EndpointError, InvariantError, PathError, UnreachableError
from aaa_toolkit.schemas import CenterlineConfig
from aaa_toolkit.volume import Volume3D, VolumeKind

logger = logging.getLogger(__name__)

Index3 = tuple[int, int, int]

FACE_NEIGHBOURS: tuple[tuple[int, int], ...] = ((0, -1), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1))
MAX_STEP_HALVINGS = 6


def distance_transform(mask: Volume3D) -> Volume3D:
    """
    Exact Euclidean distance in mm from each mask voxel center to the nearest background center.

    Voxels outside the grid count as background.

    Raises:
        InvariantError: mask holds values other than 0 and 1
    """
    data = mask.data
    if not np.all((data == 0) | (data == 1)):
        raise InvariantError("distance transform needs a binary mask")
    padded = np.pad(data > 0, 1, mode="constant", constant_values=False)
    if not padded.any():
        return mask.with_data(np.zeros(mask.dims), VolumeKind.INTENSITY)
    dist = ndimage.distance_transform_edt(padded, sampling=mask.spacing)[1:-1, 1:-1, 1:-1]
    return mask.with_data(dist, VolumeKind.INTENSITY)


def speed_field(dist: Volume3D, power: float = 1.0, epsilon_mm: float = 0.1) -> np.ndarray:
    """F = d^p + eps inside the mask, 0 (impassable) outside."""
    d = dist.data
    return np.where(d > 0, np.power(d, power) + epsilon_mm, 0.0)


@dataclass
class MarchResult:
    """Arrival times (inf where the front never arrived) and the accepted order."""

    arrival: np.ndarray
    accepted: list[Index3] = field(default_factory=list)


def _check_endpoint(name: str, index: Index3, speed: np.ndarray) -> Index3:
    idx = tuple(int(i) for i in index)
    if len(idx) != 3 or any(not 0 <= i < n for i, n in zip(idx, speed.shape, strict=True)):
        raise EndpointError(f"{name} {index} lies outside the volume", endpoint=name)
    if speed[idx] <= 0:
        raise EndpointError(f"{name} {index} lies outside the mask", endpoint=name)
    return idx  # type: ignore[return-value]


def _solve_eikonal(candidates: list[tuple[float, float]], speed: float) -> float:
    """First-order upwind update from (neighbour time, spacing) pairs, one per axis."""
    candidates.sort()
    t0, h0 = candidates[0]
    t = t0 + h0 / speed
    for k in range(2, len(candidates) + 1):
        if t <= candidates[k - 1][0]:
            break
        used = candidates[:k]
        a = sum(1.0 / (h * h) for _, h in used)
        b = -2.0 * sum(tv / (h * h) for tv, h in used)
        c = sum(tv * tv / (h * h) for tv, h in used) - 1.0 / (speed * speed)
        disc = b * b - 4.0 * a * c
        if disc < 0:
            break
        t = (-b + math.sqrt(disc)) / (2.0 * a)
    return t


def fast_march(
    speed: np.ndarray,
    spacing: tuple[float, float, float],
    inlet: Index3,
    outlet: Index3 | None = None,
) -> MarchResult:
    """
    Solve |grad T| = 1/F from the inlet on the 6-neighbour stencil.

    Marching stops once the outlet is accepted; with no outlet the whole
    reachable region is filled.

    Raises:
        EndpointError: an endpoint outside the grid or where F = 0
        UnreachableError: outlet not connected to the inlet
    """
    inlet = _check_endpoint("inlet", inlet, speed)
    target = _check_endpoint("outlet", outlet, speed) if outlet is not None else None
    shape = speed.shape
    arrival = np.full(shape, np.inf)
    known = np.zeros(shape, dtype=bool)
    arrival[inlet] = 0.0
    heap: list[tuple[float, Index3]] = [(0.0, inlet)]
    accepted: list[Index3] = []

    while heap:
        _, idx = heapq.heappop(heap)
        if known[idx]:
            continue
        known[idx] = True
        accepted.append(idx)
        if idx == target:
            break
        for axis, step in FACE_NEIGHBOURS:
            nb = list(idx)
            nb[axis] += step
            if not 0 <= nb[axis] < shape[axis]:
                continue
            n_idx: Index3 = (nb[0], nb[1], nb[2])
            if known[n_idx] or speed[n_idx] <= 0:
                continue
            candidates = []
            for a in range(3):
                best = math.inf
                for s in (-1, 1):
                    m = list(n_idx)
                    m[a] += s
                    if 0 <= m[a] < shape[a] and known[m[0], m[1], m[2]]:
                        best = min(best, float(arrival[m[0], m[1], m[2]]))
                if best < math.inf:
                    candidates.append((best, spacing[a]))
            t_new = _solve_eikonal(candidates, float(speed[n_idx]))
            if t_new < arrival[n_idx]:
                arrival[n_idx] = t_new
                heapq.heappush(heap, (t_new, n_idx))

    if target is not None and not known[target]:
        raise UnreachableError(f"outlet {target} is not connected to inlet {inlet}")
    arrival[~known] = np.inf
    logger.debug(f"Fast marching accepted {len(accepted)} voxels", extra={"inlet": inlet, "outlet": target})
    return MarchResult(arrival=arrival, accepted=accepted)


def _interp(field_: np.ndarray, p: np.ndarray) -> float:
    return float(ndimage.map_coordinates(field_, p.reshape(3, 1), order=1, mode="nearest")[0])


def _lowest_neighbour(times: np.ndarray, p: np.ndarray, t_cur: float) -> tuple[np.ndarray, float]:
    v = np.rint(p).astype(int)
    best_t, best = t_cur, None
    for off in product((-1, 0, 1), repeat=3):
        q = v + np.asarray(off)
        if np.any(q < 0) or np.any(q >= times.shape):
            continue
        tq = float(times[q[0], q[1], q[2]])
        if tq < best_t:
            best_t, best = tq, q
    if best is None:
        raise PathError(f"arrival times have a local minimum at {v.tolist()}")
    return best.astype(np.float64), best_t


def backtrack(
    arrival: np.ndarray,
    spacing: tuple[float, float, float],
    inlet: Index3,
    outlet: Index3,
    step_voxels: float = 0.25,
) -> np.ndarray:
    """
    Steepest descent on trilinearly interpolated arrival times from outlet to inlet.

    Every accepted step strictly lowers T; when no shortened gradient step
    does, the walk jumps to the lowest-T voxel around the current point.
    Returns (n, 3) voxel coordinates ordered inlet to outlet.
    """
    finite = np.isfinite(arrival)
    ceiling = 2.0 * float(arrival[finite].max()) + 1.0
    times = np.where(finite, arrival, ceiling)
    h = np.asarray(spacing, dtype=np.float64)
    grads = np.gradient(times, *h)
    upper = np.asarray(times.shape, dtype=np.float64) - 1.0
    step_mm = step_voxels * float(h.min())
    target = np.asarray(inlet, dtype=np.float64)

    p = np.asarray(outlet, dtype=np.float64)
    t_cur = float(times[outlet])
    path = [p.copy()]
    max_steps = int(100 * sum(times.shape) / step_voxels)
    for _ in range(max_steps):
        if np.linalg.norm(p - target) <= 1.0:
            break
        g = np.array([_interp(gr, p) for gr in grads])
        norm = float(np.linalg.norm(g))
        moved = False
        if norm > 0:
            length = step_mm
            for _ in range(MAX_STEP_HALVINGS + 1):
                cand = np.clip(p - length * g / norm / h, 0.0, upper)
                t_cand = _interp(times, cand)
                if t_cand < t_cur:
                    p, t_cur, moved = cand, t_cand, True
                    break
                length /= 2.0
        if not moved:
            p, t_cur = _lowest_neighbour(times, p, t_cur)
        path.append(p.copy())
    else:
        raise PathError("backtracking did not reach the inlet")

    if np.linalg.norm(p - target) > 1e-9:
        path.append(target)
    return np.asarray(path[::-1])


def dijkstra_arrival(
    speed: np.ndarray,
    spacing: tuple[float, float, float],
    inlet: Index3,
) -> np.ndarray:
    """
    Shortest-path times on the 26-neighbour voxel graph.

    Edge cost is the edge length times the mean reciprocal speed of its ends.
    """
    inlet = _check_endpoint("inlet", inlet, speed)
    shape = speed.shape
    flat = np.arange(speed.size).reshape(shape)
    h = np.asarray(spacing, dtype=np.float64)
    rows, cols, weights = [], [], []
    for off in product((-1, 0, 1), repeat=3):
        # Each undirected edge once: first nonzero component positive.
        nonzero = [o for o in off if o != 0]
        if not nonzero or nonzero[0] < 0:
            continue
        src = tuple(slice(max(0, -o), n - max(0, o)) for o, n in zip(off, shape, strict=True))
        dst = tuple(slice(max(0, o), n - max(0, -o)) for o, n in zip(off, shape, strict=True))
        fa, fb = speed[src], speed[dst]
        ok = (fa > 0) & (fb > 0)
        length = float(np.linalg.norm(np.asarray(off) * h))
        rows.append(flat[src][ok])
        cols.append(flat[dst][ok])
        weights.append(length * 0.5 * (1.0 / fa[ok] + 1.0 / fb[ok]))
    graph = sparse.csr_matrix(
        (np.concatenate(weights), (np.concatenate(rows), np.concatenate(cols))),
        shape=(speed.size, speed.size),
    )
    times = csgraph.dijkstra(graph, directed=False, indices=int(flat[inlet]))
    return np.asarray(times).reshape(shape)


def default_endpoints(mask: Volume3D, dist: Volume3D) -> tuple[Index3, Index3]:
    """
    Deepest interior voxel of the first and last axial slices holding the mask.

    Ties go to the voxel nearest the in-slice mask centroid.
    """
    zs = np.nonzero(mask.data.any(axis=(0, 1)))[0]
    if zs.size == 0:
        raise EndpointError("mask is empty, no inlet or outlet")
    picks = []
    for z in (int(zs[0]), int(zs[-1])):
        d = dist.data[:, :, z]
        best = np.argwhere(d == d.max())
        centroid = np.argwhere(mask.data[:, :, z] > 0).mean(axis=0)
        k = int(np.argmin(np.linalg.norm(best - centroid, axis=1)))
        picks.append((int(best[k][0]), int(best[k][1]), z))
    return picks[0], picks[1]


def _dedupe(points: np.ndarray) -> np.ndarray:
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(points, axis=0), axis=1) > 1e-12
    return points[keep]


def arc_length(points: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])


def resample_polyline(points: np.ndarray, step_mm: float = 1.0) -> np.ndarray:
    """Uniform arc-length samples (spacing as close to step_mm as the length allows)."""
    pts = _dedupe(np.asarray(points, dtype=np.float64))
    if len(pts) < 2:
        raise PathError("a polyline needs two distinct points")
    s = arc_length(pts)
    n = max(3, int(round(s[-1] / step_mm)) + 1)
    targets = np.linspace(0.0, s[-1], n)
    return np.column_stack([np.interp(targets, s, pts[:, k]) for k in range(3)])


@dataclass
class Frames:
    s: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray
    binormals: np.ndarray


def _rotate(v: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Rotate v by the rotation taking unit a onto unit b (Rodrigues)."""
    axis = np.cross(a, b)
    sin = float(np.linalg.norm(axis))
    cos = float(np.clip(np.dot(a, b), -1.0, 1.0))
    if sin < 1e-12:
        return v
    k = axis / sin
    return v * cos + np.cross(k, v) * sin + k * np.dot(k, v) * (1.0 - cos)


def local_frames(points: np.ndarray, window: int = 0) -> Frames:
    """
    Unit tangents by central differences and parallel-transported normals.

    window > 0 averages tangents over 2*window+1 neighbours before normalizing.

    Raises:
        PathError: fewer than three points or repeated consecutive points
    """
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        raise PathError(f"local frames need at least 3 points, got {len(pts)}")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.any(seg <= 1e-12):
        raise PathError("path has repeated consecutive points")
    s = arc_length(pts)
    tangents = np.gradient(pts, s, axis=0)
    if window > 0:
        tangents = ndimage.uniform_filter1d(tangents, size=2 * window + 1, axis=0, mode="nearest")
    tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)

    t0 = tangents[0]
    seed = np.eye(3)[int(np.argmin(np.abs(t0)))]
    n = np.cross(t0, seed)
    n /= np.linalg.norm(n)
    normals = np.empty_like(tangents)
    normals[0] = n
    for i in range(1, len(pts)):
        n = _rotate(normals[i - 1], tangents[i - 1], tangents[i])
        n = n - np.dot(n, tangents[i]) * tangents[i]
        normals[i] = n / np.linalg.norm(n)
    binormals = np.cross(tangents, normals)
    return Frames(s=s, tangents=tangents, normals=normals, binormals=binormals)


def curvature(points: np.ndarray) -> np.ndarray:
    """1 / circumradius of consecutive triples; endpoints copy their neighbour, collinear gives 0."""
    pts = np.asarray(points, dtype=np.float64)
    kappa = np.zeros(len(pts))
    if len(pts) < 3:
        return kappa
    a, b, c = pts[:-2], pts[1:-1], pts[2:]
    cross = np.linalg.norm(np.cross(b - a, c - a), axis=1)
    denom = (
        np.linalg.norm(b - a, axis=1) * np.linalg.norm(c - b, axis=1) * np.linalg.norm(c - a, axis=1)
    )
    kappa[1:-1] = np.divide(2.0 * cross, denom, out=np.zeros_like(cross), where=denom > 0)
    kappa[0], kappa[-1] = kappa[1], kappa[-2]
    return kappa


@dataclass
class Centerline:
    """Ordered inlet-to-outlet points in mm with per-point frame, curvature and radii."""

    points: np.ndarray
    s: np.ndarray
    tangents: np.ndarray
    normals: np.ndarray
    curvature: np.ndarray
    r_inscribed: np.ndarray
    r_equiv_area: np.ndarray
    d_max_chord: np.ndarray

    @property
    def length_mm(self) -> float:
        return float(self.s[-1])

    @property
    def tortuosity(self) -> float:
        chord = float(np.linalg.norm(self.points[-1] - self.points[0]))
        return self.length_mm / chord if chord > 0 else math.inf


def centerline_from_points(points_mm: np.ndarray, resample_mm: float = 1.0, window: int = 0) -> Centerline:
    points = resample_polyline(points_mm, resample_mm)
    frames = local_frames(points, window)
    nan = np.full(len(points), np.nan)
    return Centerline(
        points=points,
        s=frames.s,
        tangents=frames.tangents,
        normals=frames.normals,
        curvature=curvature(points),
        r_inscribed=nan.copy(),
        r_equiv_area=nan.copy(),
        d_max_chord=nan.copy(),
    )


def extract_centerline(mask: Volume3D, cfg: CenterlineConfig) -> Centerline:
    """
    Minimal-cost inlet-to-outlet path through the mask.

    Endpoints default to default_endpoints unless the config names voxels.
    """
    dist = distance_transform(mask)
    auto_inlet, auto_outlet = default_endpoints(mask, dist)
    inlet = cfg.inlet or auto_inlet
    outlet = cfg.outlet or auto_outlet
    if tuple(inlet) == tuple(outlet):
        raise EndpointError(f"inlet and outlet coincide at {inlet}")
    speed = speed_field(dist, cfg.speed_power, cfg.speed_epsilon_mm)
    march = fast_march(speed, mask.spacing, inlet, outlet)
    path = backtrack(march.arrival, mask.spacing, inlet, outlet, cfg.step_voxels)
    line = centerline_from_points(mask.voxel_to_mm(path), cfg.resample_mm, cfg.frame_window)
    logger.info(
        f"Centerline of {len(line.points)} points, length {line.length_mm:.1f} mm",
        extra={"inlet": list(inlet), "outlet": list(outlet), "tortuosity": line.tortuosity},
    )
    return line
