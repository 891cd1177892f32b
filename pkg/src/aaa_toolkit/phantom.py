"""Synthetic CTA phantoms of an aneurysmal aorta with known geometry.

The outer wall is a tube around an axis x = cx(z), y = cy whose radius
follows r(z) = r_l + (r_b - r_l) * exp(-(z - z0)^2 / (2 sigma^2)). Area,
volume and centerline length of that surface are integrated numerically on
a fine grid and written next to the volumes as the reference for every
downstream measurement.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import integrate

from aaa_toolkit.anatomy import OrganLabelMap
from aaa_toolkit.errors import ConfigurationError, SpecificationError, VolumeIOError
from aaa_toolkit.nifti_io import write_nifti
from aaa_toolkit.schemas import PhantomSetConfig, PhantomSpec
from aaa_toolkit.volume import Volume3D, VolumeKind

logger = logging.getLogger(__name__)

QUADRATURE_NODES = 10_001
THETA_NODES = 256
END_MARGIN_VOXELS = 8
ANALYTIC_FILE = "analytic.txt"

# Jitter ranges used by generate_set, in mm.
JITTER_BULGE_RADIUS = (16.0, 22.0)
JITTER_AMPLITUDE = (0.0, 3.0)
JITTER_BULGE_CENTER = (38.0, 58.0)
JITTER_BULGE_SIGMA = (8.0, 14.0)
JITTER_LUMEN_RADIUS = (8.0, 11.0)


@dataclass(frozen=True)
class AnalyticRecord:
    """Exact geometry of the phantom outer wall."""

    max_diameter_mm: float
    surface_area_mm2: float
    lateral_area_mm2: float
    volume_mm3: float
    centerline_length_mm: float
    z_start_mm: float
    z_end_mm: float
    lumen_radius_mm: float
    bulge_radius_mm: float
    centerline_mm: np.ndarray


class PhantomResult(NamedTuple):
    image: Volume3D
    gt: Volume3D
    labels: OrganLabelMap
    analytic: AnalyticRecord


@dataclass(frozen=True)
class PatientSplit:
    train: list[str]
    val: list[str]
    test: list[str]

    def partition_of(self, patient_id: str) -> str:
        for name in ("train", "val", "test"):
            if patient_id in getattr(self, name):
                return name
        raise KeyError(patient_id)


def tube_extent(spec: PhantomSpec) -> tuple[float, float]:
    """z range of the tube; defaults leave END_MARGIN_VOXELS voxels at each end."""
    nz = spec.dims[2]
    sz = spec.spacing[2]
    oz = spec.origin[2]
    z_start = spec.z_start_mm if spec.z_start_mm is not None else oz + (END_MARGIN_VOXELS - 0.5) * sz
    z_end = spec.z_end_mm if spec.z_end_mm is not None else oz + (nz - END_MARGIN_VOXELS - 0.5) * sz
    return z_start, z_end


def outer_radius(spec: PhantomSpec, z: np.ndarray) -> np.ndarray:
    bulge = np.exp(-((z - spec.bulge_center_z_mm) ** 2) / (2.0 * spec.bulge_sigma_z_mm**2))
    return spec.lumen_radius_mm + (spec.bulge_radius_mm - spec.lumen_radius_mm) * bulge


def _outer_radius_slope(spec: PhantomSpec, z: np.ndarray) -> np.ndarray:
    sigma2 = spec.bulge_sigma_z_mm**2
    bulge = np.exp(-((z - spec.bulge_center_z_mm) ** 2) / (2.0 * sigma2))
    return -(spec.bulge_radius_mm - spec.lumen_radius_mm) * (z - spec.bulge_center_z_mm) / sigma2 * bulge


def axis_center(spec: PhantomSpec, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Axis (x, y) in mm at heights z."""
    cx0, cy0 = spec.axis_center_mm
    z = np.asarray(z, dtype=np.float64)
    if spec.axis_shape == "sinusoid" and spec.axis_amplitude_mm > 0:
        z_start, _ = tube_extent(spec)
        phase = 2.0 * math.pi * (z - z_start) / spec.axis_wavelength_mm
        cx = cx0 + spec.axis_amplitude_mm * np.sin(phase)
    else:
        cx = np.full_like(z, cx0)
    return cx, np.full_like(z, cy0)


def _axis_slope(spec: PhantomSpec, z: np.ndarray) -> np.ndarray:
    if spec.axis_shape == "sinusoid" and spec.axis_amplitude_mm > 0:
        z_start, _ = tube_extent(spec)
        k = 2.0 * math.pi / spec.axis_wavelength_mm
        return spec.axis_amplitude_mm * k * np.cos(k * (z - z_start))
    return np.zeros_like(z)


def _grid_axes(spec: PhantomSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return tuple(  # type: ignore[return-value]
        spec.origin[a] + np.arange(spec.dims[a]) * spec.spacing[a] for a in range(3)
    )


def _ellipsoid_surface(center: tuple[float, float, float], axes: tuple[float, float, float]) -> np.ndarray:
    theta, phi = np.meshgrid(np.linspace(0, math.pi, 41), np.linspace(0, 2 * math.pi, 80, endpoint=False))
    pts = np.stack(
        [
            center[0] + axes[0] * np.sin(theta) * np.cos(phi),
            center[1] + axes[1] * np.sin(theta) * np.sin(phi),
            center[2] + axes[2] * np.cos(theta),
        ],
        axis=-1,
    )
    return np.vstack([pts.reshape(-1, 3), np.asarray(center)[None, :]])


def validate_spec(spec: PhantomSpec) -> None:
    """
    Check the geometric invariants of a phantom spec.

    Raises:
        SpecificationError: radius ordering, bulge outside the volume,
            distractor touching the outer wall, or clashing labels
    """
    if not spec.bulge_radius_mm >= spec.lumen_radius_mm > 0:
        raise SpecificationError(
            f"need bulge_radius_mm >= lumen_radius_mm > 0, got "
            f"{spec.bulge_radius_mm} and {spec.lumen_radius_mm}",
            key="phantom.bulge_radius_mm",
        )
    xs, ys, zs = _grid_axes(spec)
    z_start, z_end = tube_extent(spec)
    if not zs[0] - 0.5 * spec.spacing[2] <= z_start < z_end <= zs[-1] + 0.5 * spec.spacing[2]:
        raise SpecificationError(f"tube z range [{z_start}, {z_end}] does not fit the volume")

    z = np.linspace(z_start, z_end, 2001)
    r = outer_radius(spec, z)
    cx, cy = axis_center(spec, z)
    if (
        np.any(cx - r < xs[0])
        or np.any(cx + r > xs[-1])
        or np.any(cy - r < ys[0])
        or np.any(cy + r > ys[-1])
    ):
        raise SpecificationError("aneurysm outer wall does not fit inside the volume", key="phantom.bulge_radius_mm")

    labels = [d.label for d in spec.distractors]
    if spec.aorta_label in labels or len(set(labels)) != len(labels):
        raise SpecificationError("distractor labels must be unique and differ from the aorta label")

    for distractor in spec.distractors:
        pts = _ellipsoid_surface(distractor.center_mm, distractor.semi_axes_mm)
        inside_z = (pts[:, 2] >= z_start) & (pts[:, 2] <= z_end)
        if not np.any(inside_z):
            continue
        p = pts[inside_z]
        pcx, pcy = axis_center(spec, p[:, 2])
        dist = np.hypot(p[:, 0] - pcx, p[:, 1] - pcy)
        if np.any(dist <= outer_radius(spec, p[:, 2])):
            raise SpecificationError(
                f"distractor '{distractor.name}' intersects the aneurysm outer wall",
                key="phantom.distractors",
            )


def analytic_geometry(spec: PhantomSpec) -> AnalyticRecord:
    """Integrate the outer-wall surface on QUADRATURE_NODES axial nodes."""
    z_start, z_end = tube_extent(spec)
    z = np.linspace(z_start, z_end, QUADRATURE_NODES)
    r = outer_radius(spec, z)
    dr = _outer_radius_slope(spec, z)
    dcx = _axis_slope(spec, z)

    volume = float(integrate.simpson(math.pi * r**2, x=z))
    theta = np.linspace(0.0, 2.0 * math.pi, THETA_NODES, endpoint=False)
    stretch = np.sqrt(1.0 + (dr[:, None] + dcx[:, None] * np.cos(theta)[None, :]) ** 2)
    ring = 2.0 * math.pi * r * stretch.mean(axis=1)
    lateral = float(integrate.simpson(ring, x=z))
    caps = math.pi * (float(r[0]) ** 2 + float(r[-1]) ** 2)
    length = float(integrate.simpson(np.sqrt(1.0 + dcx**2), x=z))

    # z0 inside the tube gives the exact peak, otherwise the sampled max.
    candidates = [float(r.max())]
    if z_start <= spec.bulge_center_z_mm <= z_end:
        candidates.append(spec.bulge_radius_mm)
    max_radius = max(candidates)

    n_points = max(2, int(math.ceil(z_end - z_start)) + 1)
    zc = np.linspace(z_start, z_end, n_points)
    cx, cy = axis_center(spec, zc)
    centerline = np.column_stack([cx, cy, zc])

    return AnalyticRecord(
        max_diameter_mm=2.0 * max_radius,
        surface_area_mm2=lateral + caps,
        lateral_area_mm2=lateral,
        volume_mm3=volume,
        centerline_length_mm=length,
        z_start_mm=z_start,
        z_end_mm=z_end,
        lumen_radius_mm=spec.lumen_radius_mm,
        bulge_radius_mm=spec.bulge_radius_mm,
        centerline_mm=centerline,
    )


def label_table_for(spec: PhantomSpec) -> dict[int, str]:
    table = {0: "background", spec.aorta_label: "aorta"}
    table.update({d.label: d.name for d in spec.distractors})
    return table


def generate(spec: PhantomSpec) -> PhantomResult:
    """
    Render image, ground truth and organ labels for one phantom.

    Ground truth is 1 exactly where the voxel center lies within the outer
    wall radius of the axis and inside the tube's z range.
    """
    validate_spec(spec)
    xs, ys, zs = _grid_axes(spec)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    z_start, z_end = tube_extent(spec)

    cx, cy = axis_center(spec, zs)
    dist = np.hypot(X - cx[None, None, :], Y - cy[None, None, :])
    in_range = ((zs >= z_start) & (zs <= z_end))[None, None, :]
    radius = outer_radius(spec, zs)[None, None, :]
    gt = (dist <= radius) & in_range
    lumen = (dist <= spec.lumen_radius_mm) & in_range

    image = np.full(spec.dims, spec.background_hu, dtype=np.float64)
    labels = np.zeros(spec.dims, dtype=np.float64)
    for distractor in spec.distractors:
        (ex, ey, ez), (ax, ay, az) = distractor.center_mm, distractor.semi_axes_mm
        inside = ((X - ex) / ax) ** 2 + ((Y - ey) / ay) ** 2 + ((Z - ez) / az) ** 2 <= 1.0
        inside &= ~gt
        image[inside] = distractor.mean_hu
        labels[inside] = distractor.label
    image[gt] = spec.thrombus_hu
    image[lumen] = spec.lumen_hu
    labels[gt] = spec.aorta_label

    if spec.noise_sigma_hu > 0:
        rng = np.random.default_rng(spec.seed)
        image = image + rng.normal(0.0, spec.noise_sigma_hu, size=spec.dims)

    analytic = analytic_geometry(spec)
    logger.info(
        "Generated phantom",
        extra={
            "seed": spec.seed,
            "gt_voxels": int(gt.sum()),
            "max_diameter_mm": analytic.max_diameter_mm,
        },
    )
    image_vol = Volume3D(image, spec.spacing, spec.origin, VolumeKind.INTENSITY)
    gt_vol = Volume3D(gt.astype(np.float64), spec.spacing, spec.origin, VolumeKind.BINARY_MASK)
    label_vol = Volume3D(labels, spec.spacing, spec.origin, VolumeKind.INTEGER_LABELS)
    label_map = OrganLabelMap(label_vol, label_table_for(spec), frozenset({spec.aorta_label}))
    return PhantomResult(image_vol, gt_vol, label_map, analytic)


def _uniform(rng: np.random.Generator, bounds: tuple[float, float]) -> float:
    return float(rng.uniform(bounds[0], bounds[1]))


def generate_set(set_cfg: PhantomSetConfig, base: PhantomSpec, seed: int) -> list[tuple[str, PhantomSpec]]:
    """
    Specs for a phantom cohort, one derived seed per phantom.

    With jitter enabled, bulge size and position, lumen radius and axis
    curvature vary per phantom. Specs that fail validation are redrawn.
    """
    specs: list[tuple[str, PhantomSpec]] = []
    for k in range(set_cfg.count):
        child = np.random.SeedSequence([seed, k])
        phantom_seed = int(child.generate_state(1)[0])
        rng = np.random.default_rng(child)
        patient_id = f"phantom_{k:03d}"
        for _ in range(100):
            update: dict[str, object] = {"seed": phantom_seed}
            if set_cfg.jitter:
                amplitude = _uniform(rng, JITTER_AMPLITUDE)
                update.update(
                    bulge_radius_mm=_uniform(rng, JITTER_BULGE_RADIUS),
                    lumen_radius_mm=_uniform(rng, JITTER_LUMEN_RADIUS),
                    bulge_center_z_mm=_uniform(rng, JITTER_BULGE_CENTER),
                    bulge_sigma_z_mm=_uniform(rng, JITTER_BULGE_SIGMA),
                    axis_shape="sinusoid" if amplitude > 0 else "straight",
                    axis_amplitude_mm=amplitude,
                )
            spec = PhantomSpec.model_validate({**base.model_dump(), **update})
            try:
                validate_spec(spec)
            except SpecificationError:
                continue
            specs.append((patient_id, spec))
            break
        else:
            raise SpecificationError(f"could not draw a valid jittered spec for {patient_id}")
    return specs


def split_patients(
    patient_ids: list[str],
    n_train: int,
    n_val: int,
    n_test: int,
    seed: int,
) -> PatientSplit:
    """
    Seeded patient-level partition; each part is returned sorted.

    Raises:
        ConfigurationError: sizes do not add up to the number of ids
    """
    if n_train + n_val + n_test != len(patient_ids) or min(n_train, n_val, n_test) < 0:
        raise ConfigurationError(
            f"split sizes {n_train}/{n_val}/{n_test} do not partition {len(patient_ids)} patients",
            key="phantom_set",
        )
    if len(set(patient_ids)) != len(patient_ids):
        raise ConfigurationError("patient ids must be unique", key="phantom_set")
    order = np.random.default_rng(seed).permutation(len(patient_ids))
    shuffled = [patient_ids[i] for i in order]
    return PatientSplit(
        train=sorted(shuffled[:n_train]),
        val=sorted(shuffled[n_train : n_train + n_val]),
        test=sorted(shuffled[n_train + n_val :]),
    )


def write_analytic(record: AnalyticRecord, path: Path) -> None:
    """Plain key = value text; one `point` line per centerline sample."""
    lines = [
        f"max_diameter_mm = {record.max_diameter_mm!r}",
        f"surface_area_mm2 = {record.surface_area_mm2!r}",
        f"lateral_area_mm2 = {record.lateral_area_mm2!r}",
        f"volume_mm3 = {record.volume_mm3!r}",
        f"centerline_length_mm = {record.centerline_length_mm!r}",
        f"z_start_mm = {record.z_start_mm!r}",
        f"z_end_mm = {record.z_end_mm!r}",
        f"lumen_radius_mm = {record.lumen_radius_mm!r}",
        f"bulge_radius_mm = {record.bulge_radius_mm!r}",
    ]
    lines.extend(f"point = {x!r} {y!r} {z!r}" for x, y, z in record.centerline_mm.tolist())
    try:
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as e:
        raise VolumeIOError(f"Cannot write {path}: {e}") from e


def read_analytic(path: Path) -> AnalyticRecord:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise VolumeIOError(f"Cannot read {path}: {e}") from e
    scalars: dict[str, float] = {}
    points: list[list[float]] = []
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "point":
            points.append([float(v) for v in value.split()])
        else:
            scalars[key] = float(value)
    try:
        return AnalyticRecord(centerline_mm=np.asarray(points, dtype=np.float64).reshape(-1, 3), **scalars)
    except TypeError as e:
        raise VolumeIOError(f"{path}: malformed analytic record: {e}") from e


def write_phantom(result: PhantomResult, out_dir: Path) -> None:
    """image.nii, gt.nii, labels.nii and analytic.txt in out_dir."""
    out_dir.mkdir(parents=True, exist_ok=True)
    write_nifti(result.image, out_dir / "image.nii")
    write_nifti(result.gt, out_dir / "gt.nii")
    write_nifti(result.labels.volume, out_dir / "labels.nii")
    write_analytic(result.analytic, out_dir / ANALYTIC_FILE)
