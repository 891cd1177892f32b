"""Patient volumes on disk and the 2D training samples cut from them."""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from aaa_toolkit.anatomy import OrganLabelMap, allow_masks_for_volume, filter_slices_by_aorta
from aaa_toolkit.errors import ConfigurationError, VolumeIOError
from aaa_toolkit.nifti_io import read_nifti, write_nifti
from aaa_toolkit.schemas import ExperimentConfig, PreprocessConfig
from aaa_toolkit.volume import (
    ResampleMode,
    Volume3D,
    VolumeKind,
    crop_center,
    resample,
    to_display_range,
    window_normalize,
)

logger = logging.getLogger(__name__)

IMAGE_FILE = "image.nii"
IMAGE_NORM_FILE = "image_norm.nii"
IMAGE_DISPLAY_FILE = "image_display.nii"
GT_FILE = "gt.nii"
LABELS_FILE = "labels.nii"
SLICES_FILE = "aorta_slices.txt"


@dataclass(frozen=True, eq=False)
class PatientData:
    """
    Normalized image, masks and aorta slices of one patient.

    allow carries the ground-truth override and feeds the training loss;
    gate is built from the organ labels alone and is what inference may use.
    """

    patient_id: str
    image: Volume3D
    gt: Volume3D
    labels: OrganLabelMap
    allow: Volume3D
    gate: Volume3D
    slices: list[int]
    aorta_id: int = 1

    def aorta_center(self) -> tuple[int, int]:
        """In-plane centroid of aorta voxels over the whole patient."""
        aorta = self.labels.volume.data == self.aorta_id
        if not aorta.any():
            aorta = self.gt.data > 0
        if not aorta.any():
            nx, ny, _ = self.image.dims
            return nx // 2, ny // 2
        xs, ys, _ = np.nonzero(aorta)
        return int(round(float(xs.mean()))), int(round(float(ys.mean())))


@dataclass(frozen=True, eq=False)
class SliceSample:
    """One aligned (image, gt, allow) crop, arrays indexed [x, y]."""

    patient_id: str
    z: int
    image: np.ndarray
    gt: np.ndarray
    allow: np.ndarray


def list_patient_dirs(data_dir: Path) -> list[Path]:
    """Sorted sub-directories holding a ground-truth volume."""
    if not data_dir.is_dir():
        raise VolumeIOError(f"data directory {data_dir} does not exist")
    dirs = sorted(p for p in data_dir.iterdir() if p.is_dir() and (p / GT_FILE).exists())
    if not dirs:
        raise ConfigurationError(f"no patient directories with {GT_FILE} under {data_dir}")
    return dirs


def preprocess_volumes(
    image: Volume3D,
    gt: Volume3D,
    labels: Volume3D,
    cfg: PreprocessConfig,
) -> tuple[Volume3D, Volume3D, Volume3D]:
    """Resample to the target spacing and window the image to [0, 1]."""
    image_r = resample(image, cfg.target_spacing, ResampleMode.TRILINEAR)
    gt_r = resample(gt, cfg.target_spacing, ResampleMode.NEAREST)
    labels_r = resample(labels, cfg.target_spacing, ResampleMode.NEAREST)
    return window_normalize(image_r, cfg.window_lo_hu, cfg.window_hi_hu), gt_r, labels_r


def build_patient(
    patient_id: str,
    image_norm: Volume3D,
    gt: Volume3D,
    labels: Volume3D,
    cfg: ExperimentConfig,
) -> PatientData:
    label_map = OrganLabelMap.from_config(labels, cfg.anatomy)
    allow = allow_masks_for_volume(label_map, gt, cfg.anatomy.gt_override)
    gate = allow_masks_for_volume(label_map, gt, gt_override=False)
    slices = filter_slices_by_aorta(label_map, cfg.preprocess.min_aorta_voxels, cfg.anatomy.aorta_id)
    if not slices:
        logger.warning(f"No aorta slices in {patient_id}", extra={"patient_id": patient_id})
    return PatientData(patient_id, image_norm, gt, label_map, allow, gate, slices, cfg.anatomy.aorta_id)


def load_patient(patient_dir: Path, cfg: ExperimentConfig) -> PatientData:
    """
    Load one patient directory.

    A preprocessed image_norm.nii is used as is; otherwise image.nii is
    resampled and windowed on the fly.
    """
    gt = read_nifti(patient_dir / GT_FILE, VolumeKind.BINARY_MASK)
    labels = read_nifti(patient_dir / LABELS_FILE, VolumeKind.INTEGER_LABELS)
    norm_path = patient_dir / IMAGE_NORM_FILE
    if norm_path.exists():
        image = read_nifti(norm_path, VolumeKind.INTENSITY)
    else:
        raw = read_nifti(patient_dir / IMAGE_FILE, VolumeKind.INTENSITY)
        image, gt, labels = preprocess_volumes(raw, gt, labels, cfg.preprocess)
    return build_patient(patient_dir.name, image, gt, labels, cfg)


def load_dataset(data_dir: Path, cfg: ExperimentConfig, patient_ids: list[str] | None = None) -> dict[str, PatientData]:
    patients = {}
    for patient_dir in list_patient_dirs(data_dir):
        if patient_ids is not None and patient_dir.name not in patient_ids:
            continue
        patients[patient_dir.name] = load_patient(patient_dir, cfg)
    logger.info(f"Loaded {len(patients)} patients from {data_dir}", extra={"data_dir": str(data_dir)})
    return patients


def write_preprocessed(patient: PatientData, out_dir: Path, export_display: bool = False) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_nifti(patient.image, out_dir / IMAGE_NORM_FILE)
    write_nifti(patient.gt, out_dir / GT_FILE)
    write_nifti(patient.labels.volume, out_dir / LABELS_FILE)
    if export_display:
        display = to_display_range(patient.image).astype(np.float64)
        write_nifti(patient.image.with_data(display), out_dir / IMAGE_DISPLAY_FILE)
    (out_dir / SLICES_FILE).write_text("".join(f"{z}\n" for z in patient.slices), encoding="utf-8")


def samples_for_patient(patient: PatientData, crop_size: int) -> list[SliceSample]:
    """Fixed-size crops around the aorta for every aorta slice."""
    center = patient.aorta_center()
    samples = []
    for z in patient.slices:
        samples.append(
            SliceSample(
                patient_id=patient.patient_id,
                z=z,
                image=crop_center(patient.image.data[:, :, z], crop_size, center, fill=0.0),
                gt=crop_center(patient.gt.data[:, :, z], crop_size, center, fill=0.0),
                allow=crop_center(patient.allow.data[:, :, z], crop_size, center, fill=1.0),
            )
        )
    return samples


def samples_for(patients: dict[str, PatientData], ids: list[str], crop_size: int) -> list[SliceSample]:
    out: list[SliceSample] = []
    for patient_id in sorted(ids):
        out.extend(samples_for_patient(patients[patient_id], crop_size))
    return out
