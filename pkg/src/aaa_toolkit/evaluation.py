"""Test-set inference and scoring."""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from aaa_toolkit.anatomy import gate_prediction
from aaa_toolkit.dataset import PatientData, samples_for_patient
from aaa_toolkit.metrics import (
    AggregateMetrics,
    PatientMetrics,
    SliceMetrics,
    aggregate,
    binarize,
    patient_metrics,
    slice_metrics,
    write_aggregate,
    write_patient_metrics,
    write_slice_metrics,
)
from aaa_toolkit.nifti_io import write_nifti
from aaa_toolkit.schemas import EvalConfig, LossMode
from aaa_toolkit.unet import UNet, predict
from aaa_toolkit.volume import Volume3D, VolumeKind, crop_center, paste_center

logger = logging.getLogger(__name__)


@dataclass
class EvaluationResult:
    rows: list[SliceMetrics]
    aggregate: AggregateMetrics
    patients: list[PatientMetrics]
    gated: bool
    predictions: dict[str, Volume3D] = field(default_factory=dict)


def evaluate_patients(
    net: UNet,
    patients: dict[str, PatientData],
    patient_ids: list[str],
    eval_cfg: EvalConfig,
    crop_size: int,
    mode: LossMode,
) -> EvaluationResult:
    """
    Predict every aorta slice of the given patients and score it.

    With gate_predictions on, probabilities are zeroed inside excluded organs
    using the label-only gate mask; ground truth never enters inference.
    """
    gated = eval_cfg.gate_predictions
    rows: list[SliceMetrics] = []
    predictions: dict[str, Volume3D] = {}
    for patient_id in sorted(patient_ids):
        patient = patients[patient_id]
        samples = samples_for_patient(patient, crop_size)
        center = patient.aorta_center()
        pred = np.zeros(patient.gt.dims, dtype=np.float64)
        if samples:
            probs = predict(net, np.stack([s.image for s in samples]))
            for sample, prob in zip(samples, probs, strict=True):
                if gated:
                    gate = crop_center(patient.gate.data[:, :, sample.z], crop_size, center, fill=1.0)
                    prob = gate_prediction(prob, gate)
                mask = binarize(prob, eval_cfg.threshold)
                rows.append(slice_metrics(mask, sample.gt, patient_id, sample.z))
                pred[:, :, sample.z] = paste_center(mask.astype(np.float64), patient.gt.dims[:2], center)
        predictions[patient_id] = patient.gt.with_data(pred, VolumeKind.BINARY_MASK)

    agg = aggregate(rows, eval_cfg.std_ddof, eval_cfg.pooling)
    logger.info(
        f"Evaluated {len(patient_ids)} patients: dice {agg.mean_dice:.3f}",
        extra={"mode": mode.value, "gated": gated, "n_slices": agg.n_slices},
    )
    return EvaluationResult(
        rows=rows,
        aggregate=agg,
        patients=patient_metrics(rows, eval_cfg.std_ddof),
        gated=gated,
        predictions=predictions,
    )


def write_evaluation(result: EvaluationResult, out_dir: Path, write_predictions: bool = True) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_slice_metrics(result.rows, out_dir / "slice_metrics.csv")
    write_patient_metrics(result.patients, out_dir / "patient_metrics.csv")
    write_aggregate(result.aggregate, out_dir / "aggregate.csv")
    if write_predictions:
        for patient_id, volume in result.predictions.items():
            write_nifti(volume, out_dir / f"pred_{patient_id}.nii")
