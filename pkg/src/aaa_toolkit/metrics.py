"""Slice-wise and aggregate Dice, precision and recall."""

import csv
import logging
import math
from collections.abc import Sequence
from itertools import groupby
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from aaa_toolkit.errors import EmptySetError, ShapeError
from aaa_toolkit.schemas import Pooling

logger = logging.getLogger(__name__)


class ConfusionCounts(BaseModel):
    """Pixel counts at a binarization threshold."""

    model_config = ConfigDict(frozen=True)

    tp: int = Field(..., ge=0)
    fp: int = Field(..., ge=0)
    fn: int = Field(..., ge=0)
    tn: int = Field(..., ge=0)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            tp=self.tp + other.tp, fp=self.fp + other.fp, fn=self.fn + other.fn, tn=self.tn + other.tn
        )


class SliceMetrics(BaseModel):
    """Metrics of one slice; undefined ratios are None."""

    model_config = ConfigDict(frozen=True)

    patient_id: str = ""
    z: int = -1
    dice: float | None
    precision: float | None
    recall: float | None
    counts: ConfusionCounts

    @property
    def has_gt(self) -> bool:
        return self.counts.tp + self.counts.fn > 0


class AggregateMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean_dice: float
    std_dice: float
    precision: float | None
    recall: float | None
    n_slices: int
    counts: ConfusionCounts


class PatientMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    patient_id: str
    n_slices: int
    mean_dice: float
    std_dice: float


def binarize(prob: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """1 where prob > threshold (strict)."""
    return (np.asarray(prob) > threshold).astype(np.uint8)


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


def confusion_counts(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    if pred.shape != gt.shape:
        raise ShapeError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    p = np.asarray(pred).astype(bool)
    g = np.asarray(gt).astype(bool)
    return ConfusionCounts(
        tp=int(np.count_nonzero(p & g)),
        fp=int(np.count_nonzero(p & ~g)),
        fn=int(np.count_nonzero(~p & g)),
        tn=int(np.count_nonzero(~p & ~g)),
    )


def metrics_from_counts(counts: ConfusionCounts, patient_id: str = "", z: int = -1) -> SliceMetrics:
    return SliceMetrics(
        patient_id=patient_id,
        z=z,
        dice=_ratio(2 * counts.tp, 2 * counts.tp + counts.fp + counts.fn),
        precision=_ratio(counts.tp, counts.tp + counts.fp),
        recall=_ratio(counts.tp, counts.tp + counts.fn),
        counts=counts,
    )


def slice_metrics(pred: np.ndarray, gt: np.ndarray, patient_id: str = "", z: int = -1) -> SliceMetrics:
    """Dice, precision and recall of binary masks."""
    return metrics_from_counts(confusion_counts(pred, gt), patient_id, z)


def _mean_std(values: Sequence[float], ddof: int) -> tuple[float, float]:
    arr = np.asarray(values, dtype=np.float64)
    mean = float(arr.mean())
    std = float(arr.std(ddof=ddof)) if arr.size > ddof else 0.0
    return mean, std


def _macro(values: list[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def aggregate(
    rows: Sequence[SliceMetrics],
    std_ddof: int = 0,
    pooling: Pooling = Pooling.MICRO,
) -> AggregateMetrics:
    """
    Mean and std of Dice over slices with ground truth, plus pooled precision/recall.

    Raises:
        EmptySetError: no slice has ground truth
    """
    kept = [row for row in rows if row.has_gt]
    if not kept:
        raise EmptySetError("no slices with non-empty ground truth to aggregate")
    mean, std = _mean_std([row.dice for row in kept if row.dice is not None], std_ddof)
    total = ConfusionCounts(tp=0, fp=0, fn=0, tn=0)
    for row in kept:
        total = total + row.counts
    if pooling is Pooling.MICRO:
        precision = _ratio(total.tp, total.tp + total.fp)
        recall = _ratio(total.tp, total.tp + total.fn)
    else:
        precision = _macro([row.precision for row in kept])
        recall = _macro([row.recall for row in kept])
    return AggregateMetrics(
        mean_dice=mean, std_dice=std, precision=precision, recall=recall, n_slices=len(kept), counts=total
    )


def patient_metrics(rows: Sequence[SliceMetrics], std_ddof: int = 0) -> list[PatientMetrics]:
    """Per-patient Dice over slices with ground truth; patients without any are skipped."""
    out = []
    ordered = sorted(rows, key=lambda r: (r.patient_id, r.z))
    for patient_id, group in groupby(ordered, key=lambda r: r.patient_id):
        dice = [r.dice for r in group if r.has_gt and r.dice is not None]
        if not dice:
            continue
        mean, std = _mean_std(dice, std_ddof)
        out.append(PatientMetrics(patient_id=patient_id, n_slices=len(dice), mean_dice=mean, std_dice=std))
    return out


def _fmt(value: float | None) -> str:
    return "n/a" if value is None or math.isnan(value) else f"{value:.3f}"


def format_summary(agg: AggregateMetrics) -> str:
    """Table-style "mean ± std, precision, recall"."""
    return f"{agg.mean_dice:.3f} ± {agg.std_dice:.3f}, {_fmt(agg.precision)}, {_fmt(agg.recall)}"


def _cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, float | np.floating):
        return repr(float(value))
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[object]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def write_slice_metrics(rows: Sequence[SliceMetrics], path: Path) -> None:
    write_csv(
        path,
        ["patient_id", "z", "dice", "precision", "recall", "tp", "fp", "fn", "tn"],
        [
            [r.patient_id, r.z, r.dice, r.precision, r.recall, r.counts.tp, r.counts.fp, r.counts.fn, r.counts.tn]
            for r in rows
        ],
    )


def write_patient_metrics(rows: Sequence[PatientMetrics], path: Path) -> None:
    write_csv(
        path,
        ["patient_id", "n_slices", "mean_dice", "std_dice"],
        [[r.patient_id, r.n_slices, r.mean_dice, r.std_dice] for r in rows],
    )


def write_aggregate(agg: AggregateMetrics, path: Path) -> None:
    write_csv(
        path,
        ["mean_dice", "std_dice", "precision", "recall", "n_slices", "summary"],
        [[agg.mean_dice, agg.std_dice, agg.precision, agg.recall, agg.n_slices, format_summary(agg)]],
    )
