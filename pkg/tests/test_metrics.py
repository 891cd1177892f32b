"""Tests for segmentation metrics and their CSV output."""

import csv

import numpy as np
import pytest

from aaa_toolkit.errors import EmptySetError, ShapeError
from aaa_toolkit.metrics import (
    ConfusionCounts,
    aggregate,
    binarize,
    confusion_counts,
    format_summary,
    metrics_from_counts,
    patient_metrics,
    slice_metrics,
    write_aggregate,
    write_slice_metrics,
)
from aaa_toolkit.schemas import Pooling


def _row(tp, fp, fn, tn=0, patient_id="p", z=0):
    return metrics_from_counts(ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn), patient_id, z)


def test_binarize_is_strict():
    """Test that the threshold itself maps to background."""
    assert binarize(np.array([0.2, 0.5, 0.5000001, 0.9])).tolist() == [0, 0, 1, 1]


def test_slice_metrics_known_values():
    """Test Dice, precision and recall on a hand-counted case."""
    pred = np.array([[1, 1, 0], [1, 0, 0]])
    gt = np.array([[1, 0, 0], [1, 1, 0]])

    m = slice_metrics(pred, gt, "p1", 4)

    assert m.counts == ConfusionCounts(tp=2, fp=1, fn=1, tn=2)
    assert m.dice == pytest.approx(4 / 6)
    assert m.precision == pytest.approx(2 / 3)
    assert m.recall == pytest.approx(2 / 3)
    assert (m.patient_id, m.z) == ("p1", 4)


def test_empty_prediction_on_nonempty_gt_scores_zero():
    """Test that missing the aorta entirely is Dice 0 with undefined precision."""
    m = slice_metrics(np.zeros((3, 3)), np.eye(3))

    assert m.dice == 0.0
    assert m.precision is None
    assert m.recall == 0.0


def test_empty_gt_and_prediction_is_undefined():
    """Test that an empty slice has no defined Dice."""
    m = slice_metrics(np.zeros((2, 2)), np.zeros((2, 2)))

    assert m.dice is None
    assert not m.has_gt


def test_shape_mismatch():
    """Test that differently shaped masks are refused."""
    with pytest.raises(ShapeError):
        confusion_counts(np.zeros((2, 2)), np.zeros((2, 3)))


def test_aggregate_micro_pooling():
    """Test slice-mean Dice, population std and pooled precision/recall."""
    rows = [_row(8, 2, 0), _row(1, 0, 3), _row(0, 5, 0)]

    agg = aggregate(rows)

    dice = [16 / 18, 2 / 5]
    assert agg.n_slices == 2
    assert agg.mean_dice == pytest.approx(np.mean(dice))
    assert agg.std_dice == pytest.approx(np.std(dice))
    assert agg.precision == pytest.approx(9 / 11)
    assert agg.recall == pytest.approx(9 / 12)


def test_aggregate_macro_pooling_and_sample_std():
    """Test macro-averaged precision/recall and ddof = 1."""
    rows = [_row(8, 2, 0), _row(1, 0, 3)]

    agg = aggregate(rows, std_ddof=1, pooling=Pooling.MACRO)

    assert agg.precision == pytest.approx((0.8 + 1.0) / 2)
    assert agg.recall == pytest.approx((1.0 + 0.25) / 2)
    assert agg.std_dice == pytest.approx(np.std([16 / 18, 2 / 5], ddof=1))


def test_aggregate_without_gt_slices():
    """Test that a set with no ground truth cannot be aggregated."""
    with pytest.raises(EmptySetError):
        aggregate([_row(0, 3, 0)])


def test_patient_metrics():
    """Test per-patient grouping and skipping of patients without ground truth."""
    rows = [
        _row(1, 0, 0, patient_id="b", z=0),
        _row(1, 1, 0, patient_id="a", z=1),
        _row(1, 0, 1, patient_id="a", z=0),
        _row(0, 2, 0, patient_id="c", z=0),
    ]

    out = patient_metrics(rows)

    assert [p.patient_id for p in out] == ["a", "b"]
    assert out[0].n_slices == 2
    assert out[0].mean_dice == pytest.approx(2 / 3)
    assert out[1].std_dice == 0.0


def test_format_summary():
    """Test the report line format."""
    agg = aggregate([_row(8, 2, 0), _row(1, 0, 3)])

    assert format_summary(agg) == "0.644 ± 0.244, 0.818, 0.750"


def test_write_slice_and_aggregate_csv(tmp_path):
    """Test CSV headers, empty cells for undefined values and float round-trips."""
    rows = [_row(8, 2, 0, z=3), _row(0, 0, 0, z=4)]

    write_slice_metrics(rows, tmp_path / "slices.csv")
    write_aggregate(aggregate(rows), tmp_path / "aggregate.csv")

    with (tmp_path / "slices.csv").open(encoding="utf-8") as f:
        table = list(csv.DictReader(f))
    assert table[0]["dice"] == repr(16 / 18)
    assert table[1]["dice"] == ""
    assert table[1]["z"] == "4"
    with (tmp_path / "aggregate.csv").open(encoding="utf-8") as f:
        summary = list(csv.DictReader(f))[0]
    assert summary["n_slices"] == "1"
    assert summary["summary"].startswith("0.889 ± 0.000")
