"""
Anatomy-aware versus baseline comparison.

Both loss modes are trained on the same patient split with the same
seeds, network initialization and augmentation stream, and are scored
under the same gating policy; only the training loss differs.
"""

import logging
from dataclasses import dataclass
from pathlib import Path

from aaa_toolkit.config import write_effective_config
from aaa_toolkit.dataset import PatientData, load_dataset, samples_for
from aaa_toolkit.evaluation import EvaluationResult, evaluate_patients, write_evaluation
from aaa_toolkit.metrics import AggregateMetrics, format_summary, write_csv
from aaa_toolkit.phantom import PatientSplit, generate, generate_set, split_patients, write_phantom
from aaa_toolkit.prometheus_metrics import RunMetrics
from aaa_toolkit.schemas import ExperimentConfig, LossMode
from aaa_toolkit.training import TrainingResult, train, write_history
from aaa_toolkit.unet import save_checkpoint

logger = logging.getLogger(__name__)

COMPARISON_FILE = "comparison.csv"
SPLIT_FILE = "split.csv"
SUMMARY_FILE = "summary.txt"
PHANTOM_DIR = "phantoms"
CHECKPOINT_FILE = "model.ckpt"
HISTORY_FILE = "history.csv"


@dataclass(frozen=True)
class ComparisonRow:
    seed: int
    mode: LossMode
    aggregate: AggregateMetrics
    best_epoch: int
    gated: bool = False


def generate_phantoms(
    cfg: ExperimentConfig,
    out_dir: Path,
    seed: int,
    metrics: RunMetrics | None = None,
) -> list[str]:
    """Write a jittered phantom cohort; returns the patient ids."""
    ids = []
    for patient_id, spec in generate_set(cfg.phantom_set, cfg.phantom, seed):
        write_phantom(generate(spec), out_dir / patient_id)
        ids.append(patient_id)
        if metrics is not None:
            metrics.phantoms_generated_total.inc()
    logger.info(f"Generated {len(ids)} phantoms in {out_dir}", extra={"seed": seed})
    return ids


def write_split(split: PatientSplit, path: Path) -> None:
    rows = [[pid, name] for name in ("train", "val", "test") for pid in getattr(split, name)]
    write_csv(path, ["patient_id", "partition"], rows)


def seeded_config(cfg: ExperimentConfig, seed: int, mode: LossMode) -> ExperimentConfig:
    """Same config with training and initialization seeds set and the loss mode chosen."""
    return cfg.model_copy(
        update={
            "train": cfg.train.model_copy(update={"seed": seed, "loss_mode": mode}),
            "unet": cfg.unet.model_copy(update={"seed": seed}),
        }
    )


def train_run(
    cfg: ExperimentConfig,
    patients: dict[str, PatientData],
    split: PatientSplit,
    run_dir: Path,
    metrics: RunMetrics | None = None,
) -> TrainingResult:
    """Train one model and write model.ckpt, history.csv, split.csv and config.ini."""
    crop = cfg.preprocess.crop_size
    result = train(
        cfg,
        samples_for(patients, split.train, crop),
        samples_for(patients, split.val, crop),
        metrics,
    )
    run_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        result.net,
        run_dir / CHECKPOINT_FILE,
        meta={
            "best_epoch": result.best_epoch,
            "loss_mode": cfg.train.loss_mode.value,
            "seed": cfg.train.seed,
        },
    )
    write_history(result.history, run_dir / HISTORY_FILE)
    write_split(split, run_dir / SPLIT_FILE)
    write_effective_config(cfg, run_dir)
    return result


def train_and_evaluate(
    cfg: ExperimentConfig,
    patients: dict[str, PatientData],
    split: PatientSplit,
    run_dir: Path,
    metrics: RunMetrics | None = None,
) -> tuple[EvaluationResult, int]:
    """Train one model, checkpoint it and score it on the test split."""
    result = train_run(cfg, patients, split, run_dir, metrics)
    evaluation = evaluate_patients(
        result.net, patients, split.test, cfg.eval, cfg.preprocess.crop_size, cfg.train.loss_mode
    )
    write_evaluation(evaluation, run_dir, write_predictions=False)
    return evaluation, result.best_epoch


def write_comparison(rows: list[ComparisonRow], split: PatientSplit, path: Path) -> None:
    ids = {name: " ".join(getattr(split, name)) for name in ("train", "val", "test")}
    write_csv(
        path,
        [
            "seed",
            "mode",
            "mean_dice",
            "std_dice",
            "precision",
            "recall",
            "n_slices",
            "best_epoch",
            "gated",
            "train_ids",
            "val_ids",
            "test_ids",
        ],
        [
            [
                r.seed,
                r.mode.value,
                r.aggregate.mean_dice,
                r.aggregate.std_dice,
                r.aggregate.precision,
                r.aggregate.recall,
                r.aggregate.n_slices,
                r.best_epoch,
                str(r.gated).lower(),
                ids["train"],
                ids["val"],
                ids["test"],
            ]
            for r in rows
        ],
    )


def format_comparison(rows: list[ComparisonRow]) -> str:
    lines = ["seed  mode            dice ± std, precision, recall"]
    for r in rows:
        lines.append(f"{r.seed:<5} {r.mode.value:<15} {format_summary(r.aggregate)}")
    wins = sum(
        1
        for seed in sorted({r.seed for r in rows})
        if _dice(rows, seed, LossMode.ANATOMY_AWARE) > _dice(rows, seed, LossMode.BASELINE)
    )
    lines.append(f"anatomy-aware ahead in {wins} of {len({r.seed for r in rows})} seeds")
    return "\n".join(lines) + "\n"


def _dice(rows: list[ComparisonRow], seed: int, mode: LossMode) -> float:
    return next(r.aggregate.mean_dice for r in rows if r.seed == seed and r.mode is mode)


def run_compare(
    cfg: ExperimentConfig,
    out_dir: Path,
    data_dir: Path | None = None,
    metrics: RunMetrics | None = None,
) -> list[ComparisonRow]:
    """
    Train and test both loss modes for every seed in run.compare_seeds.

    Without a data directory a phantom cohort is generated under
    out_dir/phantoms from run.seed.
    """
    metrics = metrics or RunMetrics()
    out_dir.mkdir(parents=True, exist_ok=True)
    if data_dir is None:
        data_dir = out_dir / PHANTOM_DIR
        with metrics.stage("phantom"):
            generate_phantoms(cfg, data_dir, cfg.run.seed, metrics)

    with metrics.stage("load"):
        patients = load_dataset(data_dir, cfg)
    ps = cfg.phantom_set
    split = split_patients(sorted(patients), ps.n_train, ps.n_val, ps.n_test, cfg.run.seed)
    write_split(split, out_dir / SPLIT_FILE)

    rows: list[ComparisonRow] = []
    for seed in cfg.run.compare_seeds:
        for mode in (LossMode.ANATOMY_AWARE, LossMode.BASELINE):
            run_cfg = seeded_config(cfg, seed, mode)
            logger.info(f"Comparison run seed={seed} mode={mode.value}", extra={"seed": seed, "mode": mode.value})
            with metrics.stage(f"train_{mode.value}"):
                evaluation, best_epoch = train_and_evaluate(
                    run_cfg, patients, split, out_dir / f"seed_{seed}_{mode.value}", metrics
                )
            rows.append(
                ComparisonRow(
                    seed=seed,
                    mode=mode,
                    aggregate=evaluation.aggregate,
                    best_epoch=best_epoch,
                    gated=evaluation.gated,
                )
            )

    write_comparison(rows, split, out_dir / COMPARISON_FILE)
    summary = format_comparison(rows)
    (out_dir / SUMMARY_FILE).write_text(summary, encoding="utf-8")
    logger.info(f"Comparison finished:\n{summary}", extra={"out_dir": str(out_dir)})
    return rows
