"""Subcommand classes and the router that dispatches to them."""

import argparse
import logging
import shutil
from abc import ABC, abstractmethod
from pathlib import Path

from pydantic import ValidationError

from aaa_toolkit.anatomy import OrganLabelMap, build_exclusion_mask
from aaa_toolkit.centerline import extract_centerline
from aaa_toolkit.dataset import list_patient_dirs, load_dataset, load_patient, write_preprocessed
from aaa_toolkit.errors import ConfigurationError, MeasurementError, UsageError
from aaa_toolkit.evaluation import evaluate_patients, write_evaluation
from aaa_toolkit.experiment import generate_phantoms, run_compare, seeded_config, train_run
from aaa_toolkit.mesh import TriMesh, mesh_measures
from aaa_toolkit.mesh_io import read_obj, read_stl, write_obj, write_stl
from aaa_toolkit.metrics import write_csv
from aaa_toolkit.morphometry import morphometry, write_centerline, write_morphometry
from aaa_toolkit.nifti_io import read_nifti, write_nifti
from aaa_toolkit.phantom import ANALYTIC_FILE, read_analytic, split_patients
from aaa_toolkit.prometheus_metrics import RunMetrics
from aaa_toolkit.reconstruction import reconstruct
from aaa_toolkit.schemas import ExperimentConfig, LossMode, PhantomSetConfig, ReconConfig, SurfaceLabel
from aaa_toolkit.unet import load_checkpoint
from aaa_toolkit.volume import VolumeKind

logger = logging.getLogger(__name__)


def parse_index(text: str) -> tuple[int, int, int]:
    """Parse an "x,y,z" voxel index."""
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got {text!r}")
    try:
        x, y, z = (int(p) for p in parts)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected integer voxel indices, got {text!r}") from e
    return x, y, z


class BaseCommand(ABC):
    """Base class for toolkit subcommands."""

    help: str = ""

    @abstractmethod
    def get_name(self) -> str:
        """
        Get the subcommand name.

        Returns:
            Name used on the command line (e.g., "phantom")
        """

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        """Declare subcommand-specific flags."""

    def output_dir(self, args: argparse.Namespace) -> Path:
        """Directory receiving config.ini, logs/ and metrics.prom."""
        return Path(args.out)

    def apply_overrides(self, args: argparse.Namespace, cfg: ExperimentConfig) -> ExperimentConfig:
        """Fold command-line flags into the experiment config."""
        if args.seed is None:
            return cfg
        return cfg.model_copy(update={"run": cfg.run.model_copy(update={"seed": args.seed})})

    @abstractmethod
    def run(self, args: argparse.Namespace, cfg: ExperimentConfig, metrics: RunMetrics) -> int:
        """
        Execute the subcommand.

        Args:
            args: Parsed command-line arguments
            cfg: Effective experiment configuration
            metrics: Run metrics written next to the outputs

        Returns:
            Process exit code

        Raises:
            ToolkitError: If the stage fails
        """


class CommandRouter:
    """Registry of subcommands."""

    def __init__(self) -> None:
        self._commands: dict[str, BaseCommand] = {}

    def register_command(self, command: BaseCommand) -> None:
        name = command.get_name()
        self._commands[name] = command
        logger.debug(f"Registered command: {name}")

    def get_command(self, name: str) -> BaseCommand:
        command = self._commands.get(name)
        if command is None:
            raise UsageError(f"unknown subcommand {name!r}")
        return command

    def names(self) -> list[str]:
        return list(self._commands)

    def build_parser(self) -> argparse.ArgumentParser:
        parser = argparse.ArgumentParser(
            prog="aaa-toolkit",
            description="Aortic aneurysm segmentation, reconstruction and morphometry pipeline.",
        )
        subparsers = parser.add_subparsers(dest="command", metavar="{" + ",".join(self._commands) + "}")
        for name, command in self._commands.items():
            sub = subparsers.add_parser(name, help=command.help, description=command.help)
            sub.add_argument("--config", type=Path, default=None, help="Sectioned INI experiment config")
            sub.add_argument("--seed", type=int, default=None, help="Override run.seed")
            sub.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
            command.add_arguments(sub)
        return parser


class PhantomCommand(BaseCommand):
    help = "Generate a synthetic aneurysm phantom cohort"

    def get_name(self) -> str:
        return "phantom"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--out", type=Path, required=True)
        parser.add_argument("--count", type=int, default=None, help="Number of phantoms")

    def apply_overrides(self, args: argparse.Namespace, cfg: ExperimentConfig) -> ExperimentConfig:
        cfg = super().apply_overrides(args, cfg)
        if args.count is None:
            return cfg
        # The split is chosen again by train/compare; a bare cohort keeps every id in train.
        try:
            phantom_set = PhantomSetConfig.model_validate(
                {**cfg.phantom_set.model_dump(), "count": args.count, "n_train": args.count, "n_val": 0, "n_test": 0}
            )
        except ValidationError as e:
            raise ConfigurationError(
                f"invalid --count {args.count}: {e.errors()[0]['msg']}", key="phantom_set.count"
            ) from e
        return cfg.model_copy(update={"phantom_set": phantom_set})

    def run(self, args: argparse.Namespace, cfg: ExperimentConfig, metrics: RunMetrics) -> int:
        with metrics.stage("phantom"):
            generate_phantoms(cfg, args.out, cfg.run.seed, metrics)
        return 0


class PreprocessCommand(BaseCommand):
    help = "Resample, window and index aorta slices for every patient directory"

    def get_name(self) -> str:
        return "preprocess"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--data", type=Path, required=True)
        parser.add_argument("--out", type=Path, required=True)
        parser.add_argument("--export-display", action="store_true", help="Also write uint8 display images")

    def run(self, args: argparse.Namespace, cfg: ExperimentConfig, metrics: RunMetrics) -> int:
        with metrics.stage("preprocess"):
            for patient_dir in list_patient_dirs(args.data):
                patient = load_patient(patient_dir, cfg)
                target = args.out / patient_dir.name
                write_preprocessed(patient, target, args.export_display)
                if (patient_dir / ANALYTIC_FILE).exists():
                    shutil.copyfile(patient_dir / ANALYTIC_FILE, target / ANALYTIC_FILE)
                logger.info(
                    f"Preprocessed {patient_dir.name}",
                    extra={"patient_id": patient_dir.name, "aorta_slices": len(patient.slices)},
                )
        return 0


class ExclusionMaskCommand(BaseCommand):
    help = "Binary mask of non-vascular organ labels"

    def get_name(self) -> str:
        return "exclusion-mask"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--labels", type=Path, required=True)
        parser.add_argument("--out", type=Path, required=True, help="Output NIfTI file")

    def output_dir(self, args: argparse.Namespace) -> Path:
        return Path(args.out).parent

    def run(self, args: argparse.Namespace, cfg: ExperimentConfig, metrics: RunMetrics) -> int:
        labels = OrganLabelMap.from_config(read_nifti(args.labels, VolumeKind.INTEGER_LABELS), cfg.anatomy)
        write_nifti(build_exclusion_mask(labels), args.out)
        return 0


class TrainCommand(BaseCommand):
    help = "Train the U-Net with the anatomy-aware or baseline loss"

    def get_name(self) -> str:
        return "train"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--data", type=Path, required=True)
        parser.add_argument("--out", type=Path, required=True)
        parser.add_argument("--mode", type=LossMode, choices=list(LossMode), default=None)

    def apply_overrides(self, args: argparse.Namespace, cfg: ExperimentConfig) -> ExperimentConfig:
        cfg = super().apply_overrides(args, cfg)
        if args.seed is not None:
            cfg = seeded_config(cfg, args.seed, args.mode or cfg.train.loss_mode)
        elif args.mode is not None:
            cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"loss_mode": args.mode})})
        return cfg

    def run(self, args: argparse.Namespace, cfg: ExperimentConfig, metrics: RunMetrics) -> int:
        patients = load_dataset(args.data, cfg)
        ps = cfg.phantom_set
        split = split_patients(sorted(patients), ps.n_train, ps.n_val, ps.n_test, cfg.run.seed)
        with metrics.stage(f"train_{cfg.train.loss_mode.value}"):
            train_run(cfg, patients, split, args.out, metrics)
        return 0


class EvaluateCommand(BaseCommand):
    help = "Score a checkpoint on one split of the patient cohort"

    def get_name(self) -> str:
        return "evaluate"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--data", type=Path, required=True)
        parser.add_argument("--checkpoint", type=Path, required=True)
        parser.add_argument("--out", type=Path, required=True)
        parser.add_argument("--split", choices=["train", "val", "test"], default="test")

    def run(self, args: argparse.Namespace, cfg: ExperimentConfig, metrics: RunMetrics) -> int:
        net, meta = load_checkpoint(args.checkpoint)
        mode = LossMode(meta.get("loss_mode", cfg.train.loss_mode.value))
        patients = load_dataset(args.data, cfg)
        ps = cfg.phantom_set
        split = split_patients(sorted(patients), ps.n_train, ps.n_val, ps.n_test, cfg.run.seed)
        with metrics.stage("evaluate"):
            result = evaluate_patients(
                net, patients, getattr(split, args.split), cfg.eval, cfg.preprocess.crop_size, mode
            )
        write_evaluation(result, args.out)
        return 0


RECON_FLAGS = ("volume_sigma_voxels", "laplacian_iterations", "taubin_iterations")


def _add_recon_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--volume-sigma-voxels", type=float, default=None, help="Gaussian sigma; 0 disables")
    parser.add_argument("--laplacian-iterations", type=int, default=None, help="0 disables Laplacian smoothing")
    parser.add_argument("--taubin-iterations", type=int, default=None, help="0 disables Taubin smoothing")
    parser.add_argument("--keep-all-components", action="store_true", help="Skip largest-component filtering")


def _with_recon(args: argparse.Namespace, cfg: ExperimentConfig) -> ExperimentConfig:
    update: dict[str, object] = {k: getattr(args, k) for k in RECON_FLAGS if getattr(args, k, None) is not None}
    if getattr(args, "keep_all_components", False):
        update["keep_largest_component"] = False
    if not update:
        return cfg
    try:
        recon = ReconConfig.model_validate({**cfg.recon.model_dump(), **update})
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigurationError(f"invalid reconstruction flag: {first['msg']}", key="recon") from e
    return cfg.model_copy(update={"recon": recon})


def _reconstruct_mask(path: Path, cfg: ExperimentConfig, metrics: RunMetrics) -> TriMesh:
    mask = read_nifti(path, VolumeKind.BINARY_MASK)
    with metrics.stage("reconstruct"):
        mesh = reconstruct(mask, cfg.recon, metrics)
    if mesh.is_empty():
        raise MeasurementError(f"{path} holds no surface to reconstruct")
    return mesh


class ReconstructCommand(BaseCommand):
    help = "Smoothed watertight surface mesh of a binary mask"

    def get_name(self) -> str:
        return "reconstruct"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--mask", type=Path, required=True)
        parser.add_argument("--out", type=Path, required=True)
        _add_recon_arguments(parser)

    def apply_overrides(self, args: argparse.Namespace, cfg: ExperimentConfig) -> ExperimentConfig:
        return _with_recon(args, super().apply_overrides(args, cfg))

    def run(self, args: argparse.Namespace, cfg: ExperimentConfig, metrics: RunMetrics) -> int:
        mesh = _reconstruct_mask(args.mask, cfg, metrics)
        args.out.mkdir(parents=True, exist_ok=True)
        write_obj(mesh, args.out / "mesh.obj")
        write_stl(mesh, args.out / "mesh.stl")
        measured = mesh_measures(mesh)
        write_csv(
            args.out / "mesh_measures.csv",
            ["n_vertices", "n_triangles", "surface_area_mm2", "volume_mm3"],
            [[mesh.n_vertices, mesh.n_faces, measured.surface_area_mm2, measured.volume_mm3]],
        )
        return 0


def _with_endpoints(args: argparse.Namespace, cfg: ExperimentConfig) -> ExperimentConfig:
    update = {k: getattr(args, k) for k in ("inlet", "outlet") if getattr(args, k, None) is not None}
    if getattr(args, "surface_label", None) is not None:
        update["surface_label"] = args.surface_label
    if not update:
        return cfg
    return cfg.model_copy(update={"centerline": cfg.centerline.model_copy(update=update)})


class CenterlineCommand(BaseCommand):
    help = "Fast-marching centerline of a binary mask"

    def get_name(self) -> str:
        return "centerline"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--mask", type=Path, required=True)
        parser.add_argument("--out", type=Path, required=True)
        parser.add_argument("--inlet", type=parse_index, default=None, help="Voxel index x,y,z")
        parser.add_argument("--outlet", type=parse_index, default=None, help="Voxel index x,y,z")

    def apply_overrides(self, args: argparse.Namespace, cfg: ExperimentConfig) -> ExperimentConfig:
        return _with_endpoints(args, super().apply_overrides(args, cfg))

    def run(self, args: argparse.Namespace, cfg: ExperimentConfig, metrics: RunMetrics) -> int:
        mask = read_nifti(args.mask, VolumeKind.BINARY_MASK)
        with metrics.stage("centerline"):
            line = extract_centerline(mask, cfg.centerline)
        write_centerline(line, args.out / "centerline.csv")
        return 0


class MorphometryCommand(CenterlineCommand):
    help = "Centerline, cross-sections and clinical descriptors"

    def get_name(self) -> str:
        return "morphometry"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        super().add_arguments(parser)
        parser.add_argument("--mesh", type=Path, default=None, help="OBJ or STL surface; default rebuilds it")
        parser.add_argument("--surface-label", type=SurfaceLabel, choices=list(SurfaceLabel), default=None)
        parser.add_argument("--analytic", type=Path, default=None, help="Phantom analytic.txt for (true) rows")
        _add_recon_arguments(parser)

    def apply_overrides(self, args: argparse.Namespace, cfg: ExperimentConfig) -> ExperimentConfig:
        return _with_recon(args, super().apply_overrides(args, cfg))

    def run(self, args: argparse.Namespace, cfg: ExperimentConfig, metrics: RunMetrics) -> int:
        mask = read_nifti(args.mask, VolumeKind.BINARY_MASK)
        if args.mesh is None:
            mesh = _reconstruct_mask(args.mask, cfg, metrics)
        elif args.mesh.suffix.lower() == ".stl":
            mesh = read_stl(args.mesh)
        else:
            mesh = read_obj(args.mesh)
        analytic = read_analytic(args.analytic) if args.analytic is not None else None
        with metrics.stage("morphometry"):
            line = extract_centerline(mask, cfg.centerline)
            line, descriptors = morphometry(line, mesh, cfg.centerline, metrics)
        write_morphometry(line, descriptors, args.out, analytic)
        return 0


class CompareCommand(BaseCommand):
    help = "Train and test both loss modes on one split for several seeds"

    def get_name(self) -> str:
        return "compare"

    def add_arguments(self, parser: argparse.ArgumentParser) -> None:
        parser.add_argument("--out", type=Path, required=True)
        parser.add_argument("--data", type=Path, default=None, help="Patient directories; default generates phantoms")

    def apply_overrides(self, args: argparse.Namespace, cfg: ExperimentConfig) -> ExperimentConfig:
        if args.seed is None:
            return cfg
        run = cfg.run.model_copy(update={"seed": args.seed, "compare_seeds": (args.seed,)})
        return cfg.model_copy(update={"run": run})

    def run(self, args: argparse.Namespace, cfg: ExperimentConfig, metrics: RunMetrics) -> int:
        run_compare(cfg, args.out, args.data, metrics)
        return 0


command_router = CommandRouter()
