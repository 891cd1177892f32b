"""Command-line entry point."""

import logging
import sys
from collections.abc import Sequence

from aaa_toolkit.commands import (
    CenterlineCommand,
    CompareCommand,
    EvaluateCommand,
    ExclusionMaskCommand,
    MorphometryCommand,
    PhantomCommand,
    PreprocessCommand,
    ReconstructCommand,
    TrainCommand,
    command_router,
)
from aaa_toolkit.config import load_config, write_effective_config
from aaa_toolkit.errors import ToolkitError, UsageError, VolumeIOError
from aaa_toolkit.logging_config import configure_logging
from aaa_toolkit.prometheus_metrics import RunMetrics

logger = logging.getLogger(__name__)

LOG_FILE = "logs/run.log"

# Register commands
command_router.register_command(PhantomCommand())
command_router.register_command(PreprocessCommand())
command_router.register_command(ExclusionMaskCommand())
command_router.register_command(TrainCommand())
command_router.register_command(EvaluateCommand())
command_router.register_command(ReconstructCommand())
command_router.register_command(CenterlineCommand())
command_router.register_command(MorphometryCommand())
command_router.register_command(CompareCommand())


def _report(error: ToolkitError) -> int:
    print(f"error: {type(error).__name__}: {error}", file=sys.stderr)
    logger.error(
        f"{type(error).__name__}: {error}",
        extra={"exit_code": error.exit_code, **{k: v for k, v in error.context.items() if v is not None}},
    )
    return error.exit_code


def run_subcommand(argv: Sequence[str] | None = None) -> int:
    """
    Parse argv, run one subcommand and map failures to exit codes.

    Every run writes config.ini, logs/run.log and metrics.prom into the
    subcommand's output directory.

    Returns:
        0 on success, 2 for usage errors, 3 for configuration errors,
        4 for I/O errors and 1 for any other toolkit error
    """
    args_list = list(sys.argv[1:] if argv is None else argv)
    parser = command_router.build_parser()
    if not args_list:
        parser.print_usage(sys.stderr)
        return UsageError.exit_code
    try:
        args = parser.parse_args(args_list)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else UsageError.exit_code
    if args.command is None:
        parser.print_usage(sys.stderr)
        return UsageError.exit_code

    metrics = RunMetrics()
    out_dir = None
    try:
        command = command_router.get_command(args.command)
        out_dir = command.output_dir(args)
        configure_logging(level=args.log_level, log_file=out_dir / LOG_FILE)
        cfg = command.apply_overrides(args, load_config(args.config))
        write_effective_config(cfg, out_dir)
        logger.info(f"Running {args.command}", extra={"command": args.command, "out_dir": str(out_dir)})
        code = command.run(args, cfg, metrics)
    except ToolkitError as e:
        code = _report(e)
    except OSError as e:
        code = _report(VolumeIOError(str(e)))
    finally:
        if out_dir is not None:
            try:
                metrics.write(out_dir)
            except OSError:
                logger.warning(f"Could not write metrics to {out_dir}")
    return code


def main() -> None:
    sys.exit(run_subcommand())


if __name__ == "__main__":
    main()
