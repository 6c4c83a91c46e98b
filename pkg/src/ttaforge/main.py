"""ttaforge command-line entry point."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import ValidationError

from .adapt import PRESETS
from .config import settings
from .exceptions import (
    InvalidArgumentError,
    PresetError,
    TTAForgeError,
)
from .experiment import pretrain_checkpoint, run_experiment, sweep
from .models import ExperimentConfig, NormKind, parse_imbalance
from .report import render_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def configure_logging(level: str = settings.LOG_LEVEL) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
    )


def imbalance(value: str) -> float:
    try:
        return parse_imbalance(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"invalid imbalance factor {value!r}") from e


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="experiment JSON document")
    parser.add_argument("--seed", type=int, help="single seed (overrides config)")
    parser.add_argument("--norm", choices=[k.value for k in NormKind])
    parser.add_argument("--csv", help="CSV dataset path or http(s) URL")
    parser.add_argument("--out", help="output directory")


def _add_adapt_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", help=f"one of {', '.join(PRESETS)}")
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--imbalance", type=imbalance, help="ratio >= 1 or 'inf'")
    parser.add_argument("--entropy-factor", type=float)
    parser.add_argument("--temperature", type=float)
    parser.add_argument("--buffer", type=int)
    parser.add_argument("--workers", type=int)
    parser.add_argument(
        "--auto-pretrain",
        action="store_true",
        help="pretrain missing checkpoints instead of failing",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tta-forge",
        description="Streaming test-time adaptation experiments.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    pretrain = commands.add_parser("pretrain", help="train a source checkpoint")
    _add_common(pretrain)

    adapt = commands.add_parser("adapt", help="run one adaptation cell")
    _add_common(adapt)
    _add_adapt_flags(adapt)

    sweep_parser = commands.add_parser("sweep", help="run a grid of cells")
    _add_common(sweep_parser)
    _add_adapt_flags(sweep_parser)

    report_parser = commands.add_parser("report", help="render result tables")
    report_parser.add_argument(
        "results", nargs="?", help="results directory (default: TTA_FORGE_OUT_DIR)"
    )
    report_parser.add_argument("--out", help="directory for the report files")
    return parser


def load_config(path: Optional[Path]) -> ExperimentConfig:
    """Read the experiment document, or the defaults when no path is given."""
    if path is None:
        return ExperimentConfig()
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise InvalidArgumentError(f"cannot read config {path}: {e}") from e
    return ExperimentConfig.model_validate_json(text)


def apply_overrides(
    config: ExperimentConfig, args: argparse.Namespace
) -> ExperimentConfig:
    """Merge command-line flags over the config file values.

    For ``sweep`` the cell flags pin the matching grid axis to one value.
    """
    data: Dict[str, Any] = config.model_dump(exclude_unset=True)
    adapt: Dict[str, Any] = data.setdefault("adapt", {})
    grid: Dict[str, Any] = data.setdefault("grid", {})
    is_sweep = args.command == "sweep"

    def pin(field: str, axis: str, value: Any) -> None:
        if value is None:
            return
        if is_sweep:
            grid[axis] = [value]
        else:
            data[field] = value

    if args.seed is not None:
        if args.command == "pretrain":
            data.setdefault("training", {})["seed"] = args.seed
        else:
            data["seeds"] = [args.seed]
    if args.csv is not None:
        data["csv_path"] = args.csv
    if args.out is not None:
        key = "checkpoint_dir" if args.command == "pretrain" else "out_dir"
        data[key] = args.out
    pin("norm", "norms", args.norm)

    if args.command in ("adapt", "sweep"):
        pin("preset", "presets", args.preset)
        pin("batch_size", "batch_sizes", args.batch_size)
        pin("imbalance", "imbalances", args.imbalance)
        if args.workers is not None:
            data["workers"] = args.workers
        if args.auto_pretrain:
            data["auto_pretrain"] = True
        for flag, name, axis in (
            ("entropy_factor", "entropy_factor", "entropy_factors"),
            ("temperature", "temperature", "temperatures"),
            ("buffer", "buffer_size", "buffers"),
        ):
            value = getattr(args, flag)
            if value is None:
                continue
            if is_sweep:
                grid[axis] = [value]
            else:
                adapt[name] = value
    return ExperimentConfig.model_validate(data)


def dispatch(args: argparse.Namespace) -> None:
    if args.command == "report":
        results_dir = args.results or settings.OUT_DIR
        built = render_report(results_dir, args.out)
        print(built.text)
        if built.missing:
            logger.warning(f"Report has {built.missing} missing cells")
        return

    config = apply_overrides(load_config(args.config), args)
    if args.command == "pretrain":
        path = pretrain_checkpoint(config, config.norm)
        logger.info(f"Checkpoint written to {path}")
    elif args.command == "adapt":
        path = run_experiment(config)
        logger.info(f"Summary written to {path}")
    else:
        path = sweep(config)
        logger.info(f"Sweep summary written to {path}")


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    configure_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        dispatch(args)
    except KeyboardInterrupt:
        logger.info("Interrupted by user.")
        return EXIT_FAILURE
    except (PresetError, ValidationError, InvalidArgumentError) as e:
        logger.error(f"Invalid usage: {e}")
        return EXIT_USAGE
    except TTAForgeError as e:
        logger.error(f"{args.command} failed: {e}")
        return EXIT_FAILURE
    except Exception:
        logger.exception(f"{args.command} failed")
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
