"""Command-line interface for the contrastive-variational SSL toolkit.

Subcommands pretrain a model, probe a trained (or untrained) encoder, run
optimizer or learning-rate sweeps, run the ablation study, verify gradients
and re-render result tables.

Usage:
    ./run-experiments.py pretrain experiment.conf --out runs/base
    ./run-experiments.py probe experiment.conf --checkpoint runs/base/model.npz
    ./run-experiments.py sweep --axis optimizer experiment.conf --seeds 0,1,2 --jobs 3
    ./run-experiments.py sweep --axis lr experiment.conf --out runs/lr
    ./run-experiments.py ablate experiment.conf --seeds 0,1,2,3,4
    ./run-experiments.py gradcheck
    ./run-experiments.py report runs/lr
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

import pandas as pd
from aws_lambda_powertools import Logger

from .config import ExperimentConfig, load_config
from .constants import CHECKPOINT_FILE, LOSS_CURVE_FILE, RESOLVED_CONFIG_FILE, SERVICE_NAME
from .errors import InvalidValue, ToolkitError
from .gradcheck import run_gradient_suite
from .harness import emit_table, prepare_data, render_table, report, run_ablation, run_experiment, run_sweep
from .models import load_checkpoint, save_checkpoint
from .storage import write_text_atomic
from .train_eval import pretrain

DEFAULT_OUT_DIR = "results"


def parse_seeds(text: str) -> List[int]:
    """Parse a comma separated seed list such as "0,1,2"."""
    try:
        seeds = [int(part.strip()) for part in text.split(",") if part.strip()]
    except ValueError as e:
        raise InvalidValue(f"--seeds must be comma separated integers, got '{text}'") from e
    if not seeds:
        raise InvalidValue("--seeds needs at least one seed")
    return seeds


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        config = config.with_overrides({"run.seed": args.seed})
    return config


def _seeds(args, config: ExperimentConfig) -> List[int]:
    if args.seeds:
        return parse_seeds(args.seeds)
    if args.seed is not None:
        return [args.seed]
    return [config.run.seed]


def _metrics_table(setting: str, metrics) -> str:
    row = {"setting": setting, **{k: f"{v:.3f}" for k, v in metrics.items()}}
    return render_table(pd.DataFrame([row]))


def command_pretrain(args) -> int:
    """Pretrain on the configured data and save the model, loss curve and resolved config.

    Args:
        args: Parsed command line arguments

    Returns:
        int: Exit code (0 for success)
    """
    config = _load(args)
    data = prepare_data(config)
    bundle, curve = pretrain(config, data.pretrain_x, data.val_x)
    os.makedirs(args.out, exist_ok=True)
    write_text_atomic(os.path.join(args.out, RESOLVED_CONFIG_FILE), config.to_text())
    curve.write_csv(os.path.join(args.out, LOSS_CURVE_FILE))
    checkpoint = save_checkpoint(bundle, os.path.join(args.out, CHECKPOINT_FILE))
    last = curve.entries[-1]
    print(f"step {last['step']}: train_loss {last['train_loss']:.4f} val_loss {last['val_loss']:.4f}")
    print(f"checkpoint: {checkpoint}")
    return 0


def command_probe(args) -> int:
    """Fit the linear probe on frozen features and report test metrics.

    Args:
        args: Parsed command line arguments

    Returns:
        int: Exit code (0 for success)
    """
    config = _load(args)
    bundle = None
    if not args.untrained:
        bundle = load_checkpoint(args.checkpoint or os.path.join(args.out, CHECKPOINT_FILE))
    outcome = run_experiment(config, out_dir=args.out, untrained=args.untrained, bundle=bundle)
    setting = "untrained" if args.untrained else "probe"
    print(_metrics_table(setting, outcome.report.metrics()), end="")
    return 0


def command_sweep(args) -> int:
    config = _load(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()] if args.values else None
    if values is not None and args.axis == "lr":
        try:
            values = [float(v) for v in values]
        except ValueError as e:
            raise InvalidValue(f"--values must be numbers for the lr axis, got '{args.values}'") from e
    result = run_sweep(config, args.axis, values, _seeds(args, config), args.out, args.jobs)
    paths = emit_table(result, args.out)
    with open(paths["table"], encoding="utf-8") as f:
        print(f.read(), end="")
    return 0


def command_ablate(args) -> int:
    config = _load(args)
    result = run_ablation(config, _seeds(args, config), args.out, args.jobs)
    paths = emit_table(result, args.out)
    with open(paths["table"], encoding="utf-8") as f:
        print(f.read(), end="")
    return 0


def command_gradcheck(args) -> int:
    """Run the finite-difference gradient suite; exit 1 when any check fails."""
    result = run_gradient_suite(seed=args.seed if args.seed is not None else 0)
    print(result.to_text(), end="")
    return 0 if result.passed else 1


def command_report(args) -> int:
    print(report(args.results_dir), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    """Build the argument parser with every subcommand."""
    parser = argparse.ArgumentParser(
        description="Contrastive + variational self-supervised learning for tabular data"
    )
    parser.add_argument(
        "--log-level",
        choices=["info", "debug", "error"],
        default=os.environ.get("LOG_LEVEL", "error").lower(),
        help="Log level for structured logs written to stderr",
    )
    subparsers = parser.add_subparsers(dest="command", help="Command")

    def add_common(sub, config: bool = True, seeds: bool = False, jobs: bool = False):
        if config:
            sub.add_argument("config", help="Path to a `section.key = value` config file")
        sub.add_argument("--seed", type=int, default=None, help="Override run.seed")
        sub.add_argument("--out", default=DEFAULT_OUT_DIR, help="Output directory")
        if seeds:
            sub.add_argument("--seeds", default=None, help="Comma separated seeds, e.g. 0,1,2")
        if jobs:
            sub.add_argument("--jobs", type=int, default=1, help="Maximum concurrent cells")

    pretrain_parser = subparsers.add_parser("pretrain", help="Pretrain and save a model")
    add_common(pretrain_parser)
    pretrain_parser.set_defaults(func=command_pretrain)

    probe_parser = subparsers.add_parser("probe", help="Linear-probe a saved or untrained encoder")
    add_common(probe_parser)
    probe_parser.add_argument("--checkpoint", default=None, help="Model archive (default: <out>/model.npz)")
    probe_parser.add_argument("--untrained", action="store_true", help="Probe a freshly initialized encoder")
    probe_parser.set_defaults(func=command_probe)

    sweep_parser = subparsers.add_parser("sweep", help="Sweep the optimizer or the learning rate")
    sweep_parser.add_argument("--axis", choices=["optimizer", "lr"], required=True, help="Sweep axis")
    sweep_parser.add_argument("--values", default=None, help="Comma separated grid values (default: standard grid)")
    add_common(sweep_parser, seeds=True, jobs=True)
    sweep_parser.set_defaults(func=command_sweep)

    ablate_parser = subparsers.add_parser("ablate", help="Run the four ablation settings")
    add_common(ablate_parser, seeds=True, jobs=True)
    ablate_parser.set_defaults(func=command_ablate)

    gradcheck_parser = subparsers.add_parser("gradcheck", help="Verify gradients by finite differences")
    gradcheck_parser.add_argument("--seed", type=int, default=None, help="Seed for the check inputs")
    gradcheck_parser.set_defaults(func=command_gradcheck)

    report_parser = subparsers.add_parser("report", help="Re-render the table of a results directory")
    report_parser.add_argument("results_dir", help="Directory holding results.csv and runs.csv")
    report_parser.set_defaults(func=command_report)

    return parser


def configure_logging(level: str) -> Logger:
    """Create the parent logger; child loggers of every module propagate to it."""
    return Logger(
        service=SERVICE_NAME,
        level=level.upper(),
        logger_handler=logging.StreamHandler(sys.stderr),
    )


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch to the subcommand and map errors to exit codes.

    Returns:
        int: 0 on success, 1 on a toolkit or I/O error, 2 on an unexpected error
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        print("Error: a command is required", file=sys.stderr)
        parser.print_help(sys.stderr)
        return 1

    root = configure_logging(args.log_level)
    try:
        return args.func(args)
    except (ToolkitError, OSError) as e:
        root.error(f"{args.command} failed", extra={"error": str(e), "error_type": type(e).__name__})
        print(f"Error: {e}", file=sys.stderr)
        return 1
    except Exception as e:
        root.exception(f"{args.command} failed unexpectedly")
        print(f"Unexpected error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
