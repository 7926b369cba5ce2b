"""Command-line entry point: ``weighted-svd {run,sweep,predict,inspect,stats,compare,scaling}``."""

from __future__ import annotations

import argparse
import logging
import sys
from enum import IntEnum
from pathlib import Path

from . import __version__
from .config_manager import ConfigManager
from .evaluation import DegenerateWeightsError, relative_importance
from .experiment import CONFIG_FILE, UnwritableOutputError, compare, load_dataset, predict_raw, run, scaling
from .ingest import DatasetFormat, IngestError
from .migrations import BLOCKS
from .models import ModelKind, param_count
from .ratings import EmptyDatasetError, statistics
from .serialization import ENCODINGS, ModelFormatError, load_model
from .sweep import sweep, write_sweep
from .trainer import TrainingDivergedError

logger = logging.getLogger(__name__)


class ExitCode(IntEnum):
    OK = 0
    USAGE = 2
    INGEST = 3
    DIVERGED = 4
    UNWRITABLE = 5
    MODEL_FILE = 6


class UsageError(Exception):
    """Invalid configuration or command-line arguments."""


def _add_config_arguments(parser: argparse.ArgumentParser) -> None:
    """Flags mirroring the configuration keys; unset flags keep the configured value."""
    parser.add_argument("--config", type=Path, help="JSON file overriding the packaged defaults")
    data = parser.add_argument_group("dataset")
    data.add_argument("--dataset", dest="dataset_path", help="Rating file to load")
    data.add_argument("--format", help=f"One of {sorted(DatasetFormat.get_available_formats())}")
    data.add_argument("--delimiter", help="Column separator overriding the format's default")
    data.add_argument("--train-fraction", type=float)
    data.add_argument("--split-seed", type=int)

    model = parser.add_argument_group("model")
    model.add_argument("--model", help=f"One of {[kind.value for kind in ModelKind]}")
    model.add_argument("--k", type=int, help="Number of latent factors")
    model.add_argument("--epochs", type=int)
    model.add_argument("--decay", type=float, help="Per-epoch learning-rate decay")
    model.add_argument("--seed", type=int, help="Initialization and shuffling seed")
    model.add_argument("--shuffle", action=argparse.BooleanOptionalAction, default=None)
    model.add_argument("--sequential-updates", action=argparse.BooleanOptionalAction, default=None)
    model.add_argument("--learning-rate", type=float, help="Set every learning rate")
    model.add_argument("--regularization", type=float, help="Set every regularization coefficient")
    for block in BLOCKS:
        model.add_argument(f"--lr-{block.replace('_', '-')}", type=float)
        model.add_argument(f"--reg-{block.replace('_', '-')}", type=float)

    output = parser.add_argument_group("output")
    output.add_argument("--output-dir")
    output.add_argument("--emit-curves", action=argparse.BooleanOptionalAction, default=None)
    output.add_argument(
        "--clip-at-inference",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Clamp saved-model predictions to the rating scale",
    )
    output.add_argument("--model-encoding", choices=ENCODINGS)
    output.add_argument("--workers", type=int, help="Concurrent sweep cells")


def _add_sweep_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sweep-k", type=int, nargs="+", help="Factor counts to sweep")
    parser.add_argument("--sweep-reg", type=float, nargs="+", help="Regularization values to sweep")
    parser.add_argument("--sweep-models", nargs="+", help="Model kinds to sweep")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="weighted-svd", description="Weighted-SVD recommender experiments")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Log debug messages")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Log warnings and errors only")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="Train one model and write its results")
    _add_config_arguments(run_parser)
    run_parser.set_defaults(handler=cmd_run)

    sweep_parser = subparsers.add_parser("sweep", help="Train every (k, lambda, model) cell of a grid")
    _add_config_arguments(sweep_parser)
    _add_sweep_arguments(sweep_parser)
    sweep_parser.add_argument("--no-progress", action="store_true", help="Hide the progress bar")
    sweep_parser.set_defaults(handler=cmd_sweep)

    predict_parser = subparsers.add_parser("predict", help="Predict a rating with a saved model")
    predict_parser.add_argument("model_file", type=Path)
    predict_parser.add_argument("user", help="Raw user id")
    predict_parser.add_argument("item", help="Raw item id")
    predict_parser.add_argument("--config", type=Path, help="Config file supplying clip_at_inference")
    predict_parser.add_argument(
        "--clip",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Clamp the prediction to the model's rating scale",
    )
    predict_parser.set_defaults(handler=cmd_predict)

    inspect_parser = subparsers.add_parser("inspect", help="Show parameter counts and weight importance")
    inspect_parser.add_argument("model_file", type=Path)
    inspect_parser.set_defaults(handler=cmd_inspect)

    stats_parser = subparsers.add_parser("stats", help="Show dataset statistics")
    _add_config_arguments(stats_parser)
    stats_parser.set_defaults(handler=cmd_stats)

    compare_parser = subparsers.add_parser("compare", help="Train several models on one split")
    _add_config_arguments(compare_parser)
    compare_parser.add_argument(
        "--models",
        nargs="+",
        default=[kind.value for kind in ModelKind],
        help="Model kinds to compare",
    )
    compare_parser.set_defaults(handler=cmd_compare)

    scaling_parser = subparsers.add_parser("scaling", help="Time epochs on synthetic data of growing density")
    scaling_parser.add_argument("--models", nargs="+", default=["WSVD", "SVD", "PMF", "SVDpp"])
    scaling_parser.add_argument("--degrees", type=int, nargs="+", default=[25, 50], help="Ratings per user")
    scaling_parser.add_argument("--users", type=int, default=2000)
    scaling_parser.add_argument("--items", type=int, default=2000)
    scaling_parser.add_argument("--k", type=int, default=15)
    scaling_parser.add_argument("--epochs", type=int, default=3)
    scaling_parser.add_argument("--seed", type=int, default=0)
    scaling_parser.add_argument("--output-dir", type=Path, default=Path("runs/scaling"))
    scaling_parser.set_defaults(handler=cmd_scaling)
    return parser


def config_overrides(args: argparse.Namespace) -> dict:
    """Configuration keys set on the command line."""
    values = vars(args)
    overrides = {}
    for prefix, shorthand in (("lr", "learning_rate"), ("reg", "regularization")):
        if values.get(shorthand) is not None:
            overrides.update({f"{prefix}_{block}": values[shorthand] for block in BLOCKS})
    keys = [
        "dataset_path",
        "format",
        "delimiter",
        "model",
        "k",
        "epochs",
        "decay",
        "seed",
        "shuffle",
        "sequential_updates",
        "train_fraction",
        "split_seed",
        "output_dir",
        "emit_curves",
        "clip_at_inference",
        "model_encoding",
        "workers",
        "sweep_k",
        "sweep_reg",
        "sweep_models",
        *(f"lr_{block}" for block in BLOCKS),
        *(f"reg_{block}" for block in BLOCKS),
    ]
    overrides.update({key: values[key] for key in keys if values.get(key) is not None})
    return overrides


def load_settings(args: argparse.Namespace, purpose: str = "run") -> ConfigManager:
    try:
        manager = ConfigManager(args.config, config_overrides(args))
        manager.validate_settings(purpose=purpose)
    except (OSError, ValueError) as e:
        raise UsageError(f"Invalid configuration: {e}") from e
    return manager


def save_effective_config(manager: ConfigManager, output_dir: Path) -> Path:
    """Record the configuration a command ran with next to its results."""
    path = output_dir / CONFIG_FILE
    try:
        manager.save_config(path)
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write {path}: {e}") from e
    return path


def _read_model(path: Path):
    try:
        return load_model(path)
    except OSError as e:
        raise ModelFormatError(f"Cannot read model file {path}: {e}") from e


def cmd_run(args: argparse.Namespace) -> int:
    manager = load_settings(args)
    result = run(manager.experiment_config())
    save_effective_config(manager, result.output_dir)
    test_rmse = "n/a" if result.test_rmse is None else f"{result.test_rmse:.4f}"
    sys.stdout.write(
        f"{result.params.kind.value}: train RMSE {result.train_rmse:.4f}, test RMSE {test_rmse}\n"
        f"Results written to {result.output_dir}\n",
    )
    return ExitCode.OK


def cmd_sweep(args: argparse.Namespace) -> int:
    manager = load_settings(args, purpose="sweep")
    grid = manager.sweep_grid()
    frame = sweep(grid, progress=not args.no_progress)
    path = write_sweep(frame, grid.base.output_dir)
    save_effective_config(manager, grid.base.output_dir)
    sys.stdout.write(frame.to_string(index=False) + f"\n\nWritten to {path}\n")
    return ExitCode.OK


def cmd_predict(args: argparse.Namespace) -> int:
    params = _read_model(args.model_file)
    clip = args.clip
    if clip is None:
        try:
            clip = bool(ConfigManager(args.config)["clip_at_inference"])
        except (OSError, ValueError) as e:
            raise UsageError(f"Invalid configuration: {e}") from e
    try:
        value = predict_raw(params, args.user, args.item, clip=clip)
    except ValueError as e:
        raise ModelFormatError(str(e)) from e
    sys.stdout.write(f"{value:.6f}\n")
    return ExitCode.OK


def cmd_inspect(args: argparse.Namespace) -> int:
    params = _read_model(args.model_file)
    m, n, k = params.n_users, params.n_items, params.k
    lines = [
        f"Model: {params.kind.value}",
        f"Users: {m}, items: {n}, factors: {k}",
        f"Stored learnable parameters: {params.n_learnable}",
        "",
        f"Parameter counts for m={m}, n={n}, k={k}:",
    ]
    lines += [f"  {kind.value:<8} {param_count(kind, m, n, k):>12}" for kind in ModelKind]
    if params.weights is not None:
        lines += ["", "Relative importance of factor weights:"]
        try:
            importance = relative_importance(params.weights)
        except DegenerateWeightsError as e:
            lines.append(f"  unavailable: {e}")
        else:
            for i, (weight, ratio) in enumerate(zip(params.weights, importance)):
                lines.append(f"  w_{i:<3} {weight: .6f} {ratio: .4f}")
    sys.stdout.write("\n".join(lines) + "\n")
    return ExitCode.OK


def cmd_stats(args: argparse.Namespace) -> int:
    manager = load_settings(args)
    config = manager.experiment_config()
    stats = statistics(load_dataset(config))
    low, high = stats.rating_scale
    sys.stdout.write(
        f"dataset,users,items,ratings,density,scale\n"
        f"{config.dataset_path.name},{stats.users},{stats.items},{stats.ratings},"
        f"{stats.density:.4%},{low:g}-{high:g}\n",
    )
    return ExitCode.OK


def cmd_compare(args: argparse.Namespace) -> int:
    manager = load_settings(args)
    try:
        kinds = [ModelKind.parse(name) for name in args.models]
    except ValueError as e:
        raise UsageError(str(e)) from e
    frame = compare(manager.experiment_config(), kinds, {kind: manager.hyperparams(kind) for kind in kinds})
    sys.stdout.write(frame.to_string(index=False) + "\n")
    return ExitCode.OK


def cmd_scaling(args: argparse.Namespace) -> int:
    try:
        frame = scaling(
            args.models,
            args.degrees,
            n_users=args.users,
            n_items=args.items,
            k=args.k,
            epochs=args.epochs,
            seed=args.seed,
            output_dir=args.output_dir,
        )
    except ValueError as e:
        raise UsageError(str(e)) from e
    sys.stdout.write(frame.to_string(index=False) + "\n")
    return ExitCode.OK


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:  # noqa: FBT001, FBT002
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True)
    # numba logs compilation passes at DEBUG
    logging.getLogger("numba").setLevel(logging.WARNING)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)

    try:
        return int(args.handler(args))
    except UsageError as e:
        logger.error(str(e))
        return ExitCode.USAGE
    except (IngestError, EmptyDatasetError) as e:
        logger.error(f"Cannot load dataset: {e}")
        return ExitCode.INGEST
    except TrainingDivergedError as e:
        logger.error(str(e))
        return ExitCode.DIVERGED
    except UnwritableOutputError as e:
        logger.error(str(e))
        return ExitCode.UNWRITABLE
    except ModelFormatError as e:
        logger.error(f"Cannot use model file: {e}")
        return ExitCode.MODEL_FILE


if __name__ == "__main__":
    sys.exit(main())
