"""Single-run, model-comparison and complexity-scaling experiments with their output files."""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
import pandas as pd

from .evaluation import epoch_seconds_summary, rmse, scaling_ratio, write_curves, write_weight_history
from .ingest import IngestError, generate_synthetic, load
from .models import ModelKind, param_count, predict_cold
from .ratings import split
from .serialization import save_model
from .trainer import default_hyperparams, train

if TYPE_CHECKING:
    from collections.abc import Iterable, Sequence

    from .config_manager import ExperimentConfig
    from .evaluation import TrainReport
    from .models import ModelParams
    from .ratings import RatingsDataset

logger = logging.getLogger(__name__)

CURVE_FILE = "curve.csv"
WEIGHTS_FILE = "weights.csv"
SUMMARY_FILE = "summary.json"
TIMING_FILE = "timing.json"
MODEL_FILE = "model.wsvd"
CONFIG_FILE = "config.json"
COMPARISON_FILE = "comparison.csv"
SCALING_FILE = "scaling.csv"

COMPARISON_COLUMNS = ["model", "train_rmse", "test_rmse", "epoch_seconds", "param_count"]
SCALING_COLUMNS = ["model", "ratings_per_user", "ratings", "epoch_seconds", "growth"]


class UnwritableOutputError(OSError):
    """Raised when an output directory or file cannot be written."""


class RunResult(NamedTuple):
    params: ModelParams
    report: TrainReport
    train_rmse: float
    test_rmse: float | None
    output_dir: Path


def load_dataset(config: ExperimentConfig) -> RatingsDataset:
    try:
        return load(config.dataset_path, config.format, config.delimiter)
    except OSError as e:
        raise IngestError(f"Cannot read dataset {config.dataset_path}: {e}") from e


def split_dataset(ds: RatingsDataset, config: ExperimentConfig) -> tuple[RatingsDataset, RatingsDataset]:
    """Split ``ds`` with the configured fraction and seed, warning about cold-start test entries."""
    train_set, test_set = split(ds, config.split)
    cold_users = np.setdiff1d(np.unique(test_set.users), train_set.users).size
    cold_items = np.setdiff1d(np.unique(test_set.items), train_set.items).size
    if cold_users or cold_items:
        logger.warning(f"Test split has {cold_users} users and {cold_items} items without training ratings")
    return train_set, test_set


def prepare_output_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise UnwritableOutputError(f"Cannot create output directory {path}: {e}") from e
    return path


def _dump_json(data: dict, path: Path) -> None:
    with path.open("w") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")


def run(config: ExperimentConfig) -> RunResult:
    """Parse, split, train and write every artifact of one experiment.

    Files written to ``config.output_dir``: ``curve.csv`` and, for Weighted-SVD, ``weights.csv``
    (when curves are enabled), ``summary.json`` with the final RMSEs, ``timing.json`` with the
    average epoch time and the model file ``model.wsvd``. Everything except ``timing.json`` is
    identical across runs of the same configuration.

    :param config: Experiment configuration
    :return: Trained parameters, the training report and the final RMSEs
    :raises IngestError: If the dataset cannot be read or parsed
    :raises TrainingDivergedError: If SGD produced a non-finite parameter
    :raises UnwritableOutputError: If the output directory cannot be written
    """
    output_dir = prepare_output_dir(config.output_dir)
    ds = load_dataset(config)
    train_set, test_set = split_dataset(ds, config)

    params, report = train(config.model, train_set, test_set, config.hp)
    train_rmse = rmse(params, train_set)
    test_rmse = rmse(params, test_set) if len(test_set) else None
    logger.info(f"{config.model.value} final train RMSE {train_rmse:.4f}, test RMSE {test_rmse}")

    summary = {
        "model": config.model.value,
        "dataset": str(config.dataset_path),
        "format": config.format,
        "users": ds.n_users,
        "items": ds.n_items,
        "train_ratings": len(train_set),
        "test_ratings": len(test_set),
        "k": params.k,
        "epochs": len(report),
        "seed": config.hp.seed,
        "split_seed": config.split.seed,
        "param_count": param_count(config.model, ds.n_users, ds.n_items, params.k),
        "train_rmse": train_rmse,
        "test_rmse": test_rmse,
    }
    timing = {
        "model": config.model.value,
        "epochs": len(report),
        "epoch_seconds": epoch_seconds_summary(report) if len(report) else None,
        "total_seconds": float(sum(record.seconds for record in report.records)),
    }

    try:
        if config.emit_curves:
            write_curves(report, output_dir / CURVE_FILE)
            if params.kind.has_weights:
                write_weight_history(report, output_dir / WEIGHTS_FILE)
        _dump_json(summary, output_dir / SUMMARY_FILE)
        _dump_json(timing, output_dir / TIMING_FILE)
        save_model(params, output_dir / MODEL_FILE, encoding=config.model_encoding)
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write results to {output_dir}: {e}") from e
    logger.info(f"Wrote results to {output_dir}")
    return RunResult(params, report, train_rmse, test_rmse, output_dir)


def compare(
    config: ExperimentConfig,
    kinds: Iterable[ModelKind | str],
    hyperparams: dict | None = None,
) -> pd.DataFrame:
    """Train several kinds on the same split; write and return the RMSE and epoch-time table.

    :param config: Base configuration (dataset, split, epochs, output directory)
    :param kinds: Model kinds to train
    :param hyperparams: Optional per-kind HyperParams; defaults follow each kind's defaults
        with the configured ``k``, epochs, decay and seed
    :return: One row per kind with ``model, train_rmse, test_rmse, epoch_seconds, param_count``
    """
    hyperparams = hyperparams or {}
    output_dir = prepare_output_dir(config.output_dir)
    ds = load_dataset(config)
    train_set, test_set = split_dataset(ds, config)

    rows = []
    for kind in map(ModelKind.parse, kinds):
        hp = hyperparams.get(kind) or default_hyperparams(
            kind,
            k=config.hp.k,
            epochs=config.hp.epochs,
            decay=config.hp.decay,
            seed=config.hp.seed,
        )
        params, report = train(kind, train_set, test_set, hp)
        rows.append(
            (
                kind.value,
                rmse(params, train_set),
                rmse(params, test_set) if len(test_set) else np.nan,
                epoch_seconds_summary(report) if len(report) else np.nan,
                param_count(kind, ds.n_users, ds.n_items, hp.k),
            ),
        )
    frame = pd.DataFrame(rows, columns=COMPARISON_COLUMNS)
    try:
        frame.to_csv(output_dir / COMPARISON_FILE, index=False)
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write {output_dir / COMPARISON_FILE}: {e}") from e
    logger.info(f"Wrote comparison of {len(frame)} models to {output_dir / COMPARISON_FILE}")
    return frame


def scaling(
    kinds: Iterable[ModelKind | str],
    degrees: Sequence[int] = (25, 50),
    *,
    n_users: int = 2000,
    n_items: int = 2000,
    k: int = 15,
    epochs: int = 3,
    seed: int = 0,
    output_dir: Path | None = None,
) -> pd.DataFrame:
    """Measure per-epoch training time on synthetic datasets of growing per-user degree.

    ``growth`` is each row's epoch time divided by the same kind's time at the smallest degree.

    :param kinds: Model kinds trained by SGD
    :param degrees: Ratings per user of each synthetic dataset
    :param n_users: Users per dataset
    :param n_items: Candidate items per dataset
    :param k: Latent factors for training and generation
    :param epochs: Timed epochs per cell
    :param seed: Seed of data generation and training
    :param output_dir: Directory for ``scaling.csv``; nothing is written when omitted
    :return: ``model, ratings_per_user, ratings, epoch_seconds, growth``
    """
    kinds = [ModelKind.parse(kind) for kind in kinds]
    closed_form = [kind.value for kind in kinds if kind.closed_form]
    if closed_form:
        raise ValueError(f"Scaling needs SGD-trained kinds, got {closed_form}")
    if epochs < 1:
        raise ValueError("Scaling needs at least one timed epoch")
    degrees = sorted(degrees)

    datasets = {degree: generate_synthetic(n_users, n_items, degree, k, seed=seed) for degree in degrees}
    rows = []
    for kind in kinds:
        baseline = None
        for degree in degrees:
            ds = datasets[degree]
            _, report = train(kind, ds, None, default_hyperparams(kind, k=k, epochs=epochs, seed=seed))
            seconds = epoch_seconds_summary(report)
            baseline = baseline or seconds
            rows.append((kind.value, degree, len(ds), seconds, scaling_ratio(baseline, seconds)))
            logger.info(f"{kind.value} with {degree} ratings per user: {seconds:.4f}s per epoch")
    frame = pd.DataFrame(rows, columns=SCALING_COLUMNS)

    if output_dir is not None:
        prepare_output_dir(output_dir)
        try:
            frame.to_csv(output_dir / SCALING_FILE, index=False)
        except OSError as e:
            raise UnwritableOutputError(f"Cannot write {output_dir / SCALING_FILE}: {e}") from e
    return frame


def predict_raw(params: ModelParams, raw_user: str, raw_item: str, *, clip: bool = False) -> float:
    """Predict by raw ids, treating ids the model never saw as cold-start.

    :param params: Parameters loaded from a model file
    :param raw_user: User id as written in the dataset
    :param raw_item: Item id as written in the dataset
    :param clip: Clamp the prediction to the model's rating scale
    """
    if params.user_ids is None or params.item_ids is None:
        raise ValueError("Model carries no id maps")
    u = params.index_of_user(raw_user)
    j = params.index_of_item(raw_item)
    if u is None or j is None:
        logger.warning(f"Cold-start prediction for user {raw_user!r} and item {raw_item!r}")
    value = predict_cold(params, u, j)
    if clip and params.rating_scale is not None:
        value = float(np.clip(value, *params.rating_scale))
    return value


__all__ = [
    "RunResult",
    "UnwritableOutputError",
    "compare",
    "load_dataset",
    "predict_raw",
    "run",
    "scaling",
    "split_dataset",
]
