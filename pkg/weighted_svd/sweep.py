"""Hyperparameter sweeps over factor counts and regularization strengths."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from .evaluation import rmse
from .experiment import UnwritableOutputError, load_dataset, prepare_output_dir, split_dataset
from .trainer import TrainingDivergedError, train

if TYPE_CHECKING:
    from pathlib import Path

    from .config_manager import SweepGrid
    from .models import ModelKind
    from .ratings import RatingsDataset

logger = logging.getLogger(__name__)

SWEEP_FILE = "sweep.csv"
SWEEP_COLUMNS = ["k", "lambda", "model", "test_rmse", "status"]
STATUS_OK = "ok"
STATUS_DIVERGED = "diverged"
STATUS_FAILED = "failed"


class CellResult(NamedTuple):
    k: int
    reg: float
    model: str
    test_rmse: float
    status: str


def run_cell(
    grid: SweepGrid,
    kind: ModelKind,
    k: int,
    reg: float,
    train_set: RatingsDataset,
    test_set: RatingsDataset,
) -> CellResult:
    """Train and evaluate one grid cell; divergence is recorded, not raised."""
    hp = grid.cell_hyperparams(kind, k, reg)
    try:
        params, _ = train(kind, train_set, test_set, hp)
    except TrainingDivergedError as e:
        logger.warning(f"Cell k={k}, lambda={reg}, {kind.value} diverged: {e}")
        return CellResult(k, reg, kind.value, np.nan, STATUS_DIVERGED)
    test_rmse = rmse(params, test_set)
    if not np.isfinite(test_rmse):
        logger.warning(f"Cell k={k}, lambda={reg}, {kind.value} produced non-finite test RMSE")
        return CellResult(k, reg, kind.value, np.nan, STATUS_DIVERGED)
    return CellResult(k, reg, kind.value, test_rmse, STATUS_OK)


def sweep(
    grid: SweepGrid,
    train_set: RatingsDataset | None = None,
    test_set: RatingsDataset | None = None,
    *,
    progress: bool = True,
) -> pd.DataFrame:
    """Train every (k, lambda, model) cell of ``grid`` on one split.

    Cells run on ``grid.workers`` threads; each trains its own parameters from the shared,
    read-only split. Rows are sorted by k, lambda and model name regardless of completion order.

    :param grid: Sweep grid and base configuration
    :param train_set: Training split; loaded and split from ``grid.base`` when omitted
    :param test_set: Test split matching ``train_set``
    :param progress: Show a progress bar
    :return: Results table with columns ``k, lambda, model, test_rmse, status``
    """
    if train_set is None or test_set is None:
        train_set, test_set = split_dataset(load_dataset(grid.base), grid.base)
    if not len(test_set):
        raise ValueError("Sweep needs a non-empty test split")

    cells = [(kind, k, reg) for k in grid.k_values for reg in grid.reg_values for kind in grid.models]
    logger.info(f"Sweeping {len(cells)} cells on {grid.workers} workers")

    results = []
    with ThreadPoolExecutor(max_workers=grid.workers) as executor:
        futures = {
            executor.submit(run_cell, grid, kind, k, reg, train_set, test_set): (kind, k, reg)
            for kind, k, reg in cells
        }
        for future in tqdm(as_completed(futures), total=len(futures), desc="Sweep", disable=not progress):
            kind, k, reg = futures[future]
            try:
                result = future.result()
            except Exception:
                logger.exception(f"Cell k={k}, lambda={reg}, {kind.value} failed")
                result = CellResult(k, reg, kind.value, np.nan, STATUS_FAILED)
            else:
                logger.info(f"Cell k={k}, lambda={reg}, {kind.value}: test RMSE {result.test_rmse:.4f}")
            results.append(result)

    frame = pd.DataFrame(results, columns=["k", "reg", "model", "test_rmse", "status"])
    frame = frame.rename(columns={"reg": "lambda"}).sort_values(["k", "lambda", "model"], kind="stable")
    return frame.reset_index(drop=True)[SWEEP_COLUMNS]


def write_sweep(frame: pd.DataFrame, output_dir: Path) -> Path:
    prepare_output_dir(output_dir)
    path = output_dir / SWEEP_FILE
    try:
        frame.to_csv(path, index=False)
    except OSError as e:
        raise UnwritableOutputError(f"Cannot write {path}: {e}") from e
    logger.info(f"Wrote {len(frame)} sweep rows to {path}")
    return path


__all__ = ["CellResult", "run_cell", "sweep", "write_sweep"]
