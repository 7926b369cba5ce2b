"""RMSE, per-epoch training reports, learned-weight analysis and timing summaries."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, NamedTuple

import numpy as np
import pandas as pd

from .models import predict_many
from .ratings import EmptyDatasetError

if TYPE_CHECKING:
    from .models import ModelParams
    from .ratings import RatingsDataset

logger = logging.getLogger(__name__)

CURVE_COLUMNS = ["epoch", "train_rmse", "test_rmse", "epoch_seconds"]
DEGENERATE_WEIGHT = 1e-12


class DegenerateWeightsError(ValueError):
    """Raised when the smallest learned weight is too close to zero to compare against."""


class EpochRecord(NamedTuple):
    epoch: int
    train_rmse: float
    test_rmse: float | None
    seconds: float


@dataclass
class TrainReport:
    """Per-epoch RMSE and timing of one training run, with the weight trajectory for Weighted-SVD."""

    params: ModelParams | None = None
    records: list[EpochRecord] = field(default_factory=list)
    weight_history: list[np.ndarray] = field(default_factory=list)

    def add_epoch(self, record: EpochRecord, weights: np.ndarray | None = None) -> None:
        """Append the next epoch's record.

        :param record: Record whose epoch index must follow the previous one
        :param weights: Snapshot of the weight vector after the epoch, if the model has one
        """
        if record.epoch != len(self.records):
            raise ValueError(f"Expected epoch {len(self.records)}, got {record.epoch}")
        if record.train_rmse < 0 or (record.test_rmse is not None and record.test_rmse < 0) or record.seconds < 0:
            raise ValueError(f"Negative value in epoch record {record}")
        self.records.append(record)
        if weights is not None:
            self.weight_history.append(np.array(weights, copy=True))

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_record(self) -> EpochRecord | None:
        return self.records[-1] if self.records else None


def rmse(params: ModelParams, ds: RatingsDataset) -> float:
    """Root-mean-squared error on ``ds``, falling back to cold-start predictions for unseen users/items."""
    if not len(ds):
        raise EmptyDatasetError("Cannot compute RMSE on an empty dataset")
    residuals = ds.ratings - predict_many(params, ds.users, ds.items, cold_start=True)
    return float(np.sqrt(np.mean(residuals**2)))


def relative_importance(weights: np.ndarray) -> np.ndarray:
    """Each weight divided by the smallest absolute weight.

    :param weights: Learned weight vector
    :return: Ratios; the arg-min component has absolute value 1
    :raises DegenerateWeightsError: If the smallest absolute weight is at most 1e-12
    """
    weights = np.asarray(weights, dtype=np.float64)
    if not weights.size:
        raise DegenerateWeightsError("Weight vector is empty")
    smallest = np.min(np.abs(weights))
    if smallest <= DEGENERATE_WEIGHT:
        raise DegenerateWeightsError(f"Smallest absolute weight {smallest:g} is too close to zero")
    return weights / smallest


def epoch_seconds_summary(report: TrainReport) -> float:
    """Average wall-clock seconds of one SGD epoch."""
    if not report.records:
        raise ValueError("Report has no epochs")
    return float(np.mean([record.seconds for record in report.records]))


def scaling_ratio(seconds_small: float, seconds_large: float) -> float:
    """Growth factor of the per-epoch time between two dataset sizes."""
    if seconds_small <= 0:
        raise ValueError("Baseline time must be positive")
    return seconds_large / seconds_small


def curve_frame(report: TrainReport) -> pd.DataFrame:
    rows = [
        (record.epoch, record.train_rmse, np.nan if record.test_rmse is None else record.test_rmse, record.seconds)
        for record in report.records
    ]
    return pd.DataFrame(rows, columns=CURVE_COLUMNS)


def write_curves(report: TrainReport, path: Path) -> None:
    """Write ``epoch,train_rmse,test_rmse,epoch_seconds``; a missing test RMSE is left empty."""
    curve_frame(report).to_csv(path, index=False)
    logger.info(f"Wrote {len(report)} epochs to {path}")


def write_weight_history(report: TrainReport, path: Path) -> None:
    """Write ``epoch,w_0,...,w_{k-1}``, one row per epoch."""
    if report.params is None or report.params.weights is None:
        raise ValueError("Only Weighted-SVD reports carry a weight history")
    k = report.params.k
    frame = pd.DataFrame(
        [[epoch, *weights] for epoch, weights in enumerate(report.weight_history)],
        columns=["epoch", *(f"w_{i}" for i in range(k))],
    )
    frame.to_csv(path, index=False)
    logger.info(f"Wrote weight history of {len(frame)} epochs to {path}")


__all__ = [
    "DegenerateWeightsError",
    "EpochRecord",
    "TrainReport",
    "epoch_seconds_summary",
    "relative_importance",
    "rmse",
    "scaling_ratio",
    "write_curves",
    "write_weight_history",
]
