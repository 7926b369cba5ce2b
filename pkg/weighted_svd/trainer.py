"""Regularized squared loss, per-rating gradients and the SGD training loop with learning decay."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, NamedTuple

import numpy as np

from . import sgd_kernels
from .evaluation import EpochRecord, TrainReport, rmse
from .models import (
    ModelKind,
    ModelParams,
    bind_training_data,
    fit_closed_form,
    implicit_sum,
    init_params,
    predict,
    predict_many,
)
from .ratings import EmptyDatasetError, global_mean, user_item_index

if TYPE_CHECKING:
    from .ratings import RatingsDataset

logger = logging.getLogger(__name__)

# Separates the shuffling stream from the initialization stream of the same seed.
_SHUFFLE_STREAM = 1


class TrainingDivergedError(ArithmeticError):
    """Raised when an SGD update produces a non-finite parameter."""

    def __init__(self, epoch: int | None, rating_index: int | None, kind: ModelKind | None = None):
        self.epoch = epoch
        self.rating_index = rating_index
        self.kind = kind
        where = f"epoch {epoch}, rating {rating_index}" if epoch is not None else f"rating {rating_index}"
        name = f"{kind.value} " if kind is not None else ""
        super().__init__(f"{name}training diverged at {where}: non-finite parameter")


class Coefficients(NamedTuple):
    """One value per parameter block: weights, user factors, item factors, user bias, item bias."""

    w: float
    p: float
    q: float
    user: float
    item: float

    @classmethod
    def uniform(cls, value: float) -> Coefficients:
        return cls(value, value, value, value, value)


@dataclass(frozen=True)
class HyperParams:
    k: int = 15
    reg: Coefficients = Coefficients.uniform(0.02)
    lr: Coefficients = Coefficients.uniform(0.005)
    decay: float = 0.9
    epochs: int = 50
    seed: int = 0
    shuffle: bool = True
    sequential: bool = False

    def __post_init__(self):
        object.__setattr__(self, "reg", Coefficients(*self.reg))
        object.__setattr__(self, "lr", Coefficients(*self.lr))
        if self.k < 1:
            raise ValueError(f"k must be positive, got {self.k}")
        if any(value < 0 for value in self.reg):
            raise ValueError(f"Regularization coefficients must be nonnegative, got {self.reg}")
        # A zero weight rate freezes w; every other block needs a positive rate.
        if self.lr.w < 0 or any(value <= 0 for value in self.lr[1:]):
            raise ValueError(f"Learning rates must be positive (the weight rate may be 0), got {self.lr}")
        if not 0 < self.decay <= 1:
            raise ValueError(f"Decay must be in (0, 1], got {self.decay}")
        if self.epochs < 0:
            raise ValueError(f"Epoch budget must be nonnegative, got {self.epochs}")
        if not 0 <= self.seed < 2**64:
            raise ValueError(f"Seed must be a nonnegative 64-bit integer, got {self.seed}")

    def step_scale(self, epoch: int) -> float:
        """Learning-rate multiplier ``decay ** epoch`` for a 0-based epoch."""
        return self.decay**epoch


def default_hyperparams(kind: ModelKind, **overrides) -> HyperParams:
    """Default hyperparameters of ``kind``; SVD++ uses its own rates and regularization.

    :param kind: Model kind
    :param overrides: HyperParams fields to replace
    """
    kind = ModelKind.parse(kind)
    if kind is ModelKind.SVDPP:
        params = HyperParams(
            lr=Coefficients.uniform(0.007),
            reg=Coefficients(w=0.015, p=0.015, q=0.015, user=0.005, item=0.005),
        )
    else:
        params = HyperParams()
    return replace(params, **overrides)


@dataclass
class GradientBundle:
    """Partial derivatives of one rating's loss.

    ``d_y`` has one row per item in ``y_items`` (the user's implicit feedback) for SVD++.
    """

    error: float
    d_bu: float | None = None
    d_bi: float | None = None
    d_w: np.ndarray | None = None
    d_p: np.ndarray | None = None
    d_q: np.ndarray | None = None
    d_y: np.ndarray | None = None
    y_items: np.ndarray | None = None


def _implicit_items(params: ModelParams, u: int, context: RatingsDataset | None) -> np.ndarray:
    if context is None:
        return params.implicit_items(u)
    indptr, indices = user_item_index(context)
    return indices[indptr[u] : indptr[u + 1]]


def loss(params: ModelParams, train: RatingsDataset, reg: Coefficients) -> float:
    """Half the summed squared error plus half the weighted squared norms of every learnable block.

    For SVD++ the implicit feedback bound to ``params`` is used.
    """
    residuals = train.ratings - predict_many(params, train.users, train.items)
    penalties = {
        "user_bias": reg.user,
        "item_bias": reg.item,
        "weights": reg.w,
        "user_factors": reg.p,
        "item_factors": reg.q,
        "implicit_factors": reg.q,
    }
    total = 0.5 * float(np.sum(residuals**2))
    for name, block in params.learnable_blocks().items():
        total += 0.5 * penalties[name] * float(np.sum(block**2))
    return total


def rating_loss(
    params: ModelParams,
    u: int,
    j: int,
    r: float,
    reg: Coefficients,
    context: RatingsDataset | None = None,
) -> float:
    """Loss of one rating: its halved squared residual plus the regularizers of the rows it touches."""
    kind = params.kind
    total = 0.5 * (r - predict(params, u, j, context)) ** 2
    if kind.has_bias:
        total += 0.5 * (reg.user * params.user_bias[u] ** 2 + reg.item * params.item_bias[j] ** 2)
    if kind.has_weights:
        total += 0.5 * reg.w * float(np.sum(params.weights**2))
    if kind.has_factors:
        total += 0.5 * reg.p * float(np.sum(params.user_factors[u] ** 2))
        total += 0.5 * reg.q * float(np.sum(params.item_factors[j] ** 2))
    if kind.has_implicit:
        rated = _implicit_items(params, u, context)
        total += 0.5 * reg.q * float(np.sum(params.implicit_factors[rated] ** 2))
    return float(total)


def gradient_at(
    params: ModelParams,
    u: int,
    j: int,
    r: float,
    reg: Coefficients,
    context: RatingsDataset | None = None,
) -> GradientBundle:
    """Partial derivatives of :func:`rating_loss` with respect to every parameter the rating touches.

    The residual is computed once from the current parameters and shared by all blocks.
    """
    kind = params.kind
    if not kind.has_factors:
        raise ValueError(f"{kind.value} is not trained by SGD")
    err = r - predict(params, u, j, context)
    bundle = GradientBundle(error=err)
    if kind.has_bias:
        bundle.d_bu = -err + reg.user * params.user_bias[u]
        bundle.d_bi = -err + reg.item * params.item_bias[j]
    p = params.user_factors[u]
    q = params.item_factors[j]
    if kind is ModelKind.SVDPP:
        rated = _implicit_items(params, u, context)
        bundle.d_p = -err * q + reg.p * p
        bundle.d_q = -err * (p + implicit_sum(params, u, context)) + reg.q * q
        norm = 1.0 / math.sqrt(rated.size) if rated.size else 0.0
        bundle.y_items = rated
        bundle.d_y = -err * norm * q[np.newaxis, :] + reg.q * params.implicit_factors[rated]
        return bundle
    w = params.weights if kind.has_weights else np.ones(params.k)
    if kind.has_weights:
        bundle.d_w = -err * (p * q) + reg.w * w
    bundle.d_p = -err * (w * q) + reg.p * p
    bundle.d_q = -err * (w * p) + reg.q * q
    return bundle


def _check_finite(values: float | np.ndarray) -> None:
    if not np.all(np.isfinite(values)):
        raise TrainingDivergedError(epoch=None, rating_index=None)


def sgd_step(
    params: ModelParams,
    u: int,
    j: int,
    r: float,
    reg: Coefficients,
    lr: Coefficients,
    decay_factor: float,
    *,
    sequential: bool = False,
    context: RatingsDataset | None = None,
) -> ModelParams:
    """Move every learnable block touched by rating ``(u, j, r)`` against its gradient, in place.

    Without ``sequential`` all gradients come from the parameters before the step. With it the
    blocks are updated in the order user bias, item bias, weights, user factors, item factors,
    implicit factors and each gradient is taken after the previous updates.
    """
    bundle = gradient_at(params, u, j, r, reg, context)

    def refresh() -> GradientBundle:
        return gradient_at(params, u, j, r, reg, context) if sequential else bundle

    if params.kind.has_bias:
        params.user_bias[u] -= decay_factor * lr.user * bundle.d_bu
        _check_finite(params.user_bias[u])
        params.item_bias[j] -= decay_factor * lr.item * refresh().d_bi
        _check_finite(params.item_bias[j])
    if params.kind.has_weights:
        params.weights -= decay_factor * lr.w * refresh().d_w
        _check_finite(params.weights)
    params.user_factors[u] -= decay_factor * lr.p * refresh().d_p
    _check_finite(params.user_factors[u])
    params.item_factors[j] -= decay_factor * lr.q * refresh().d_q
    _check_finite(params.item_factors[j])
    if params.kind.has_implicit:
        current = refresh()
        params.implicit_factors[current.y_items] -= decay_factor * lr.q * current.d_y
        params.invalidate()
        _check_finite(params.implicit_factors[current.y_items])
    return params


def _epoch_runner(params: ModelParams, train: RatingsDataset, hp: HyperParams):
    """Bind the compiled kernel for ``params.kind`` to everything but the visit order and step scale."""
    kind = params.kind
    lr = np.asarray(hp.lr, dtype=np.float64)
    reg = np.asarray(hp.reg, dtype=np.float64)
    if kind is ModelKind.SVDPP:
        indptr, indices = params.implicit

        def run(order: np.ndarray, scale: float) -> int:
            return sgd_kernels.implicit_epoch(
                train.users,
                train.items,
                train.ratings,
                order,
                indptr,
                indices,
                float(params.mean),
                params.user_bias,
                params.item_bias,
                params.user_factors,
                params.item_factors,
                params.implicit_factors,
                lr,
                reg,
                scale,
                hp.sequential,
            )

        return run

    empty = np.zeros(0)
    weights = params.weights if kind.has_weights else np.ones(params.k)

    def run(order: np.ndarray, scale: float) -> int:
        return sgd_kernels.latent_epoch(
            train.users,
            train.items,
            train.ratings,
            order,
            float(params.mean),
            params.user_bias if kind.has_bias else empty,
            params.item_bias if kind.has_bias else empty,
            params.user_factors,
            params.item_factors,
            weights,
            kind.has_bias,
            kind.has_weights,
            lr,
            reg,
            scale,
            hp.sequential,
        )

    return run


def train(
    kind: ModelKind,
    train_set: RatingsDataset,
    test_set: RatingsDataset | None = None,
    hp: HyperParams | None = None,
) -> tuple[ModelParams, TrainReport]:
    """Train a model of ``kind`` on ``train_set``.

    Average and bias models are fit in closed form and report no epochs. The latent models start
    from :func:`init_params`, fix the mean to the training average and run ``hp.epochs`` epochs of
    SGD with step scale ``decay ** epoch``; train/test RMSE and the SGD wall-clock time are recorded
    after each epoch.

    :param kind: Model kind
    :param train_set: Training ratings
    :param test_set: Optional held-out ratings evaluated after each epoch
    :param hp: Hyperparameters, defaults to :func:`default_hyperparams`
    :return: Final parameters and the training report
    :raises TrainingDivergedError: If a parameter becomes non-finite
    """
    kind = ModelKind.parse(kind)
    hp = hp or default_hyperparams(kind)
    if not len(train_set):
        raise EmptyDatasetError("Cannot train on an empty dataset")

    if kind.closed_form:
        logger.info(f"Fitting {kind.value} in closed form, epoch and learning-rate settings are not used")
        params = fit_closed_form(kind, train_set)
        return params, TrainReport(params=params)

    params = init_params(kind, train_set.n_users, train_set.n_items, hp.k, hp.seed)
    if kind.has_mean:
        params.mean = global_mean(train_set)
    bind_training_data(params, train_set)
    report = TrainReport(params=params)
    logger.debug(f"{kind.value} hyperparameters: {hp}")

    run_epoch = _epoch_runner(params, train_set, hp)
    # Triggers compilation so the first timed epoch measures SGD only.
    run_epoch(np.zeros(0, dtype=np.int64), 1.0)

    rng = np.random.default_rng([hp.seed, _SHUFFLE_STREAM])
    n_ratings = len(train_set)
    logger.info(f"Training {kind.value} (k={hp.k}) on {n_ratings} ratings for {hp.epochs} epochs")
    for epoch in range(hp.epochs):
        order = rng.permutation(n_ratings) if hp.shuffle else np.arange(n_ratings, dtype=np.int64)
        start = time.perf_counter()
        failed = run_epoch(order, hp.step_scale(epoch))
        seconds = time.perf_counter() - start
        if failed >= 0:
            raise TrainingDivergedError(epoch, int(order[failed]), kind)
        params.invalidate()

        train_rmse = rmse(params, train_set)
        test_rmse = rmse(params, test_set) if test_set is not None and len(test_set) else None
        report.add_epoch(EpochRecord(epoch, train_rmse, test_rmse, seconds), params.weights)
        test_msg = f", test RMSE {test_rmse:.4f}" if test_rmse is not None else ""
        logger.info(f"{kind.value} epoch {epoch}: train RMSE {train_rmse:.4f}{test_msg} ({seconds:.3f}s)")

    return params, report


__all__ = [
    "Coefficients",
    "GradientBundle",
    "HyperParams",
    "TrainingDivergedError",
    "default_hyperparams",
    "gradient_at",
    "loss",
    "rating_loss",
    "sgd_step",
    "train",
]
