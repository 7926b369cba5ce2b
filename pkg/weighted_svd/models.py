"""Parameter containers and prediction for the average, bias, PMF, SVD, SVD++ and Weighted-SVD models."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

from .ratings import EmptyDatasetError, global_mean, user_item_index

if TYPE_CHECKING:
    from .ratings import RatingsDataset

logger = logging.getLogger(__name__)


class ModelKind(str, Enum):
    AVERAGE = "Average"
    BIAS = "Bias"
    PMF = "PMF"
    SVD = "SVD"
    SVDPP = "SVDpp"
    WSVD = "WSVD"

    @classmethod
    def parse(cls, name: str | ModelKind) -> ModelKind:
        """Look a kind up by value, case-insensitively (``svd++`` is accepted for SVDpp)."""
        if isinstance(name, ModelKind):
            return name
        normalized = name.strip().lower().replace("++", "pp")
        for kind in cls:
            if kind.value.lower() == normalized:
                return kind
        raise ValueError(f"Unknown model kind: {name!r}. Expected one of {[kind.value for kind in cls]}")

    @property
    def closed_form(self) -> bool:
        return self in (ModelKind.AVERAGE, ModelKind.BIAS)

    @property
    def has_mean(self) -> bool:
        return self is not ModelKind.PMF

    @property
    def has_bias(self) -> bool:
        return self not in (ModelKind.AVERAGE, ModelKind.PMF)

    @property
    def has_factors(self) -> bool:
        return self in (ModelKind.PMF, ModelKind.SVD, ModelKind.SVDPP, ModelKind.WSVD)

    @property
    def has_weights(self) -> bool:
        return self is ModelKind.WSVD

    @property
    def has_implicit(self) -> bool:
        return self is ModelKind.SVDPP


@dataclass(eq=False)
class ModelParams:
    """Learnable parameters of one model, plus what was learned about the training data.

    Blocks that the kind does not use are ``None``. ``user_seen``/``item_seen`` mark the users and
    items that had training ratings; ``implicit`` is the SVD++ per-user CSR of rated training items.
    """

    kind: ModelKind
    n_users: int
    n_items: int
    k: int
    mean: float = 0.0
    user_bias: np.ndarray | None = None
    item_bias: np.ndarray | None = None
    user_factors: np.ndarray | None = None
    item_factors: np.ndarray | None = None
    weights: np.ndarray | None = None
    implicit_factors: np.ndarray | None = None
    user_seen: np.ndarray | None = None
    item_seen: np.ndarray | None = None
    implicit: tuple[np.ndarray, np.ndarray] | None = None
    user_ids: tuple[str, ...] | None = None
    item_ids: tuple[str, ...] | None = None
    rating_scale: tuple[float, float] | None = None
    _implicit_cache: np.ndarray | None = field(default=None, repr=False)
    _index_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.user_seen is None:
            self.user_seen = np.ones(self.n_users, dtype=bool)
        if self.item_seen is None:
            self.item_seen = np.ones(self.n_items, dtype=bool)
        if self.kind.has_implicit and self.implicit is None:
            self.implicit = (np.zeros(self.n_users + 1, dtype=np.int64), np.zeros(0, dtype=np.int64))

    def learnable_blocks(self) -> dict[str, np.ndarray]:
        """Learnable blocks present for this kind, in persistence order."""
        names = ("user_bias", "item_bias", "user_factors", "item_factors", "weights", "implicit_factors")
        return {name: getattr(self, name) for name in names if getattr(self, name) is not None}

    @property
    def n_learnable(self) -> int:
        return sum(block.size for block in self.learnable_blocks().values())

    def index_of_user(self, raw_id: str) -> int | None:
        """Dense index of a raw user id, or None when the model never saw it."""
        return self._id_index("user", self.user_ids).get(str(raw_id))

    def index_of_item(self, raw_id: str) -> int | None:
        """Dense index of a raw item id, or None when the model never saw it."""
        return self._id_index("item", self.item_ids).get(str(raw_id))

    def _id_index(self, which: str, ids: tuple[str, ...] | None) -> dict[str, int]:
        # rebuilt whenever bind_training_data swaps the id tuple
        cached = self._index_cache.get(which)
        if cached is None or cached[0] is not ids:
            cached = (ids, {raw: idx for idx, raw in enumerate(ids or ())})
            self._index_cache[which] = cached
        return cached[1]

    def invalidate(self) -> None:
        """Drop cached derived values after the implicit factors changed."""
        self._implicit_cache = None

    def implicit_items(self, u: int) -> np.ndarray:
        indptr, indices = self.implicit
        return indices[indptr[u] : indptr[u + 1]]

    def implicit_user_vectors(self) -> np.ndarray:
        """Normalized implicit-feedback sum ``|R(u)|^-1/2 * sum(y_g)`` for every user (zero for empty R(u))."""
        if self._implicit_cache is None:
            indptr, indices = self.implicit
            counts = np.diff(indptr)
            norms = np.zeros(self.n_users)
            np.divide(1.0, np.sqrt(counts), out=norms, where=counts > 0)
            feedback = sp.csr_matrix(
                (np.repeat(norms, counts), indices, indptr),
                shape=(self.n_users, self.n_items),
            )
            self._implicit_cache = np.asarray(feedback @ self.implicit_factors)
        return self._implicit_cache


def bind_training_data(params: ModelParams, train: RatingsDataset) -> ModelParams:
    """Attach what prediction needs to know about the training split.

    :param params: Parameters to update in place
    :param train: Training split the parameters are fit on
    :return: The same parameters
    """
    params.user_seen = np.bincount(train.users, minlength=params.n_users) > 0
    params.item_seen = np.bincount(train.items, minlength=params.n_items) > 0
    params.user_ids = train.user_ids
    params.item_ids = train.item_ids
    params.rating_scale = train.rating_scale
    if params.kind.has_implicit:
        params.implicit = user_item_index(train)
        params.invalidate()
    return params


def param_count(kind: ModelKind, m: int, n: int, k: int) -> int:
    """Number of learnable parameters of ``kind`` for ``m`` users, ``n`` items and ``k`` factors."""
    kind = ModelKind.parse(kind)
    counts = {
        ModelKind.AVERAGE: 0,
        ModelKind.BIAS: m + n,
        ModelKind.PMF: m * k + n * k,
        ModelKind.SVD: m * (k + 1) + n * (k + 1),
        ModelKind.WSVD: m * (k + 1) + n * (k + 1) + k,
        ModelKind.SVDPP: m * (k + 1) + n * (k + 1) + n * k,
    }
    return counts[kind]


def init_params(kind: ModelKind, m: int, n: int, k: int, seed: int) -> ModelParams:
    """Initial parameters: standard normal factors, unit weights, zero biases.

    Factor blocks are drawn in the order user factors, item factors, implicit factors from one
    generator, so kinds sharing P and Q start from identical values for the same seed.
    """
    kind = ModelKind.parse(kind)
    rng = np.random.default_rng(seed)
    params = ModelParams(kind=kind, n_users=m, n_items=n, k=k)
    if kind.has_bias:
        params.user_bias = np.zeros(m)
        params.item_bias = np.zeros(n)
    if kind.has_factors:
        params.user_factors = rng.standard_normal((m, k))
        params.item_factors = rng.standard_normal((n, k))
    if kind.has_weights:
        params.weights = np.ones(k)
    if kind.has_implicit:
        params.implicit_factors = rng.standard_normal((n, k))
    return params


def fit_closed_form(kind: ModelKind, train: RatingsDataset) -> ModelParams:
    """Fit the average or bias model directly from rating averages.

    User bias is the user's mean rating minus the global mean; item bias likewise. Users and items
    without ratings get a zero bias.
    """
    kind = ModelKind.parse(kind)
    if not kind.closed_form:
        raise ValueError(f"{kind.value} has no closed-form fit")
    if not len(train):
        raise EmptyDatasetError("Cannot fit on an empty dataset")
    params = ModelParams(kind=kind, n_users=train.n_users, n_items=train.n_items, k=0, mean=global_mean(train))
    if kind is ModelKind.BIAS:
        params.user_bias = _mean_offsets(train.users, train.ratings, train.n_users, params.mean)
        params.item_bias = _mean_offsets(train.items, train.ratings, train.n_items, params.mean)
    return bind_training_data(params, train)


def _mean_offsets(index: np.ndarray, ratings: np.ndarray, size: int, mean: float) -> np.ndarray:
    counts = np.bincount(index, minlength=size)
    sums = np.bincount(index, weights=ratings, minlength=size)
    offsets = np.zeros(size)
    np.divide(sums, counts, out=offsets, where=counts > 0)
    offsets[counts > 0] -= mean
    return offsets


def _check_index(params: ModelParams, u: int, j: int) -> None:
    if not 0 <= u < params.n_users:
        raise IndexError(f"User index {u} out of range [0, {params.n_users})")
    if not 0 <= j < params.n_items:
        raise IndexError(f"Item index {j} out of range [0, {params.n_items})")


def implicit_sum(params: ModelParams, u: int, context: RatingsDataset | None = None) -> np.ndarray:
    """``|R(u)|^-1/2 * sum(y_g for g in R(u))``, taking R(u) from ``context`` when given."""
    if context is not None:
        indptr, indices = user_item_index(context)
        rated = indices[indptr[u] : indptr[u + 1]]
    else:
        rated = params.implicit_items(u)
    if not rated.size:
        return np.zeros(params.k)
    return params.implicit_factors[rated].sum(axis=0) / np.sqrt(rated.size)


def effective_user_vector(params: ModelParams, u: int, context: RatingsDataset | None = None) -> np.ndarray:
    """The vector that multiplies ``q_j`` in the factor term."""
    vector = params.user_factors[u]
    if params.kind is ModelKind.WSVD:
        vector = params.weights * vector
    elif params.kind is ModelKind.SVDPP:
        vector = vector + implicit_sum(params, u, context)
    return vector


def predict(params: ModelParams, u: int, j: int, context: RatingsDataset | None = None) -> float:
    """Predicted rating of user ``u`` on item ``j``, unclipped.

    :param params: Model parameters
    :param u: User index
    :param j: Item index
    :param context: Training dataset defining SVD++ implicit feedback; defaults to the bound one
    :return: Predicted rating
    """
    _check_index(params, u, j)
    kind = params.kind
    value = params.mean if kind.has_mean else 0.0
    if kind.has_bias:
        value += params.user_bias[u] + params.item_bias[j]
    if kind.has_factors:
        value += float(np.dot(effective_user_vector(params, u, context), params.item_factors[j]))
    return float(value)


def predict_cold(params: ModelParams, u: int | None, j: int | None) -> float:
    """Prediction that drops the terms of users or items unseen in training.

    ``None`` (an id unknown to the model) and indices marked unseen are treated alike.
    """
    user_known = u is not None and 0 <= u < params.n_users and bool(params.user_seen[u])
    item_known = j is not None and 0 <= j < params.n_items and bool(params.item_seen[j])
    if user_known and item_known:
        return predict(params, u, j)
    kind = params.kind
    value = params.mean if kind.has_mean else 0.0
    if kind.has_bias:
        if user_known:
            value += params.user_bias[u]
        if item_known:
            value += params.item_bias[j]
    return float(value)


def predict_many(
    params: ModelParams,
    users: np.ndarray,
    items: np.ndarray,
    *,
    cold_start: bool = False,
) -> np.ndarray:
    """Vectorized :func:`predict` (or :func:`predict_cold` with ``cold_start``) over index arrays."""
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    kind = params.kind
    values = np.full(users.shape[0], params.mean if kind.has_mean else 0.0)
    if cold_start:
        user_known = params.user_seen[users]
        item_known = params.item_seen[items]
    if kind.has_bias:
        user_bias = params.user_bias[users]
        item_bias = params.item_bias[items]
        if cold_start:
            user_bias = np.where(user_known, user_bias, 0.0)
            item_bias = np.where(item_known, item_bias, 0.0)
        values += user_bias + item_bias
    if kind.has_factors:
        user_vectors = params.user_factors[users]
        if kind is ModelKind.WSVD:
            user_vectors = user_vectors * params.weights
        elif kind is ModelKind.SVDPP:
            user_vectors = user_vectors + params.implicit_user_vectors()[users]
        factor_term = np.einsum("ij,ij->i", user_vectors, params.item_factors[items])
        if cold_start:
            factor_term = np.where(user_known & item_known, factor_term, 0.0)
        values += factor_term
    return values


__all__ = [
    "ModelKind",
    "ModelParams",
    "bind_training_data",
    "fit_closed_form",
    "init_params",
    "param_count",
    "predict",
    "predict_cold",
    "predict_many",
]
