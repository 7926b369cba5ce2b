"""Sparse rating triplets, id remapping, global statistics and train/test splitting."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, NamedTuple

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)


class EmptyDatasetError(ValueError):
    """Raised when an operation needs at least one rating."""


class DatasetStatistics(NamedTuple):
    users: int
    items: int
    ratings: int
    density: float
    rating_scale: tuple[float, float]


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class SplitSpec:
    """Seeded global split of the ratings into a train and a test part."""

    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError(f"train_fraction must be strictly between 0 and 1, got {self.train_fraction}")


@dataclass(frozen=True, eq=False)
class RatingsDataset:
    """Immutable store of (user, item, rating) triplets over dense 0-based indices.

    ``user_ids[u]`` and ``item_ids[j]`` hold the raw identifiers from the source file.
    Split halves keep the parent's id maps, so ``n_users``/``n_items`` may exceed the
    number of users/items that actually occur in a half.
    """

    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    rating_scale: tuple[float, float]
    _validate: bool = field(default=True, repr=False)

    def __post_init__(self):
        users = _readonly(np.ascontiguousarray(self.users, dtype=np.int64))
        items = _readonly(np.ascontiguousarray(self.items, dtype=np.int64))
        ratings = _readonly(np.ascontiguousarray(self.ratings, dtype=np.float64))
        object.__setattr__(self, "users", users)
        object.__setattr__(self, "items", items)
        object.__setattr__(self, "ratings", ratings)
        object.__setattr__(self, "user_ids", tuple(self.user_ids))
        object.__setattr__(self, "item_ids", tuple(self.item_ids))
        object.__setattr__(self, "rating_scale", (float(self.rating_scale[0]), float(self.rating_scale[1])))
        if self._validate:
            self._check_invariants()

    def _check_invariants(self) -> None:
        if not (self.users.shape == self.items.shape == self.ratings.shape) or self.users.ndim != 1:
            raise ValueError("users, items and ratings must be 1-d arrays of equal length")
        if len(self):
            if self.users.min() < 0 or self.users.max() >= self.n_users:
                raise ValueError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.n_items:
                raise ValueError("item index out of range")
        low, high = self.rating_scale
        if low > high:
            raise ValueError(f"Invalid rating scale {self.rating_scale}")
        if not np.all(np.isfinite(self.ratings)) or np.any((self.ratings < low) | (self.ratings > high)):
            raise ValueError(f"ratings must lie within the rating scale {self.rating_scale}")
        pairs = self.users * max(self.n_items, 1) + self.items
        if np.unique(pairs).shape[0] != pairs.shape[0]:
            raise ValueError("duplicate (user, item) pair")

    @classmethod
    def from_triplets(
        cls,
        raw_users: Iterable,
        raw_items: Iterable,
        ratings: Iterable[float],
        rating_scale: tuple[float, float],
    ) -> RatingsDataset:
        """Build a dataset from raw ids, remapping them to dense indices in order of first appearance.

        :param raw_users: Raw user id per rating
        :param raw_items: Raw item id per rating
        :param ratings: Rating values
        :param rating_scale: Inclusive (min, max) of the rating scale
        :return: New dataset
        """
        user_codes, user_ids = pd.factorize(pd.Series(list(raw_users), dtype=str), sort=False)
        item_codes, item_ids = pd.factorize(pd.Series(list(raw_items), dtype=str), sort=False)
        return cls(
            users=user_codes,
            items=item_codes,
            ratings=np.asarray(list(ratings), dtype=np.float64),
            user_ids=tuple(user_ids),
            item_ids=tuple(item_ids),
            rating_scale=rating_scale,
        )

    def __len__(self) -> int:
        return int(self.ratings.shape[0])

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)

    @cached_property
    def _user_index(self) -> dict[str, int]:
        return {raw: idx for idx, raw in enumerate(self.user_ids)}

    @cached_property
    def _item_index(self) -> dict[str, int]:
        return {raw: idx for idx, raw in enumerate(self.item_ids)}

    def index_of_user(self, raw_id: str) -> int | None:
        """Dense index of a raw user id, or None when unknown."""
        return self._user_index.get(str(raw_id))

    def index_of_item(self, raw_id: str) -> int | None:
        """Dense index of a raw item id, or None when unknown."""
        return self._item_index.get(str(raw_id))

    @cached_property
    def _csr(self) -> tuple[np.ndarray, np.ndarray]:
        order = np.argsort(self.users, kind="stable")
        counts = np.bincount(self.users, minlength=self.n_users)
        indptr = np.zeros(self.n_users + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return _readonly(indptr), _readonly(self.items[order].copy())

    def subset(self, positions: np.ndarray) -> RatingsDataset:
        """Dataset holding the triplets at ``positions``, sharing id maps and scale."""
        return RatingsDataset(
            users=self.users[positions],
            items=self.items[positions],
            ratings=self.ratings[positions],
            user_ids=self.user_ids,
            item_ids=self.item_ids,
            rating_scale=self.rating_scale,
            _validate=False,
        )


def global_mean(ds: RatingsDataset) -> float:
    """Average of all known ratings."""
    if not len(ds):
        raise EmptyDatasetError("Dataset has no ratings")
    return float(ds.ratings.mean())


def density(ds: RatingsDataset) -> float:
    """Fraction of the user-item matrix that is observed."""
    if not len(ds) or ds.n_users * ds.n_items == 0:
        raise EmptyDatasetError("Dataset has no ratings")
    return len(ds) / (ds.n_users * ds.n_items)


def statistics(ds: RatingsDataset) -> DatasetStatistics:
    return DatasetStatistics(ds.n_users, ds.n_items, len(ds), density(ds), ds.rating_scale)


def split(ds: RatingsDataset, spec: SplitSpec) -> tuple[RatingsDataset, RatingsDataset]:
    """Partition the ratings uniformly at random into train and test halves.

    The train half receives ``round_half_up(train_fraction * |K|)`` ratings. Both halves keep the
    original order of their triplets and the parent's id maps.

    :param ds: Dataset to split
    :param spec: Fraction and seed
    :return: (train, test)
    """
    if not len(ds):
        raise EmptyDatasetError("Cannot split an empty dataset")
    n_train = math.floor(spec.train_fraction * len(ds) + 0.5)
    permutation = np.random.default_rng(spec.seed).permutation(len(ds))
    train_positions = np.sort(permutation[:n_train])
    test_positions = np.sort(permutation[n_train:])
    logger.info(f"Split {len(ds)} ratings into {n_train} train / {len(ds) - n_train} test (seed {spec.seed})")
    return ds.subset(train_positions), ds.subset(test_positions)


def user_item_index(ds: RatingsDataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-user CSR layout of rated items.

    :return: (indptr, indices); the items of user ``u`` are ``indices[indptr[u]:indptr[u + 1]]``
    """
    return ds._csr  # noqa: SLF001


def items_rated_by(ds: RatingsDataset, u: int) -> set[int]:
    """Items that user ``u`` rated in ``ds``."""
    if not 0 <= u < ds.n_users:
        raise IndexError(f"User index {u} out of range [0, {ds.n_users})")
    indptr, indices = user_item_index(ds)
    return {int(j) for j in indices[indptr[u] : indptr[u + 1]]}


__all__ = [
    "DatasetStatistics",
    "EmptyDatasetError",
    "RatingsDataset",
    "SplitSpec",
    "density",
    "global_mean",
    "items_rated_by",
    "split",
    "statistics",
    "user_item_index",
]
