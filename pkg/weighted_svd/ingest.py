"""Parsers for the supported rating-file formats and a synthetic rating generator.

Accepted grammar, one rating per line, blank lines ignored:

============== ============== ====================================== ===========
Format         Delimiter      Columns                                Scale
============== ============== ====================================== ===========
MovieLens100K  tab            user, item, rating[, timestamp]        1 to 5
MovieLensDelim ``::``         user, item, rating[, timestamp]        1 to 5
FilmTrust      whitespace     user, item, rating                     0.5 to 4
Epinions       whitespace/any user, item, rating[, extra columns]    1 to 5
============== ============== ====================================== ===========

Ids are kept verbatim as strings; ratings must parse as decimal numbers. The Epinions variant
accepts a custom delimiter (``,`` for the CSV distributions); the whitespace-separated
``ratings_data.txt`` distribution is the one with 40,163 users and 664,824 ratings.
"""

from __future__ import annotations

import logging
import re
from abc import ABC, abstractmethod
from pathlib import Path
from typing import IO, TYPE_CHECKING

import numpy as np
import pandas as pd

from .ratings import EmptyDatasetError, RatingsDataset, density

if TYPE_CHECKING:
    from collections.abc import Sequence

logger = logging.getLogger(__name__)

WHITESPACE = r"\s+"


class IngestError(ValueError):
    """Raised for input that does not follow the declared format."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class MalformedLineError(IngestError):
    pass


class RatingOutOfScaleError(IngestError):
    pass


class DuplicateRatingError(IngestError):
    pass


class DatasetFormat(ABC):
    """Base class for rating-file formats."""

    _registry = {}
    rating_scale: tuple[float, float] = (1.0, 5.0)
    min_columns = 3
    max_columns = 4

    def __init_subclass__(cls, **kwargs):
        super().__init_subclass__(**kwargs)

        name = cls.get_display_name()
        if name in cls._registry:
            raise ValueError(f"Duplicate display name: {name}")
        cls._registry[name] = cls

    def __init__(self, delimiter: str | None = None):
        self.delimiter = delimiter or self.default_delimiter()

    @classmethod
    @abstractmethod
    def get_display_name(cls) -> str:
        """Return the name used in configs and on the command line."""

    @classmethod
    @abstractmethod
    def default_delimiter(cls) -> str:
        """Return the column separator, a literal string or ``WHITESPACE``."""

    @staticmethod
    def get_available_formats() -> set[str]:
        return set(DatasetFormat._registry.keys())

    @staticmethod
    def get_format(name: str) -> type[DatasetFormat]:
        """Get a format class by display name (case-insensitive).

        :param name: Display name of the format
        :return: Format class
        """
        for display_name, format_cls in DatasetFormat._registry.items():
            if display_name.lower() == name.lower():
                return format_cls
        raise ValueError(f"Unknown dataset format: {name!r}. Expected one of {sorted(DatasetFormat._registry)}")

    def _read_kwargs(self) -> dict:
        if self.delimiter == WHITESPACE:
            return {"sep": WHITESPACE, "engine": "python"}
        if len(self.delimiter) == 1:
            return {"sep": self.delimiter, "engine": "c"}
        return {"sep": re.escape(self.delimiter), "engine": "python"}

    def read_frame(self, source: str | Path | IO) -> pd.DataFrame:
        """Read raw columns as strings; the frame index is the 0-based line number.

        Short lines are padded with NaN; lines longer than ``max_columns`` raise. Only empty
        fields count as missing, so ids such as ``NA`` or ``null`` are kept verbatim.
        """
        # one spare column catches lines with extra fields
        names = list(range(self.max_columns + 1))
        try:
            frame = pd.read_csv(
                source,
                header=None,
                names=names,
                index_col=False,
                dtype=str,
                keep_default_na=False,
                na_values=[""],
                skip_blank_lines=False,
                skipinitialspace=True,
                **self._read_kwargs(),
            )
        except pd.errors.EmptyDataError:
            raise EmptyDatasetError("Input has no ratings") from None
        except pd.errors.ParserError as e:
            match = re.search(r"line (\d+)", str(e))
            raise MalformedLineError(f"wrong number of columns ({e})", int(match.group(1)) if match else None) from e
        except UnicodeDecodeError as e:
            raise MalformedLineError(f"input is not valid UTF-8 ({e})") from e

        extra = frame[self.max_columns].notna()
        if extra.any():
            raise MalformedLineError(
                f"wrong number of columns (expected at most {self.max_columns})",
                int(extra.idxmax()) + 1,
            )
        return frame.drop(columns=self.max_columns).dropna(how="all")

    def parse(self, source: str | Path | IO) -> RatingsDataset:
        frame = self.read_frame(source)
        if frame.empty:
            raise EmptyDatasetError("Input has no ratings")
        missing = frame.iloc[:, : self.min_columns].isna().any(axis=1)
        if missing.any():
            raise MalformedLineError(f"expected at least {self.min_columns} columns", int(missing.idxmax()) + 1)

        ratings = pd.to_numeric(frame[2].str.strip(), errors="coerce")
        bad = ratings.isna()
        if bad.any():
            line = int(bad.idxmax())
            raise MalformedLineError(f"rating {frame.at[line, 2]!r} is not a number", line + 1)
        low, high = self.rating_scale
        outside = (ratings < low) | (ratings > high)
        if outside.any():
            line = int(outside.idxmax())
            raise RatingOutOfScaleError(f"rating {ratings[line]} outside scale [{low}, {high}]", line + 1)

        users = frame[0].str.strip()
        items = frame[1].str.strip()
        duplicated = pd.DataFrame({"user": users, "item": items}).duplicated()
        if duplicated.any():
            line = int(duplicated.idxmax())
            raise DuplicateRatingError(f"duplicate rating of item {items[line]!r} by user {users[line]!r}", line + 1)

        ds = RatingsDataset.from_triplets(users, items, ratings.to_numpy(dtype=np.float64), self.rating_scale)
        logger.info(
            f"Parsed {self.get_display_name()}: {ds.n_users} users, {ds.n_items} items, "
            f"{len(ds)} ratings, density {density(ds):.4%}",
        )
        return ds


class MovieLens100KFormat(DatasetFormat):
    @classmethod
    def get_display_name(cls) -> str:
        return "MovieLens100K"

    @classmethod
    def default_delimiter(cls) -> str:
        return "\t"


class MovieLensDelimFormat(DatasetFormat):
    """``ratings.dat`` of MovieLens-1M and -10M."""

    @classmethod
    def get_display_name(cls) -> str:
        return "MovieLensDelim"

    @classmethod
    def default_delimiter(cls) -> str:
        return "::"


class FilmTrustFormat(DatasetFormat):
    rating_scale = (0.5, 4.0)
    max_columns = 3

    @classmethod
    def get_display_name(cls) -> str:
        return "FilmTrust"

    @classmethod
    def default_delimiter(cls) -> str:
        return WHITESPACE


class EpinionsFormat(DatasetFormat):
    # Some distributions append helpfulness or timestamp columns.
    max_columns = 6

    @classmethod
    def get_display_name(cls) -> str:
        return "Epinions"

    @classmethod
    def default_delimiter(cls) -> str:
        return WHITESPACE


def parse(source: str | Path | IO, fmt: str | DatasetFormat, delimiter: str | None = None) -> RatingsDataset:
    """Parse a rating file or byte stream.

    :param source: Path or binary/text stream
    :param fmt: Format display name or instance
    :param delimiter: Delimiter overriding the format's default
    :return: Parsed dataset with raw ids remapped to dense indices
    :raises IngestError: On malformed lines, out-of-scale ratings or duplicate pairs
    :raises EmptyDatasetError: If the input holds no ratings
    """
    if isinstance(fmt, str):
        fmt = DatasetFormat.get_format(fmt)(delimiter)
    elif delimiter is not None:
        fmt = type(fmt)(delimiter)
    return fmt.parse(source)


def load(path: str | Path, fmt: str | DatasetFormat, delimiter: str | None = None) -> RatingsDataset:
    path = Path(path)
    logger.info(f"Loading {path}")
    with path.open("rb") as f:
        return parse(f, fmt, delimiter)


def generate_synthetic(
    m: int,
    n: int,
    ratings_per_user: int,
    k_true: int,
    weight_vector: Sequence[float] | None = None,
    noise_sd: float = 0.1,
    seed: int = 0,
    *,
    mean: float = 3.5,
    factor_sd: float = 0.5,
    rating_scale: tuple[float, float] = (1.0, 5.0),
) -> RatingsDataset:
    """Ratings planted from a weighted latent-factor model.

    Each user rates ``ratings_per_user`` distinct random items with
    ``mean + (w * p_u) . q_j + N(0, noise_sd)``, clamped to ``rating_scale``. Items that no user
    picked do not appear, so the dataset may hold fewer than ``n`` items.

    :param m: Number of users
    :param n: Number of candidate items
    :param ratings_per_user: Ratings per user
    :param k_true: Number of planted factors
    :param weight_vector: Planted per-factor weights, all ones by default
    :param noise_sd: Standard deviation of the rating noise
    :param seed: Generator seed
    :return: Synthetic dataset with ``m * ratings_per_user`` ratings
    """
    if not 0 < ratings_per_user <= n:
        raise ValueError(f"ratings_per_user must be in [1, {n}], got {ratings_per_user}")
    weights = np.ones(k_true) if weight_vector is None else np.asarray(weight_vector, dtype=np.float64)
    if weights.shape != (k_true,):
        raise ValueError(f"weight_vector must have length {k_true}")

    rng = np.random.default_rng(seed)
    user_factors = rng.normal(0.0, factor_sd, (m, k_true))
    item_factors = rng.normal(0.0, factor_sd, (n, k_true))
    items = np.argsort(rng.random((m, n)), axis=1)[:, :ratings_per_user].ravel()
    users = np.repeat(np.arange(m), ratings_per_user)
    signal = np.einsum("ij,ij->i", user_factors[users] * weights, item_factors[items])
    ratings = np.clip(mean + signal + rng.normal(0.0, noise_sd, users.shape[0]), *rating_scale)
    return RatingsDataset.from_triplets(users.astype(str), items.astype(str), ratings, rating_scale)


__all__ = [
    "DatasetFormat",
    "DuplicateRatingError",
    "EpinionsFormat",
    "FilmTrustFormat",
    "IngestError",
    "MalformedLineError",
    "MovieLens100KFormat",
    "MovieLensDelimFormat",
    "RatingOutOfScaleError",
    "generate_synthetic",
    "load",
    "parse",
]
