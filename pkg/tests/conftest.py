import os
from pathlib import Path

import pytest

from weighted_svd.ingest import generate_synthetic
from weighted_svd.ratings import RatingsDataset, SplitSpec, split

DATA_DIR = Path(__file__).parent / "data"
ROOT = Path(__file__).parent.parent


@pytest.fixture
def data_dir() -> Path:
    return DATA_DIR


@pytest.fixture
def tiny() -> RatingsDataset:
    """Three users, three items, five ratings."""
    return RatingsDataset.from_triplets(
        ["a", "a", "b", "b", "c"],
        ["x", "y", "x", "z", "y"],
        [4.0, 3.0, 5.0, 1.0, 2.0],
        (1.0, 5.0),
    )


@pytest.fixture(scope="session")
def synthetic() -> RatingsDataset:
    return generate_synthetic(60, 40, 8, 3, seed=3)


@pytest.fixture(scope="session")
def synthetic_split(synthetic) -> tuple[RatingsDataset, RatingsDataset]:
    return split(synthetic, SplitSpec(0.8, seed=7))


def write_ratings(ds: RatingsDataset, path: Path) -> Path:
    """Write ``ds`` as a tab-separated MovieLens-100K style file."""
    lines = [
        f"{ds.user_ids[u]}\t{ds.item_ids[j]}\t{r!r}\t0\n" for u, j, r in zip(ds.users, ds.items, ds.ratings.tolist())
    ]
    path.write_text("".join(lines))
    return path


@pytest.fixture
def ratings_file(tmp_path, synthetic) -> Path:
    return write_ratings(synthetic, tmp_path / "ratings.data")


@pytest.fixture(scope="session")
def ml100k_path() -> Path:
    candidates = [os.environ.get("WEIGHTED_SVD_ML100K"), ROOT / "data" / "ml-100k" / "u.data"]
    for candidate in candidates:
        if candidate and Path(candidate).is_file():
            return Path(candidate)
    pytest.skip("MovieLens-100K not available, run scripts/fetch_movielens.sh")
