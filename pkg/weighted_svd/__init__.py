"""Weighted-SVD recommender: matrix-factorization models with per-factor weights, their baselines and experiments."""

from .evaluation import TrainReport, relative_importance, rmse
from .ingest import generate_synthetic, load, parse
from .models import ModelKind, ModelParams, param_count, predict, predict_many
from .ratings import RatingsDataset, SplitSpec, split
from .serialization import load_model, save_model
from .trainer import Coefficients, HyperParams, default_hyperparams, train

__version__ = "0.1.0"
