"""Configuration management for experiment runs and sweeps."""

from __future__ import annotations

import copy
import json
import logging
from collections import UserDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

from .ingest import DatasetFormat
from .migrations import BLOCKS, CURRENT_SCHEMA_VERSION, MIGRATIONS
from .models import ModelKind
from .ratings import SplitSpec
from .serialization import ENCODINGS
from .trainer import Coefficients, HyperParams, default_hyperparams

logger = logging.getLogger(__name__)

DEFAULTS_PATH = Path(__file__).parent / "config.json"


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: Path
    format: str
    model: ModelKind
    hp: HyperParams
    split: SplitSpec
    output_dir: Path
    delimiter: str | None = None
    emit_curves: bool = True
    clip_at_inference: bool = False
    model_encoding: str = "binary"

    def __post_init__(self):
        if not str(self.dataset_path) or not str(self.output_dir):
            raise ValueError("dataset_path and output_dir must be non-empty")
        DatasetFormat.get_format(self.format)
        object.__setattr__(self, "model", ModelKind.parse(self.model))


@dataclass(frozen=True)
class SweepGrid:
    """Grid of factor counts and uniform regularization values, crossed with model kinds."""

    k_values: tuple[int, ...]
    reg_values: tuple[float, ...]
    base: ExperimentConfig
    models: tuple[ModelKind, ...] = (ModelKind.WSVD, ModelKind.SVD, ModelKind.SVDPP, ModelKind.PMF)
    model_hyperparams: dict[ModelKind, HyperParams] = field(default_factory=dict)
    workers: int = 1

    def __post_init__(self):
        if not self.k_values or not self.reg_values or not self.models:
            raise ValueError("Sweep grid lists must be non-empty")
        object.__setattr__(self, "models", tuple(ModelKind.parse(kind) for kind in self.models))

    def cell_hyperparams(self, kind: ModelKind, k: int, reg: float) -> HyperParams:
        """Hyperparameters of one cell: the kind's settings with ``k`` and every regularizer replaced."""
        base = self.model_hyperparams.get(kind) or default_hyperparams(kind, epochs=self.base.hp.epochs)
        return replace(base, k=k, reg=Coefficients.uniform(reg))


class ConfigManager(UserDict):
    """Flat key-value configuration: packaged defaults, then a user file, then explicit overrides."""

    def __init__(self, path: str | Path | None = None, overrides: dict[str, Any] | None = None):
        super().__init__()
        self.data = self._read(DEFAULTS_PATH)
        if path is not None:
            self.load_config(path)
        if overrides:
            self.apply_overrides(overrides)

    @staticmethod
    def _read(path: Path) -> dict[str, Any]:
        with Path(path).open() as f:
            return json.load(f)

    def load_config(self, path: str | Path) -> dict[str, Any]:
        """Merge a user configuration file over the current values.

        :param path: JSON file holding any subset of the keys
        :return: The merged configuration dictionary
        """
        user_config = self._read(Path(path))
        if not isinstance(user_config, dict):
            raise ValueError(f"Config file {path} must hold a JSON object")
        user_config = self._migrate_config(copy.deepcopy(user_config))
        self._check_keys(user_config)
        self.data.update(user_config)
        logger.info(f"Loaded configuration from {path}")
        return self.data

    def apply_overrides(self, overrides: dict[str, Any]) -> None:
        """Set the given keys, ignoring ``None`` values (flags that were not passed)."""
        overrides = {key: value for key, value in overrides.items() if value is not None}
        self._check_keys(overrides)
        self.data.update(overrides)

    def save_config(self, path: str | Path) -> None:
        """Write the current configuration as a flat JSON object."""
        self.data["schema_version"] = CURRENT_SCHEMA_VERSION
        with Path(path).open("w") as f:
            json.dump(self.data, f, indent=4, default=str)

    def _check_keys(self, config: dict[str, Any]) -> None:
        unknown = set(config) - set(self._read(DEFAULTS_PATH))
        if unknown:
            raise ValueError(f"Unknown config keys: {sorted(unknown)}")

    @staticmethod
    def _detect_schema_version(config: dict[str, Any]) -> int:
        """Detect the schema version of a user configuration.

        :return: The detected schema version
        """
        if "schema_version" in config:
            return config["schema_version"]
        if {"learning_rate", "regularization", "factors"} & set(config):
            return 0
        return CURRENT_SCHEMA_VERSION

    def _migrate_config(self, config: dict[str, Any]) -> dict[str, Any]:
        """Migrate a user configuration to the current schema version."""
        schema_version = self._detect_schema_version(config)
        if schema_version > CURRENT_SCHEMA_VERSION:
            raise ValueError(f"Config schema version {schema_version} is newer than supported {CURRENT_SCHEMA_VERSION}")

        if schema_version == CURRENT_SCHEMA_VERSION:
            config["schema_version"] = schema_version
            return config

        logger.info(f"Migrating configuration from version {schema_version} to {CURRENT_SCHEMA_VERSION}")

        while schema_version < CURRENT_SCHEMA_VERSION:
            migration_func = MIGRATIONS[schema_version]
            logger.info(f"Applying migration from v{schema_version} to v{schema_version + 1}")
            try:
                config = migration_func(config)
            except Exception:
                logger.exception(f"Error migrating from v{schema_version} to v{schema_version + 1}")
                raise

            schema_version += 1
        return config

    def validate_settings(self, *, purpose: str = "run") -> None:
        """Validate that the settings needed for ``purpose`` are usable.

        :param purpose: ``run`` or ``sweep``
        :raises ValueError: Naming the first missing or invalid setting
        """
        if not self["dataset_path"]:
            raise ValueError("Dataset path not configured")
        if not self["output_dir"]:
            raise ValueError("Output directory not configured")
        DatasetFormat.get_format(self["format"])
        ModelKind.parse(self["model"])
        if self["model_encoding"] not in ENCODINGS:
            raise ValueError(f"Model encoding must be one of {ENCODINGS}")
        if purpose == "sweep":
            if not self["sweep_k"] or not self["sweep_reg"] or not self["sweep_models"]:
                raise ValueError("Sweep grid not configured")
            if int(self["workers"]) < 1:
                raise ValueError("Worker count must be positive")
        # Builds every dataclass so range checks run too.
        self.experiment_config()

    def _coefficients(self, prefix: str, defaults: Coefficients) -> Coefficients:
        values = [self.get(f"{prefix}_{block}") for block in BLOCKS]
        return Coefficients(*(default if value is None else float(value) for value, default in zip(values, defaults)))

    def hyperparams(self, kind: ModelKind | str | None = None) -> HyperParams:
        """Hyperparameters for ``kind`` (the configured model by default).

        Unset learning rates and regularizers fall back to the kind's defaults.
        """
        kind = ModelKind.parse(kind or self["model"])
        defaults = default_hyperparams(kind)
        return HyperParams(
            k=int(self["k"]),
            reg=self._coefficients("reg", defaults.reg),
            lr=self._coefficients("lr", defaults.lr),
            decay=float(self["decay"]),
            epochs=int(self["epochs"]),
            seed=int(self["seed"]),
            shuffle=bool(self["shuffle"]),
            sequential=bool(self["sequential_updates"]),
        )

    def experiment_config(self, kind: ModelKind | str | None = None) -> ExperimentConfig:
        kind = ModelKind.parse(kind or self["model"])
        return ExperimentConfig(
            dataset_path=Path(self["dataset_path"]),
            format=self["format"],
            model=kind,
            hp=self.hyperparams(kind),
            split=SplitSpec(float(self["train_fraction"]), int(self["split_seed"])),
            output_dir=Path(self["output_dir"]),
            delimiter=self["delimiter"],
            emit_curves=bool(self["emit_curves"]),
            clip_at_inference=bool(self["clip_at_inference"]),
            model_encoding=self["model_encoding"],
        )

    def sweep_grid(self) -> SweepGrid:
        models = tuple(ModelKind.parse(name) for name in self["sweep_models"])
        return SweepGrid(
            k_values=tuple(int(k) for k in self["sweep_k"]),
            reg_values=tuple(float(reg) for reg in self["sweep_reg"]),
            base=self.experiment_config(),
            models=models,
            model_hyperparams={kind: self.hyperparams(kind) for kind in models},
            workers=int(self["workers"]),
        )


__all__ = ["ConfigManager", "ExperimentConfig", "SweepGrid"]
