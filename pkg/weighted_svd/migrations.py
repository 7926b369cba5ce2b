"""Configuration schema migrations."""

from typing import Any, Callable

BLOCKS = ("w", "p", "q", "user_bias", "item_bias")

# Type definition for migration functions
MigrationFunction = Callable[[dict[str, Any]], dict[str, Any]]


def v1(config: dict[str, Any]) -> dict[str, Any]:
    """Expand the scalar learning rate and regularization into per-block settings.

    - learning_rate -> lr_w, lr_p, lr_q, lr_user_bias, lr_item_bias
    - regularization -> reg_w, reg_p, reg_q, reg_user_bias, reg_item_bias
    - factors -> k
    - Add schema_version
    """
    for old_key, prefix in (("learning_rate", "lr"), ("regularization", "reg")):
        if old_key in config:
            value = config.pop(old_key)
            for block in BLOCKS:
                config.setdefault(f"{prefix}_{block}", value)

    if "factors" in config:
        config.setdefault("k", config.pop("factors"))

    config["schema_version"] = 1
    return config


# Mapping of version numbers to migration functions
MIGRATIONS: list[MigrationFunction] = [
    v1,
]

# Current schema version
CURRENT_SCHEMA_VERSION = 1
