"""Model file format.

A model file is a UTF-8 header followed by the parameter blocks::

    weighted-svd-model v1
    kind: WSVD
    users: 943
    items: 1682
    factors: 15
    encoding: binary
    rating_scale: [1.0, 5.0]
    user_ids: ["196", ...]
    item_ids: ["242", ...]
    implicit_nnz: 0
    end

Blocks follow in this fixed order, each present only when the kind has it: mean, user_bias,
item_bias, user_factors, item_factors, weights, implicit_factors, user_seen, item_seen,
implicit_indptr, implicit_indices. In ``binary`` encoding they are raw little-endian arrays
(float64, seen masks as uint8, CSR arrays as int64) concatenated back to back; in ``text``
encoding each block is one line of space-separated values, floats written with ``repr`` so both
encodings round-trip exactly.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .models import ModelKind, ModelParams

logger = logging.getLogger(__name__)

MAGIC = "weighted-svd-model"
FORMAT_VERSION = 1
ENCODINGS = ("binary", "text")
_HEADER_END = "end"


class ModelFormatError(ValueError):
    """Base class for unreadable model files."""


class ModelVersionError(ModelFormatError):
    pass


class ModelShapeError(ModelFormatError):
    pass


class CorruptModelError(ModelFormatError):
    pass


class _Block(NamedTuple):
    name: str
    dtype: str
    shape: tuple[int, ...]


def _layout(kind: ModelKind, m: int, n: int, k: int, nnz: int) -> list[_Block]:
    blocks = []
    if kind.has_mean:
        blocks.append(_Block("mean", "<f8", ()))
    if kind.has_bias:
        blocks += [_Block("user_bias", "<f8", (m,)), _Block("item_bias", "<f8", (n,))]
    if kind.has_factors:
        blocks += [_Block("user_factors", "<f8", (m, k)), _Block("item_factors", "<f8", (n, k))]
    if kind.has_weights:
        blocks.append(_Block("weights", "<f8", (k,)))
    if kind.has_implicit:
        blocks.append(_Block("implicit_factors", "<f8", (n, k)))
    blocks += [_Block("user_seen", "u1", (m,)), _Block("item_seen", "u1", (n,))]
    if kind.has_implicit:
        blocks += [_Block("implicit_indptr", "<i8", (m + 1,)), _Block("implicit_indices", "<i8", (nnz,))]
    return blocks


def _block_values(params: ModelParams, name: str) -> np.ndarray:
    if name == "mean":
        return np.array(params.mean)
    if name == "implicit_indptr":
        return params.implicit[0]
    if name == "implicit_indices":
        return params.implicit[1]
    return getattr(params, name)


def _format_text(values: np.ndarray) -> str:
    flat = values.ravel()
    if values.dtype.kind == "f":
        return " ".join(repr(float(v)) for v in flat)
    return " ".join(str(int(v)) for v in flat)


def save_model(params: ModelParams, path: str | Path, *, encoding: str = "binary") -> None:
    """Write ``params`` to ``path``.

    :param params: Parameters to save
    :param path: Destination file
    :param encoding: ``binary`` or ``text``
    """
    if encoding not in ENCODINGS:
        raise ValueError(f"Unknown encoding {encoding!r}, expected one of {ENCODINGS}")
    nnz = int(params.implicit[1].shape[0]) if params.kind.has_implicit else 0
    header = [
        f"{MAGIC} v{FORMAT_VERSION}",
        f"kind: {params.kind.value}",
        f"users: {params.n_users}",
        f"items: {params.n_items}",
        f"factors: {params.k}",
        f"encoding: {encoding}",
        f"rating_scale: {json.dumps(list(params.rating_scale) if params.rating_scale else None)}",
        f"user_ids: {json.dumps(list(params.user_ids) if params.user_ids is not None else None)}",
        f"item_ids: {json.dumps(list(params.item_ids) if params.item_ids is not None else None)}",
        f"implicit_nnz: {nnz}",
        _HEADER_END,
    ]
    layout = _layout(params.kind, params.n_users, params.n_items, params.k, nnz)
    path = Path(path)
    with path.open("wb") as f:
        f.write(("\n".join(header) + "\n").encode("utf-8"))
        for block in layout:
            values = np.asarray(_block_values(params, block.name), dtype=block.dtype)
            if values.shape != block.shape:
                raise ValueError(f"Block {block.name} has shape {values.shape}, expected {block.shape}")
            if encoding == "binary":
                f.write(values.tobytes())
            else:
                f.write((_format_text(values) + "\n").encode("utf-8"))
    logger.info(f"Saved {params.kind.value} model to {path}")


def _read_header(f) -> dict[str, str]:
    first = f.readline().decode("utf-8", errors="replace").rstrip("\n")
    magic, _, version = first.partition(" v")
    if magic != MAGIC:
        raise CorruptModelError(f"Not a model file (first line {first[:40]!r})")
    if version != str(FORMAT_VERSION):
        raise ModelVersionError(f"Unsupported model format version {version!r}, expected {FORMAT_VERSION}")
    header = {}
    while True:
        raw = f.readline()
        if not raw:
            raise CorruptModelError("Header ends before the 'end' marker")
        line = raw.decode("utf-8", errors="replace").rstrip("\n")
        if line == _HEADER_END:
            return header
        key, sep, value = line.partition(": ")
        if not sep:
            raise CorruptModelError(f"Malformed header line {line!r}")
        header[key] = value


def _decode_ids(value: str | None, expected: int, what: str) -> tuple[str, ...] | None:
    try:
        ids = json.loads(value) if value is not None else None
    except ValueError as e:
        raise CorruptModelError(f"Invalid {what} id list: {e}") from None
    if ids is None:
        return None
    if len(ids) != expected:
        raise ModelShapeError(f"Header declares {expected} {what} but lists {len(ids)} ids")
    return tuple(str(raw) for raw in ids)


def _read_binary(payload: bytes, layout: list[_Block]) -> dict[str, np.ndarray]:
    expected = sum(np.dtype(block.dtype).itemsize * int(np.prod(block.shape)) for block in layout)
    if len(payload) != expected:
        raise CorruptModelError(f"Payload has {len(payload)} bytes, expected {expected}")
    values = {}
    offset = 0
    for block in layout:
        count = int(np.prod(block.shape))
        array = np.frombuffer(payload, dtype=block.dtype, count=count, offset=offset)
        values[block.name] = array.reshape(block.shape).copy()
        offset += array.nbytes
    return values


def _read_text(payload: bytes, layout: list[_Block]) -> dict[str, np.ndarray]:
    if not payload.endswith(b"\n"):
        raise CorruptModelError("Text payload does not end with a newline")
    try:
        lines = payload.decode("utf-8").split("\n")
    except UnicodeDecodeError as e:
        raise CorruptModelError(f"Text payload is not UTF-8: {e}") from None
    lines.pop()
    if len(lines) != len(layout):
        raise CorruptModelError(f"Found {len(lines)} blocks, expected {len(layout)}")
    values = {}
    for block, line in zip(layout, lines):
        tokens = line.split()
        count = int(np.prod(block.shape))
        if len(tokens) != count:
            raise ModelShapeError(f"Block {block.name} has {len(tokens)} values, expected {count}")
        try:
            parsed = [float(t) for t in tokens] if block.dtype == "<f8" else [int(t) for t in tokens]
        except ValueError as e:
            raise CorruptModelError(f"Block {block.name}: {e}") from None
        values[block.name] = np.array(parsed, dtype=block.dtype).reshape(block.shape)
    return values


def load_model(path: str | Path) -> ModelParams:
    """Read parameters written by :func:`save_model`.

    :raises ModelVersionError: If the file was written by another format version
    :raises ModelShapeError: If blocks disagree with the declared shapes
    :raises CorruptModelError: If the file is truncated or unparsable
    """
    path = Path(path)
    with path.open("rb") as f:
        header = _read_header(f)
        payload = f.read()

    try:
        kind = ModelKind.parse(header["kind"])
        m, n, k = int(header["users"]), int(header["items"]), int(header["factors"])
        encoding = header["encoding"]
        nnz = int(header.get("implicit_nnz", "0"))
        scale = json.loads(header.get("rating_scale", "null"))
    except (KeyError, ValueError) as e:
        raise CorruptModelError(f"Invalid header: {e}") from None
    if encoding not in ENCODINGS:
        raise CorruptModelError(f"Unknown encoding {encoding!r}")
    if min(m, n) < 0 or k < 0 or nnz < 0:
        raise ModelShapeError(f"Negative shape in header (users={m}, items={n}, factors={k})")
    user_ids = _decode_ids(header.get("user_ids"), m, "users")
    item_ids = _decode_ids(header.get("item_ids"), n, "items")

    layout = _layout(kind, m, n, k, nnz)
    values = _read_binary(payload, layout) if encoding == "binary" else _read_text(payload, layout)

    params = ModelParams(
        kind=kind,
        n_users=m,
        n_items=n,
        k=k,
        mean=float(values.pop("mean", 0.0)),
        user_seen=values.pop("user_seen").astype(bool),
        item_seen=values.pop("item_seen").astype(bool),
        user_ids=user_ids,
        item_ids=item_ids,
        rating_scale=tuple(scale) if scale is not None else None,
    )
    if kind.has_implicit:
        indptr, indices = values.pop("implicit_indptr"), values.pop("implicit_indices")
        if indptr[0] != 0 or indptr[-1] != nnz or np.any(np.diff(indptr) < 0):
            raise ModelShapeError("Implicit feedback index is inconsistent with its size")
        if nnz and (indices.min() < 0 or indices.max() >= n):
            raise ModelShapeError("Implicit feedback refers to unknown items")
        params.implicit = (indptr, indices)
    for name, block in values.items():
        setattr(params, name, block)
    logger.info(f"Loaded {kind.value} model from {path}")
    return params


__all__ = [
    "CorruptModelError",
    "ModelFormatError",
    "ModelShapeError",
    "ModelVersionError",
    "load_model",
    "save_model",
]
