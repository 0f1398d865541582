"""Flat binary model checkpoints.

Format (little-endian throughout):

    magic b"PSGD1"
    repeated per layer, in layer order:
        u32  layer index
        u64  parameter count
        f64  raw parameter values, param count of them

The format is self-delimiting, so files round-trip without a separate
shape description; loaders cross-check the recorded layer indices.
"""

from __future__ import annotations

import io
import struct
from typing import Sequence

import numpy as np

from ..buffers import Model
from ..errors import FormatError

MAGIC = b"PSGD1"
_LAYER_HEADER = struct.Struct("<IQ")


def serialize_model(layers: Sequence[np.ndarray]) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    for l, values in enumerate(layers):
        arr = np.ascontiguousarray(values, dtype="<f8")
        if arr.ndim != 1:
            raise FormatError(f"layer {l} is not a flat vector")
        out.write(_LAYER_HEADER.pack(l, arr.size))
        out.write(arr.tobytes())
    return out.getvalue()


def load_model_bytes(blob: bytes) -> Model:
    if blob[: len(MAGIC)] != MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:len(MAGIC)]!r}")
    pos = len(MAGIC)
    layers = []
    while pos < len(blob):
        if pos + _LAYER_HEADER.size > len(blob):
            raise FormatError("truncated checkpoint: partial layer header")
        index, count = _LAYER_HEADER.unpack_from(blob, pos)
        pos += _LAYER_HEADER.size
        if index != len(layers):
            raise FormatError(f"layer {len(layers)} recorded with index {index}")
        nbytes = count * 8
        if pos + nbytes > len(blob):
            raise FormatError(f"truncated checkpoint: layer {index} shorter than declared")
        layers.append(np.frombuffer(blob, dtype="<f8", count=count, offset=pos).astype(np.float64))
        pos += nbytes
    if not layers:
        raise FormatError("checkpoint holds no layers")
    return Model(layers=layers, iteration=0)


def save_model(layers: Sequence[np.ndarray], path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_model(layers))


def load_model(path: str) -> Model:
    with open(path, "rb") as fh:
        return load_model_bytes(fh.read())
