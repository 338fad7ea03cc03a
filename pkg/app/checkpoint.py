"""Checkpoint files: magic, header length, JSON header, float32 payload.

Layout (all integers little-endian):

    8 bytes   b"QRELUCKP"
    8 bytes   uint64 header length
    n bytes   UTF-8 JSON CheckpointHeader
    rest      float32 tensors in manifest order
"""

from __future__ import annotations

import json
import logging
import math
import struct
from pathlib import Path

import numpy as np
from pydantic import ValidationError

from app.errors import CheckpointCorruptError, CheckpointError, CheckpointVersionError
from app.kernels.tensor import DTYPES
from app.network import PARAM_ORDER, Network, parameter_shapes
from app.schemas import CheckpointHeader, TensorEntry

logger = logging.getLogger("checkpoint")

MAGIC = b"QRELUCKP"
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype("<f4")
_LENGTH = struct.Struct("<Q")


def encode(net: Network) -> bytes:
    if net.config.dtype != "float32":
        logger.warning(
            f"Network runs in {net.config.dtype}; checkpoint stores float32 values"
        )
    entries: list[TensorEntry] = []
    chunks: list[bytes] = []
    offset = 0
    for name in PARAM_ORDER:
        data = np.ascontiguousarray(net.params[name], dtype=PAYLOAD_DTYPE).tobytes()
        entries.append(
            TensorEntry(
                name=name,
                dims=list(net.params[name].shape),
                offset=offset,
                nbytes=len(data),
            )
        )
        chunks.append(data)
        offset += len(data)

    header = CheckpointHeader(
        format_version=FORMAT_VERSION,
        model=net.config,
        seed=net.seed,
        tensors=entries,
    ).model_dump_json().encode()
    return MAGIC + _LENGTH.pack(len(header)) + header + b"".join(chunks)


def decode(blob: bytes) -> Network:
    prefix = len(MAGIC) + _LENGTH.size
    if len(blob) < prefix or not blob.startswith(MAGIC):
        raise CheckpointCorruptError("Not a checkpoint file (bad magic)")
    (header_len,) = _LENGTH.unpack_from(blob, len(MAGIC))
    if len(blob) < prefix + header_len:
        raise CheckpointCorruptError("Checkpoint header is truncated")
    raw_header = blob[prefix : prefix + header_len]

    try:
        version = json.loads(raw_header).get("format_version")
    except (json.JSONDecodeError, UnicodeDecodeError, AttributeError) as e:
        raise CheckpointCorruptError(f"Unreadable checkpoint header: {e}") from e
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"Checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    try:
        header = CheckpointHeader.model_validate_json(raw_header)
    except ValidationError as e:
        raise CheckpointCorruptError(f"Invalid checkpoint header: {e}") from e

    payload = memoryview(blob)[prefix + header_len :]
    expected = sum(entry.nbytes for entry in header.tensors)
    if len(payload) < expected:
        raise CheckpointCorruptError(
            f"Checkpoint payload is truncated: {len(payload)} of {expected} bytes"
        )
    if len(payload) > expected:
        raise CheckpointCorruptError(
            f"Checkpoint payload has {len(payload) - expected} trailing bytes"
        )

    shapes = parameter_shapes(header.model)
    names = [entry.name for entry in header.tensors]
    if sorted(names) != sorted(shapes):
        raise CheckpointCorruptError(f"Manifest tensors {names} do not match the model")

    dtype = DTYPES[header.model.dtype]
    params = {}
    offset = 0
    for entry in header.tensors:
        if tuple(entry.dims) != shapes[entry.name]:
            raise CheckpointCorruptError(
                f"{entry.name}: manifest dims {entry.dims} disagree with the model "
                f"({list(shapes[entry.name])})"
            )
        if entry.offset != offset or entry.nbytes != math.prod(entry.dims) * PAYLOAD_DTYPE.itemsize:
            raise CheckpointCorruptError(f"{entry.name}: inconsistent offset or byte count")
        values = np.frombuffer(payload, dtype=PAYLOAD_DTYPE, count=math.prod(entry.dims), offset=offset)
        params[entry.name] = values.reshape(entry.dims).astype(dtype)
        offset += entry.nbytes
    return Network(header.model, params, header.seed)


def save(net: Network, path: Path | str) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode(net))
    except OSError as e:
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}") from e
    logger.info(f"Saved checkpoint to {path}")
    return path


def load(path: Path | str) -> Network:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    return decode(blob)


__all__ = ["FORMAT_VERSION", "MAGIC", "decode", "encode", "load", "save"]
