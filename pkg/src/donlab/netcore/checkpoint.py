"""Binary checkpoint files.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header
(architecture, descriptor dimension, step count, tensor names and shapes,
free-form metadata), then each tensor as little-endian float32 in header
order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..errors import ChecksumMismatch, ParseError
from .model import Architecture, ModelParams

MAGIC = b"DONCKPT1"


def save_checkpoint(path, params: ModelParams, step: int = 0, meta: dict | None = None) -> None:
    header = {
        "architecture": params.arch.to_dict(),
        "descriptor_dim": params.arch.descriptor_dim,
        "step": int(step),
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in params.arrays().items()],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for arr in params.arrays().values():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    """Returns (params, header); params come back as float32."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise ParseError("not a checkpoint file", path, 0)
    if len(raw) < 12:
        raise ParseError("truncated header", path, 8)
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ParseError(f"bad header: {e}", path, 12) from e
    arch = Architecture.from_dict(header["architecture"])
    offset = 12 + n
    arrays = {}
    for spec in header["tensors"]:
        shape = tuple(spec["shape"])
        nbytes = 4 * int(np.prod(shape))
        if offset + nbytes > len(raw):
            raise ChecksumMismatch(f"{path}: tensor {spec['name']} truncated")
        arrays[spec["name"]] = np.frombuffer(raw, dtype="<f4", count=nbytes // 4, offset=offset).reshape(shape).astype(np.float32)
        offset += nbytes
    if offset != len(raw):
        raise ParseError("trailing bytes after last tensor", path, offset)
    return ModelParams.from_arrays(arch, arrays), header
