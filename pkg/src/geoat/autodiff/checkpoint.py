"""Parameter checkpoints.

Same spirit as the embedding file: a magic, a length-prefixed UTF-8 JSON
block holding the model config, then named float64 arrays::

    8 bytes  b"GEOCKP01"
    u32      config length, config JSON
    u32      count
    count x  (u32 name length, name, u32 ndim, ndim x u32 dims, float64 data)

A ``<file>.shapes.json`` sidecar lists every parameter shape for humans.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from ..errors import CheckpointError

MAGIC = b"GEOCKP01"
_U32 = struct.Struct("<I")


def encode_checkpoint(params: dict, config: dict) -> bytes:
    cfg = json.dumps(config, sort_keys=True, indent=1).encode("utf-8")
    parts = [MAGIC, _U32.pack(len(cfg)), cfg, _U32.pack(len(params))]
    for name in sorted(params):
        arr = np.asarray(params[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts += [_U32.pack(len(raw)), raw, _U32.pack(arr.ndim)]
        parts += [_U32.pack(d) for d in arr.shape]
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_checkpoint(buf: bytes) -> tuple[dict, dict]:
    if buf[:8] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {buf[:8]!r}")
    try:
        pos = 8
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        config = json.loads(buf[pos : pos + n].decode("utf-8"))
        pos += n
        (count,) = _U32.unpack_from(buf, pos)
        pos += 4
        params = {}
        for _ in range(count):
            (n,) = _U32.unpack_from(buf, pos)
            pos += 4
            name = buf[pos : pos + n].decode("utf-8")
            pos += n
            (ndim,) = _U32.unpack_from(buf, pos)
            pos += 4
            shape = struct.unpack_from(f"<{ndim}I", buf, pos)
            pos += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 8 * size > len(buf):
                raise CheckpointError(f"parameter {name!r} truncated")
            params[name] = np.frombuffer(buf, "<f8", size, pos).reshape(shape).astype(np.float64)
            pos += 8 * size
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes in checkpoint")
    return params, config


def save_checkpoint(path, params: dict, config: dict) -> str:
    """Write checkpoint + shape sidecar; returns the sha256 of the checkpoint bytes."""
    path = Path(path)
    blob = encode_checkpoint(params, config)
    path.write_bytes(blob)
    shapes = {k: list(np.shape(v)) for k, v in sorted(params.items())}
    Path(str(path) + ".shapes.json").write_text(json.dumps(shapes, indent=1) + "\n")
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path) -> tuple[dict, dict]:
    return decode_checkpoint(Path(path).read_bytes())


def checkpoint_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
