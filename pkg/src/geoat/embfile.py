"""Binary table of named float32 vectors.

Layout (all integers little-endian)::

    8 bytes   magic  b"GEOEMB01"
    u32       dim
    u32       count
    count x   (u32 byte length, UTF-8 key)
    count*dim float32 values, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadMagic, DuplicateKey, EmbeddingFileError, MissingEmbedding, TruncatedFile

MAGIC = b"GEOEMB01"
_U32 = struct.Struct("<I")


@dataclass
class EmbeddingFile:
    keys: list
    data: np.ndarray

    def __post_init__(self):
        self.keys = list(self.keys)
        self.data = np.ascontiguousarray(self.data, dtype="<f4")
        if self.data.ndim != 2 or self.data.shape[0] != len(self.keys):
            raise EmbeddingFileError(
                f"data shape {self.data.shape} does not match {len(self.keys)} keys"
            )
        if len(set(self.keys)) != len(self.keys):
            seen = set()
            dup = next(k for k in self.keys if k in seen or seen.add(k))
            raise DuplicateKey(f"duplicate key {dup!r}")
        self._index = {k: i for i, k in enumerate(self.keys)}

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    def __len__(self):
        return len(self.keys)

    def __contains__(self, key):
        return key in self._index

    def vector(self, key: str) -> np.ndarray:
        try:
            return self.data[self._index[key]].astype(np.float64)
        except KeyError:
            raise MissingEmbedding(f"no embedding for {key!r}") from None

    @classmethod
    def from_mapping(cls, mapping: dict, dim: int | None = None) -> "EmbeddingFile":
        keys = list(mapping)
        if not keys:
            return cls([], np.zeros((0, dim or 0), dtype="<f4"))
        data = np.stack([np.asarray(mapping[k], dtype=np.float64) for k in keys])
        return cls(keys, data)

    def __eq__(self, other):
        if not isinstance(other, EmbeddingFile):
            return NotImplemented
        return (
            self.keys == other.keys
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


def encode_embedding_file(table: EmbeddingFile) -> bytes:
    parts = [MAGIC, _U32.pack(table.dim), _U32.pack(len(table))]
    for key in table.keys:
        raw = key.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
    parts.append(table.data.astype("<f4").tobytes())
    return b"".join(parts)


def decode_embedding_file(buf: bytes) -> EmbeddingFile:
    if len(buf) < 16:
        if buf[: len(MAGIC)] != MAGIC[: len(buf)]:
            raise BadMagic(f"expected {MAGIC!r}, got {buf[:8]!r}")
        raise TruncatedFile(f"header needs 16 bytes, file has {len(buf)}")
    if buf[:8] != MAGIC:
        raise BadMagic(f"expected {MAGIC!r}, got {buf[:8]!r}")
    dim = _U32.unpack_from(buf, 8)[0]
    count = _U32.unpack_from(buf, 12)[0]
    pos = 16
    keys = []
    for i in range(count):
        if pos + 4 > len(buf):
            raise TruncatedFile(f"key #{i} length prefix past end of file")
        n = _U32.unpack_from(buf, pos)[0]
        pos += 4
        if pos + n > len(buf):
            raise TruncatedFile(f"key #{i} ({n} bytes) past end of file")
        try:
            keys.append(buf[pos : pos + n].decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise EmbeddingFileError(f"key #{i} is not UTF-8: {exc}") from None
        pos += n
    need = count * dim * 4
    if len(buf) - pos < need:
        raise TruncatedFile(
            f"header declares {count}x{dim} floats ({need} bytes), payload has {len(buf) - pos}"
        )
    if len(buf) - pos > need:
        raise EmbeddingFileError(f"{len(buf) - pos - need} trailing bytes after payload")
    data = np.frombuffer(buf, dtype="<f4", count=count * dim, offset=pos).reshape(count, dim)
    return EmbeddingFile(keys, data.copy())


def write_embedding_file(path, table: EmbeddingFile):
    Path(path).write_bytes(encode_embedding_file(table))


def read_embedding_file(path) -> EmbeddingFile:
    return decode_embedding_file(Path(path).read_bytes())
