"""POI entities -> descriptor strings -> fixed-length GSC vector."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .embfile import EmbeddingFile
from .errors import DimMismatch, EmptyDescriptor, MissingEmbedding

DEFAULT_DIM = 768

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF
_TOKEN = re.compile(r"[^\W_]+")


def _normalize(s: str) -> str:
    return " ".join(s.replace("_", " ").lower().split())


@dataclass(frozen=True)
class Descriptor:
    text: str

    @classmethod
    def from_pair(cls, key: str, value: str) -> "Descriptor":
        return cls(f"{_normalize(key)}: {_normalize(value)}")

    @classmethod
    def parse(cls, text: str) -> "Descriptor":
        key, sep, value = text.partition(":")
        if not sep:
            raise ValueError(f"descriptor {text!r} has no ':' separator")
        return cls.from_pair(key, value)

    def __str__(self):
        return self.text


def descriptors_from_entities(entities: Iterable, dedupe: bool = False) -> list[Descriptor]:
    out = [Descriptor.from_pair(e.matched_key, e.matched_value) for e in entities]
    if dedupe:
        out = list(dict.fromkeys(out))
    return out


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * _FNV_PRIME) & _MASK64
    return h


def hash_embed(d: Union[Descriptor, str], dim: int = DEFAULT_DIM) -> np.ndarray:
    """Signed feature hashing of the descriptor tokens, L2-normalised.

    Bucket index comes from the low 32 bits of the FNV-1a hash, the sign from
    bit 63, so the two never share bits.
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    text = d.text if isinstance(d, Descriptor) else d
    tokens = tokenize(text)
    if not tokens:
        raise EmptyDescriptor(f"no tokens in descriptor {text!r}")
    vec = np.zeros(dim)
    for tok in tokens:
        h = fnv1a64(tok.encode("utf-8"))
        idx = (h & 0xFFFFFFFF) % dim
        vec[idx] += -1.0 if h >> 63 else 1.0
    norm = np.linalg.norm(vec)
    # colliding +1/-1 can cancel completely
    return vec / norm if norm > 0 else vec


@dataclass
class GscVector:
    values: np.ndarray
    source: str = "hashed"
    empty_context: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size == 0:
            raise DimMismatch(f"GSC vector must be 1-D and non-empty, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("GSC vector has non-finite entries")
        if self.source not in ("hashed", "imported"):
            raise ValueError(f"unknown source {self.source!r}")
        if self.empty_context and np.any(self.values):
            raise ValueError("empty_context vector must be all zero")

    @property
    def dim(self) -> int:
        return int(self.values.size)


def mean_pool(vectors: Sequence, dim: int, source: str = "hashed") -> GscVector:
    if len(vectors) == 0:
        return GscVector(np.zeros(dim), source=source, empty_context=True)
    arr = []
    for i, v in enumerate(vectors):
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (dim,):
            raise DimMismatch(f"vector #{i} has shape {v.shape}, expected ({dim},)")
        arr.append(v)
    return GscVector(np.mean(np.stack(arr), axis=0), source=source)


@dataclass(frozen=True)
class HashedEncoder:
    dim: int = DEFAULT_DIM
    source = "hashed"

    def embed(self, d: Descriptor) -> np.ndarray:
        return hash_embed(d, self.dim)


class ImportedEncoder:
    """Looks descriptor texts up in a precomputed embedding table."""

    source = "imported"

    def __init__(self, table: EmbeddingFile):
        self.table = table

    @property
    def dim(self) -> int:
        return self.table.dim

    def embed(self, d: Descriptor) -> np.ndarray:
        if d.text not in self.table:
            raise MissingEmbedding(f"no embedding for descriptor {d.text!r}")
        return self.table.vector(d.text)


def encode_descriptors(descriptors: Sequence[Descriptor], encoder) -> GscVector:
    vecs = [encoder.embed(d) for d in descriptors]
    return mean_pool(vecs, encoder.dim, source=encoder.source)


def encode_gsc(entities: Iterable, encoder=None, dedupe: bool = False) -> GscVector:
    encoder = encoder if encoder is not None else HashedEncoder()
    return encode_descriptors(descriptors_from_entities(entities, dedupe=dedupe), encoder)
