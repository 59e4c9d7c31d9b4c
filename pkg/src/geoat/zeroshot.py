"""Map scores from a large source label space onto target labels via word embeddings."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .embfile import EmbeddingFile, read_embedding_file
from .errors import AllTokensOov

log = logging.getLogger(__name__)

_SPLIT = re.compile(r"[\s_/()]+")


class EmbeddingTable:
    """word -> vector lookup backed by an :class:`EmbeddingFile`."""

    def __init__(self, table: EmbeddingFile):
        self.file = table
        norms = np.linalg.norm(table.data, axis=1) if len(table) else np.zeros(0)
        if np.any(norms == 0):
            bad = [k for k, n in zip(table.keys, norms) if n == 0]
            raise ValueError(f"zero vectors in embedding table: {bad[:5]}")

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        return cls(read_embedding_file(path))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "EmbeddingTable":
        return cls(EmbeddingFile.from_mapping(mapping))

    @property
    def dim(self) -> int:
        return self.file.dim

    def get(self, word: str) -> Optional[np.ndarray]:
        return self.file.vector(word) if word in self.file else None


def label_tokens(label: str) -> list[str]:
    return [t for t in _SPLIT.split(label.lower()) if t]


def label_embed(label: str, table: EmbeddingTable) -> np.ndarray:
    """Mean of the in-vocabulary token vectors of ``label``."""
    if not label.strip():
        raise ValueError("label must be non-empty")
    vecs = [v for v in (table.get(t) for t in label_tokens(label)) if v is not None]
    if not vecs:
        raise AllTokensOov(f"no token of {label!r} is in the embedding vocabulary")
    return np.mean(vecs, axis=0)


def _cos(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


@dataclass
class LabelMapping:
    source_labels: list
    target_labels: list
    assignment: dict  # source -> target or None
    similarity: dict  # source -> best cosine (None when not embeddable)
    threshold: float = 0.4
    unresolved: list = field(default_factory=list)

    def sources_for(self, target: str) -> list:
        return [s for s in self.source_labels if self.assignment.get(s) == target]

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"threshold": self.threshold, "targets": self.target_labels}) + "\n")
            for s in self.source_labels:
                rec = {"source": s, "target": self.assignment.get(s), "similarity": self.similarity.get(s)}
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def load(cls, path) -> "LabelMapping":
        """Read a mapping file: JSONL of (source, target, similarity) records.

        The optional first line may be a header carrying ``threshold`` and
        ``targets``; without it the targets are the distinct assigned labels.
        """
        lines = [json.loads(l) for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
        header = {}
        if lines and "source" not in lines[0]:
            header, lines = lines[0], lines[1:]
        sources = [r["source"] for r in lines]
        assignment = {r["source"]: r.get("target") for r in lines}
        similarity = {r["source"]: r.get("similarity") for r in lines}
        targets = header.get("targets") or list(dict.fromkeys(t for t in assignment.values() if t))
        return cls(sources, list(targets), assignment, similarity, header.get("threshold", 0.4))


def build_mapping(source_labels: Sequence[str], target_labels: Sequence[str],
                  table: EmbeddingTable, threshold: float = 0.4) -> LabelMapping:
    """Assign each source to its most cosine-similar target if it clears ``threshold``.

    Ties go to the earlier target.  Unembeddable targets are fatal;
    unembeddable sources stay unassigned.
    """
    tvecs = [label_embed(t, table) for t in target_labels]
    assignment, similarity, unresolved = {}, {}, []
    for s in source_labels:
        try:
            sv = label_embed(s, table)
        except AllTokensOov:
            log.warning("source label %r has no in-vocabulary tokens; left unassigned", s)
            assignment[s], similarity[s] = None, None
            unresolved.append(s)
            continue
        sims = [_cos(sv, tv) for tv in tvecs]
        best = int(np.argmax(sims))  # first maximum wins
        similarity[s] = sims[best]
        assignment[s] = target_labels[best] if sims[best] >= threshold else None
    return LabelMapping(list(source_labels), list(target_labels), assignment, similarity, threshold, unresolved)


@dataclass
class MappedScores:
    scores: np.ndarray
    uncovered: list


def map_scores(source_scores, mapping: LabelMapping) -> MappedScores:
    """Target score = max over its assigned sources; uncovered targets score 0.

    Accepts a single score vector (S,) or a batch (N, S).
    """
    s = np.asarray(source_scores, dtype=np.float64)
    squeeze = s.ndim == 1
    s = np.atleast_2d(s)
    if s.shape[1] != len(mapping.source_labels):
        raise ValueError(f"{s.shape[1]} source scores for {len(mapping.source_labels)} source labels")
    src_index = {lab: i for i, lab in enumerate(mapping.source_labels)}
    out = np.zeros((s.shape[0], len(mapping.target_labels)))
    uncovered = []
    for j, t in enumerate(mapping.target_labels):
        cols = [src_index[x] for x in mapping.sources_for(t)]
        if not cols:
            uncovered.append(t)
            continue
        out[:, j] = s[:, cols].max(axis=1)
    if uncovered:
        log.warning("%d target label(s) have no mapped source: %s", len(uncovered), uncovered)
    return MappedScores(out[0] if squeeze else out, uncovered)
