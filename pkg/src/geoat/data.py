"""Clip manifests and multi-label iterative stratified splitting."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import InfeasibleSplit, ManifestError
from .geo import GeoPoint


@dataclass
class ClipRecord:
    id: str
    audio_path: str
    labels: list
    geo: Optional[GeoPoint] = None
    gsc_tags: Optional[list] = None
    gsc_embedding_ref: Optional[str] = None

    def __post_init__(self):
        if not self.id:
            raise ManifestError("record id must be non-empty")
        labels = [int(v) for v in self.labels]
        if not labels or any(v not in (0, 1) for v in labels):
            raise ManifestError(f"record {self.id}: labels must be a non-empty 0/1 vector")
        self.labels = labels
        if isinstance(self.geo, (list, tuple)):
            self.geo = GeoPoint(*self.geo)
        elif isinstance(self.geo, dict):
            self.geo = GeoPoint(self.geo["lat"], self.geo["lon"])

    @property
    def has_gsc(self) -> bool:
        return self.gsc_tags is not None or self.gsc_embedding_ref is not None or self.geo is not None

    def to_json(self) -> dict:
        d = {"id": self.id, "audio_path": self.audio_path, "labels": self.labels}
        if self.geo is not None:
            d["geo"] = {"lat": self.geo.lat, "lon": self.geo.lon}
        if self.gsc_tags is not None:
            d["gsc_tags"] = list(self.gsc_tags)
        if self.gsc_embedding_ref is not None:
            d["gsc_embedding_ref"] = self.gsc_embedding_ref
        return d

    @classmethod
    def from_json(cls, d: dict) -> "ClipRecord":
        try:
            return cls(
                id=str(d["id"]),
                audio_path=d["audio_path"],
                labels=d["labels"],
                geo=d.get("geo"),
                gsc_tags=d.get("gsc_tags"),
                gsc_embedding_ref=d.get("gsc_embedding_ref"),
            )
        except KeyError as exc:
            raise ManifestError(f"record missing field {exc}") from None


def read_manifest(path) -> list[ClipRecord]:
    records = []
    ids = set()
    n_labels = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = ClipRecord.from_json(json.loads(line))
            except (json.JSONDecodeError, ManifestError, ValueError) as exc:
                raise ManifestError(f"{path}:{lineno}: {exc}") from None
            if rec.id in ids:
                raise ManifestError(f"{path}:{lineno}: duplicate id {rec.id!r}")
            if n_labels is None:
                n_labels = len(rec.labels)
            elif len(rec.labels) != n_labels:
                raise ManifestError(f"{path}:{lineno}: {len(rec.labels)} labels, expected {n_labels}")
            ids.add(rec.id)
            records.append(rec)
    return records


def write_manifest(path, records: Sequence[ClipRecord]):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def label_matrix(records: Sequence[ClipRecord]) -> np.ndarray:
    return np.array([r.labels for r in records], dtype=np.int64)


@dataclass
class SplitSpec:
    fractions: tuple = (0.70, 0.15, 0.15)
    seed: int = 0
    refine: bool = True

    def __post_init__(self):
        self.fractions = tuple(float(f) for f in self.fractions)
        if len(self.fractions) != 3 or any(f <= 0 for f in self.fractions):
            raise ValueError(f"need three positive fractions, got {self.fractions}")
        if abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError(f"fractions must sum to 1, got {sum(self.fractions)}")


@dataclass
class Split:
    train: list
    val: list
    test: list
    seed: int = 0
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"seed": self.seed, "train": self.train, "val": self.val, "test": self.test, "notes": self.notes}

    @classmethod
    def from_json(cls, d: dict) -> "Split":
        return cls(list(d["train"]), list(d["val"]), list(d["test"]), d.get("seed", 0), d.get("notes", []))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "Split":
        return cls.from_json(json.loads(Path(path).read_text()))


def _argmax_ties(values: np.ndarray, among: np.ndarray) -> np.ndarray:
    cand = among[values[among] == values[among].max()]
    return cand


def iterative_stratified_split(records: Sequence[ClipRecord], spec: SplitSpec = SplitSpec()) -> Split:
    """Multi-label iterative stratification into train/val/test.

    Repeatedly take the label with the fewest unassigned positives and hand
    each of its clips to the subset that still wants that label most; ties go
    to the subset with the most remaining capacity, then to a seeded coin.
    """
    Y = label_matrix(records)
    n, L = Y.shape
    counts = Y.sum(axis=0)
    bad = [int(l) for l in np.flatnonzero(counts < 3)]
    if bad:
        raise InfeasibleSplit(
            f"labels {bad} have fewer than 3 positives and cannot appear in every subset", bad
        )
    rng = np.random.default_rng(spec.seed)
    fr = np.asarray(spec.fractions)
    cap = fr * n
    demand = fr[:, None] * counts[None, :].astype(np.float64)  # (3, L)
    assign = np.full(n, -1, dtype=np.int64)
    order = rng.permutation(n)
    subsets = np.arange(3)

    def place(i, pool):
        j = int(rng.choice(pool)) if len(pool) > 1 else int(pool[0])
        assign[i] = j
        cap[j] -= 1
        demand[j] -= Y[i]

    remaining = Y.copy()
    while True:
        left = remaining.sum(axis=0)
        active = np.flatnonzero(left > 0)
        if active.size == 0:
            break
        lab = active[np.argmin(left[active])]
        for i in order:
            if assign[i] >= 0 or not Y[i, lab]:
                continue
            pool = _argmax_ties(demand[:, lab], subsets)
            if len(pool) > 1:
                pool = _argmax_ties(cap, pool)
            place(i, pool)
            remaining[i] = 0
    for i in order:
        if assign[i] < 0:
            place(i, _argmax_ties(cap, subsets))

    notes = _ensure_coverage(Y, assign)
    if spec.refine:
        _refine_by_swaps(Y, assign, rng)
    ids = [r.id for r in records]
    parts = [[ids[i] for i in range(n) if assign[i] == j] for j in range(3)]
    return Split(*parts, seed=spec.seed, notes=notes)


def _ensure_coverage(Y: np.ndarray, assign: np.ndarray) -> list:
    """Move single clips so every label has a positive in val and test."""
    notes = []
    for lab in range(Y.shape[1]):
        for target in (2, 1):
            if np.any((assign == target) & (Y[:, lab] == 1)):
                continue
            have = np.array([np.sum((assign == j) & (Y[:, lab] == 1)) for j in range(3)])
            donor = int(np.argmax(have))
            if have[donor] < 2:
                continue
            cands = np.flatnonzero((assign == donor) & (Y[:, lab] == 1))
            # prefer the clip with the fewest other labels to limit side effects
            i = int(cands[np.argmin(Y[cands].sum(axis=1))])
            assign[i] = target
            notes.append(f"moved clip #{i} to subset {target} to cover label {lab}")
    return notes


def _refine_by_swaps(Y: np.ndarray, assign: np.ndarray, rng: np.random.Generator, max_passes: int = 50):
    """Swap clips between subsets while that lowers the squared prevalence error.

    Swaps keep subset sizes fixed and never empty a label from a subset that
    had it, so the coverage guarantee survives.  Greedy passes end once no
    clip has an improving partner.
    """
    Yf = Y.astype(np.float64)
    prev = Yf.mean(axis=0)
    sizes = np.array([np.sum(assign == j) for j in range(3)], dtype=np.float64)
    if np.any(sizes == 0):
        return
    w = 1.0 / sizes**2
    C = np.stack([Yf[assign == j].sum(axis=0) for j in range(3)])
    for _ in range(max_passes):
        improved = False
        for i in rng.permutation(len(assign)):
            a = assign[i]
            best = (-1e-12, None)
            for b in range(3):
                if b == a:
                    continue
                ks = np.flatnonzero(assign == b)
                delta = Yf[ks] - Yf[i]  # label change of subset a; b sees the negative
                ea, eb = C[a] - sizes[a] * prev, C[b] - sizes[b] * prev
                sq = np.sum(delta**2, axis=1)
                gain = w[a] * (2 * delta @ ea + sq) + w[b] * (-2 * delta @ eb + sq)
                ok = np.all((C[a] + delta >= 1) | (C[a] < 1), axis=1)
                ok &= np.all((C[b] - delta >= 1) | (C[b] < 1), axis=1)
                gain[~ok] = np.inf
                k = int(np.argmin(gain))
                if gain[k] < best[0]:
                    best = (gain[k], (b, ks[k]))
            if best[1] is not None:
                b, k = best[1]
                d = Yf[k] - Yf[i]
                C[a] += d
                C[b] -= d
                assign[i], assign[k] = b, a
                improved = True
        if not improved:
            break


def subset_records(records: Sequence[ClipRecord], ids: Sequence[str]) -> list[ClipRecord]:
    by_id = {r.id: r for r in records}
    return [by_id[i] for i in ids]
