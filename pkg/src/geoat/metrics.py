"""Multi-label tagging metrics: AP/mAP, ROC-AUC, micro-F1, per-class delta AP."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ClassMismatch, Degenerate, DegenerateClass, NoPositives

log = logging.getLogger(__name__)


def _check_pair(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise ValueError(f"scores {s.shape} and labels {y.shape} differ in shape")
    if y.size and not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    return s, y.astype(np.int64)


def average_precision(scores, labels) -> float:
    """Non-interpolated AP.

    Items are ranked by descending score; equal scores keep their original
    order (stable sort), so earlier indices rank higher.
    """
    s, y = _check_pair(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise NoPositives("average precision undefined without positives")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    precision_at_k = np.cumsum(hits) / np.arange(1, hits.size + 1)
    return float(precision_at_k[hits == 1].sum() / n_pos)


def per_class_ap(scores, labels) -> list:
    """AP per column; ``None`` where a class has no positives."""
    s, y = _check_pair(scores, labels)
    out = []
    for k in range(s.shape[1]):
        try:
            out.append(average_precision(s[:, k], y[:, k]))
        except NoPositives:
            out.append(None)
    return out


def mean_average_precision(aps: Sequence[Optional[float]]) -> tuple[float, int]:
    """Mean over defined APs and the number of excluded classes."""
    defined = [a for a in aps if a is not None]
    if not defined:
        raise NoPositives("no class has positives; mAP undefined")
    excluded = len(aps) - len(defined)
    if excluded:
        log.warning("mAP excludes %d class(es) without positives", excluded)
    return float(sum(defined) / len(defined)), excluded


def _binary_auc(s: np.ndarray, y: np.ndarray) -> float:
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    ranks = rankdata(s, method="average")
    r_pos = ranks[y == 1].sum()
    return float((r_pos - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


class MacroAuc(NamedTuple):
    value: float
    skipped: int


def roc_auc(scores, labels, averaging: str = "micro"):
    """Mann-Whitney AUC with midranks for ties.

    1-D inputs give a single binary AUC.  For (N, C) inputs ``micro`` pools
    every clip x class pair and ``macro`` averages per-class AUCs over classes
    that have both labels; the macro result reports how many were skipped.
    """
    s, y = _check_pair(scores, labels)
    if s.ndim == 1 or averaging == "micro":
        s, y = s.reshape(-1), y.reshape(-1)
        if y.sum() == 0 or y.sum() == y.size:
            raise Degenerate("ROC-AUC needs both positive and negative items")
        return _binary_auc(s, y)
    if averaging != "macro":
        raise ValueError(f"unknown averaging {averaging!r}")
    vals, skipped = [], 0
    for k in range(s.shape[1]):
        pos = y[:, k].sum()
        if pos == 0 or pos == y.shape[0]:
            skipped += 1
            continue
        vals.append(_binary_auc(s[:, k], y[:, k]))
    if not vals:
        raise DegenerateClass("no class has both positive and negative items")
    if skipped:
        log.warning("macro ROC-AUC skipped %d degenerate class(es)", skipped)
    return MacroAuc(float(np.mean(vals)), skipped)


class F1Score(NamedTuple):
    value: float
    tp: int
    fp: int
    fn: int
    degenerate: bool


def f1_micro(probs, labels, threshold: float = 0.5) -> F1Score:
    """Micro F1 over all clip x class pairs after thresholding probabilities."""
    p, y = _check_pair(probs, labels)
    pred = p >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    denom = 2 * tp + fp + fn
    if denom == 0:
        return F1Score(0.0, 0, 0, 0, True)
    return F1Score(2 * tp / denom, tp, fp, fn, False)


@dataclass
class EvalReport:
    class_names: list
    per_class_ap: list
    map: float
    n_excluded: int
    micro_auc: Optional[float]
    macro_auc: Optional[float]
    macro_auc_skipped: int
    f1_micro: float
    f1_threshold: float = 0.5
    f1_degenerate: bool = False
    seed: Optional[int] = None
    variant: Optional[str] = None
    n_clips: int = 0
    delta_ap: Optional[list] = None
    delta_baseline: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(**d)

    def save(self, out_dir, stem: str = "report"):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.json").write_text(json.dumps(self.to_json(), indent=1) + "\n")
        with open(out / f"{stem}_per_class_ap.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "ap"])
            for name, ap in zip(self.class_names, self.per_class_ap):
                w.writerow([name, "" if ap is None else f"{ap:.10f}"])

    @classmethod
    def load(cls, path) -> "EvalReport":
        return cls.from_json(json.loads(Path(path).read_text()))


def evaluate(probs, labels, class_names=None, threshold: float = 0.5, seed=None, variant=None) -> EvalReport:
    p, y = _check_pair(probs, labels)
    if p.ndim != 2:
        raise ValueError("evaluate expects (N, C) arrays")
    names = list(class_names) if class_names is not None else [f"class_{k}" for k in range(p.shape[1])]
    if len(names) != p.shape[1]:
        raise ClassMismatch(f"{len(names)} class names for {p.shape[1]} columns")
    aps = per_class_ap(p, y)
    mAP, excluded = mean_average_precision(aps)
    try:
        micro = roc_auc(p, y, "micro")
    except Degenerate:
        micro = None
    try:
        macro = roc_auc(p, y, "macro")
        macro_v, skipped = macro.value, macro.skipped
    except Degenerate:
        macro_v, skipped = None, p.shape[1]
    f1 = f1_micro(p, y, threshold)
    return EvalReport(
        class_names=names,
        per_class_ap=aps,
        map=mAP,
        n_excluded=excluded,
        micro_auc=micro,
        macro_auc=macro_v,
        macro_auc_skipped=skipped,
        f1_micro=f1.value,
        f1_threshold=threshold,
        f1_degenerate=f1.degenerate,
        seed=seed,
        variant=variant,
        n_clips=int(p.shape[0]),
    )


@dataclass
class DeltaAP:
    class_names: list
    delta: list
    groups: dict
    threshold: float = 0.05

    def to_json(self) -> dict:
        return asdict(self)


def classify_delta(d: Optional[float], threshold: float = 0.05) -> str:
    if d is None:
        return "undefined"
    if d > threshold:
        return "benefiting"
    if d < -threshold:
        return "nonbenefiting"
    return "neutral"


def per_class_delta(report_a: EvalReport, report_b: EvalReport, threshold: float = 0.05) -> DeltaAP:
    """AP of ``report_a`` minus AP of ``report_b`` per class, grouped at +-threshold."""
    if list(report_a.class_names) != list(report_b.class_names):
        raise ClassMismatch("reports cover different class sets")
    delta = [
        None if a is None or b is None else a - b
        for a, b in zip(report_a.per_class_ap, report_b.per_class_ap)
    ]
    groups = {"benefiting": [], "neutral": [], "nonbenefiting": [], "undefined": []}
    for name, d in zip(report_a.class_names, delta):
        groups[classify_delta(d, threshold)].append(name)
    return DeltaAP(list(report_a.class_names), delta, groups, threshold)
