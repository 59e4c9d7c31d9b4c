"""Agreement and significance statistics for annotation studies and model comparisons."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import AllZeroDifferences, DegenerateData, DegenerateVariance, NoItems

MISSING_MARKERS = ("", "na", "nan", "?", "-")


@dataclass
class AnnotationMatrix:
    """Raters x items, with ``nan`` marking a missing rating."""

    values: np.ndarray
    item_ids: Optional[list] = None
    rater_ids: Optional[list] = None

    def __post_init__(self):
        self.values = np.array(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"annotation matrix must be 2-D, got {self.values.shape}")
        if self.values.shape[0] < 2:
            raise ValueError("need at least two raters")

    @property
    def n_raters(self) -> int:
        return self.values.shape[0]

    @property
    def n_items(self) -> int:
        return self.values.shape[1]

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.values)

    @classmethod
    def from_csv(cls, path) -> "AnnotationMatrix":
        """Rows are raters (first column = rater id), header row holds item ids."""
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise NoItems(f"{path} is empty")
        header, body = rows[0], rows[1:]
        items = header[1:]
        vals, raters = [], []
        for row in body:
            raters.append(row[0])
            cells = row[1:]
            if len(cells) != len(items):
                raise ValueError(f"rater {row[0]!r}: {len(cells)} cells for {len(items)} items")
            vals.append([np.nan if c.strip().lower() in MISSING_MARKERS else float(c) for c in cells])
        return cls(np.array(vals), items, raters)

    def to_csv(self, path):
        items = self.item_ids or [f"item{i}" for i in range(self.n_items)]
        raters = self.rater_ids or [f"rater{r}" for r in range(self.n_raters)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rater", *items])
            for rid, row in zip(raters, self.values):
                w.writerow([rid, *("" if np.isnan(v) else f"{v:g}" for v in row)])


@dataclass
class ConsensusLabels:
    labels: np.ndarray
    threshold: float
    positives: np.ndarray
    raters: np.ndarray


def majority_vote(m: AnnotationMatrix, threshold: float = 0.5) -> ConsensusLabels:
    """Item is positive iff positives >= ceil(threshold * raters who rated it).

    With 10 raters and threshold 0.5 this is the ">= 5 of 10" rule.
    """
    obs = m.observed
    pos = np.sum((m.values == 1) & obs, axis=0)
    n = obs.sum(axis=0)
    # guard against 0.7 * 10 = 7.000000000000001 style round-up
    need = np.ceil(threshold * n - 1e-9)
    labels = ((n > 0) & (pos >= need)).astype(np.int64)
    return ConsensusLabels(labels, threshold, pos, n)


class Agreement(NamedTuple):
    per_rater: list
    mean: float


def percent_agreement(m: AnnotationMatrix, consensus: ConsensusLabels) -> Agreement:
    if m.n_items == 0:
        raise NoItems("no items to compare")
    obs = m.observed
    per = []
    for r in range(m.n_raters):
        mask = obs[r]
        if not mask.any():
            per.append(float("nan"))
            continue
        per.append(float(np.mean(m.values[r, mask] == consensus.labels[mask])))
    valid = [p for p in per if not math.isnan(p)]
    if not valid:
        raise NoItems("no rater has any observed item")
    return Agreement(per, float(np.mean(valid)))


@dataclass
class AlphaResult:
    """Krippendorff's alpha, or a tagged no-variation outcome."""

    alpha: Optional[float]
    d_observed: float
    d_expected: float
    n_pairable: int
    n_items: int
    no_variation: bool = False

    @property
    def value(self) -> float:
        if self.no_variation:
            raise DegenerateData("only one category observed; alpha is undefined")
        return self.alpha


def krippendorff_alpha_nominal(m: AnnotationMatrix) -> AlphaResult:
    vals = m.values
    obs = m.observed
    m_u = obs.sum(axis=0)
    keep = m_u >= 2
    if keep.sum() < 1:
        raise DegenerateData("no item has two or more ratings")
    vals, obs, m_u = vals[:, keep], obs[:, keep], m_u[keep]
    cats = np.unique(vals[obs])
    # n_uc: per-item count of each category
    n_uc = np.stack([np.sum((vals == c) & obs, axis=0) for c in cats])  # (K, N)
    n = float(m_u.sum())
    d_o = float(np.sum((m_u**2 - (n_uc**2).sum(axis=0)) / (m_u - 1.0)) / n)
    n_c = n_uc.sum(axis=1).astype(np.float64)
    d_e = float(1.0 - np.sum(n_c * (n_c - 1.0)) / (n * (n - 1.0)))
    if len(cats) < 2:
        return AlphaResult(None, d_o, d_e, int(n), int(keep.sum()), no_variation=True)
    return AlphaResult(1.0 - d_o / d_e, d_o, d_e, int(n), int(keep.sum()))


class WilcoxonResult(NamedTuple):
    W: float
    p: float
    n: int
    w_plus: float
    w_minus: float
    method: str


EXACT_MAX_N = 25


def _signed_rank_counts(doubled_ranks: Sequence[int]) -> np.ndarray:
    """Number of sign patterns reaching each doubled positive-rank sum."""
    total = int(sum(doubled_ranks))
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    return counts


def wilcoxon_signed_rank(x, y, mode: str = "two-sided") -> WilcoxonResult:
    """Paired signed-rank test; zero differences dropped, ties get midranks.

    For up to 25 non-zero differences the two-sided p-value is exact (the
    null distribution of the positive-rank sum over all 2^n sign patterns);
    above that a tie- and continuity-corrected normal approximation is used.
    """
    if mode != "two-sided":
        raise ValueError("only the two-sided test is implemented")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"paired samples must be equal-length vectors: {x.shape} vs {y.shape}")
    d = x - y
    d = d[d != 0]
    n = d.size
    if n == 0:
        raise AllZeroDifferences("all paired differences are zero")
    ranks = rankdata(np.abs(d), method="average")
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    W = min(w_plus, w_minus)
    if n <= EXACT_MAX_N:
        doubled = [int(round(2 * r)) for r in ranks]
        counts = _signed_rank_counts(doubled)
        tail = counts[: int(round(2 * W)) + 1].sum()
        p = float(min(1.0, 2.0 * tail / 2.0**n))
        return WilcoxonResult(W, p, n, w_plus, w_minus, "exact")
    mean = n * (n + 1) / 4.0
    _, tie_counts = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24.0 - np.sum(tie_counts**3 - tie_counts) / 48.0
    z = max(abs(w_plus - mean) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return WilcoxonResult(W, p, n, w_plus, w_minus, "normal")


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, 10000):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return h


def betainc_regularized(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if t == 0.0:
        return 1.0
    return betainc_regularized(df / 2.0, 0.5, df / (df + t * t))


class WelchResult(NamedTuple):
    t: float
    df: float
    p: float


def welch_t_test(a, b) -> WelchResult:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    k, m = a.size, b.size
    if k < 2 or m < 2:
        raise ValueError("each sample needs at least two observations")
    va, vb = a.var(ddof=1) / k, b.var(ddof=1) / m
    if va + vb == 0.0:
        raise DegenerateVariance("both samples have zero variance")
    t = float((a.mean() - b.mean()) / math.sqrt(va + vb))
    df = float((va + vb) ** 2 / (va**2 / (k - 1) + vb**2 / (m - 1)))
    return WelchResult(t, df, t_sf_two_sided(t, df))
