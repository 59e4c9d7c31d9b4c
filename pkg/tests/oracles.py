"""Independent reference implementations and fixture generators used by the tests."""

import itertools
import math

import numpy as np
from scipy import integrate

from geoat.data import ClipRecord


# -- metrics ---------------------------------------------------------------------------
def ap_oracle(scores, labels):
    """Rank each positive directly: items above it, plus equal scores at lower index."""
    s, y = list(scores), list(labels)
    n = len(s)
    rank = [1 + sum(1 for j in range(n) if s[j] > s[i] or (s[j] == s[i] and j < i)) for i in range(n)]
    pos = [i for i in range(n) if y[i] == 1]
    return sum(sum(1 for j in pos if rank[j] <= rank[i]) / rank[i] for i in pos) / len(pos)


def auc_oracle(scores, labels):
    """Trapezoid area under the ROC curve built from every distinct threshold."""
    s, y = np.asarray(scores, float), np.asarray(labels)
    n_pos, n_neg = int(y.sum()), int((1 - y).sum())
    fpr, tpr = [0.0], [0.0]
    for thr in sorted(set(s.tolist()), reverse=True):
        pred = s >= thr
        tpr.append(np.sum(pred & (y == 1)) / n_pos)
        fpr.append(np.sum(pred & (y == 0)) / n_neg)
    return sum((fpr[k] - fpr[k - 1]) * (tpr[k] + tpr[k - 1]) / 2 for k in range(1, len(fpr)))


def f1_oracle(probs, labels, threshold=0.5):
    tp = fp = fn = 0
    for p, t in zip(np.ravel(probs), np.ravel(labels)):
        hit = p >= threshold
        tp += hit and t == 1
        fp += hit and t == 0
        fn += (not hit) and t == 1
    return 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)


def random_metric_instance(rng, n_max=20):
    """Scores with frequent ties and labels holding both classes."""
    n = int(rng.integers(2, n_max + 1))
    y = rng.integers(0, 2, n)
    y[rng.choice(n, 2, replace=False)] = [0, 1]
    s = rng.integers(0, 6, n) / 5.0 if rng.random() < 0.5 else rng.random(n)
    return s, y


# -- statistics ------------------------------------------------------------------------
def wilcoxon_oracle(x, y):
    """Two-sided exact p as the share of sign patterns at least as extreme."""
    d = np.asarray(x, float) - np.asarray(y, float)
    d = d[d != 0]
    a = np.abs(d)
    ranks = [sum(1.0 for u in a if u < v) + (sum(1.0 for u in a if u == v) + 1) / 2 for v in a]
    total = sum(ranks)
    w_plus = sum(r for r, v in zip(ranks, d) if v > 0)
    w_obs = min(w_plus, total - w_plus)
    hits = 0
    for signs in itertools.product((0, 1), repeat=len(ranks)):
        wp = sum(r for r, sgn in zip(ranks, signs) if sgn)
        hits += min(wp, total - wp) <= w_obs + 1e-9
    return w_obs, hits / 2 ** len(ranks)


def t_density(x, df):
    c = math.lgamma((df + 1) / 2) - math.lgamma(df / 2) - 0.5 * math.log(df * math.pi)
    return math.exp(c - (df + 1) / 2 * math.log1p(x * x / df))


def welch_oracle(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    t = (a.mean() - b.mean()) / math.sqrt(va + vb)
    df = (va + vb) ** 2 / (va**2 / (a.size - 1) + vb**2 / (b.size - 1))
    tail, _ = integrate.quad(t_density, abs(t), np.inf, args=(df,), epsabs=1e-14, epsrel=1e-13, limit=500)
    return 2 * tail


def sparse_annotations(rng, n_raters=10, n_items=4000, mark_rate=0.045, miss=0.3, false_alarm=0.01):
    """Raters observe a sparse ground truth with independent misses and false alarms.

    The truth prevalence is chosen so the expected share of positive marks is
    ``mark_rate``.
    """
    truth_rate = (mark_rate - false_alarm) / (1 - miss - false_alarm)
    truth = np.zeros(n_items, dtype=bool)
    truth[rng.choice(n_items, round(truth_rate * n_items), replace=False)] = True
    u = rng.random((n_raters, n_items))
    marks = np.where(truth, u >= miss, u < false_alarm)
    return marks.astype(float), truth


# -- data ------------------------------------------------------------------------------
def multilabel_records(rng, n_clips=1000, n_labels=28, min_pos=20):
    """Correlated multi-label manifest where every label has at least ``min_pos`` positives."""
    prev = rng.uniform(0.04, 0.25, n_labels)
    Y = (rng.random((n_clips, n_labels)) < prev).astype(int)
    # induce co-occurrence: label k+1 often fires with label k
    Y[:, 1::2] |= Y[:, 0::2] & (rng.random((n_clips, n_labels // 2)) < 0.3)
    for k in range(n_labels):
        short = min_pos - Y[:, k].sum()
        if short > 0:
            Y[rng.choice(np.flatnonzero(Y[:, k] == 0), short, replace=False), k] = 1
    return [ClipRecord(f"clip{i:05d}", f"clip{i:05d}.wav", Y[i].tolist()) for i in range(n_clips)]
