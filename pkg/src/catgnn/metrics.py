"""ROC-AUC, macro F1 and average precision for binary fraud scores."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import UndefinedMetric

AP_TIE_POLICY = "stable input order"


@dataclass(frozen=True)
class EvalResult:
    auc: float
    f1_macro: float
    ap: float
    n_pos: int
    n_neg: int
    threshold: float = 0.5
    ap_tie_policy: str = AP_TIE_POLICY

    def to_dict(self):
        return asdict(self)


def _prep(scores, labels):
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError(f"{s.size} scores for {y.size} labels")
    return s, y


def roc_auc(scores, labels):
    """Probability a random positive outscores a random negative (ties count half).

    Computed from midranks: (sum of positive ranks - P(P+1)/2) / (P N).
    """
    s, y = _prep(scores, labels)
    n_pos = int((y == 1).sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetric("AUC needs both classes")
    order = np.argsort(s, kind="mergesort")
    sorted_s = s[order]
    starts = np.flatnonzero(np.r_[True, sorted_s[1:] != sorted_s[:-1]])
    ends = np.r_[starts[1:], s.size]
    mid = (starts + ends + 1) / 2.0
    ranks = np.empty(s.size)
    ranks[order] = np.repeat(mid, ends - starts)
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 0.0 if denom == 0 else 2.0 * tp / denom


def f1_macro(scores, labels, threshold=0.5):
    """Mean of the fraud-positive and benign-positive F1 at ``score >= threshold``."""
    s, y = _prep(scores, labels)
    pred = s >= threshold
    pos = y == 1
    tp = int(np.sum(pred & pos))
    fp = int(np.sum(pred & ~pos))
    fn = int(np.sum(~pred & pos))
    tn = y.size - tp - fp - fn
    return (_f1(tp, fp, fn) + _f1(tn, fn, fp)) / 2.0


def average_precision(scores, labels):
    """Sum over the descending ranking of (recall step) x precision.

    Tied scores keep their input order.
    """
    s, y = _prep(scores, labels)
    n_pos = int((y == 1).sum())
    if n_pos == 0:
        raise UndefinedMetric("AP needs at least one positive")
    order = np.argsort(-s, kind="mergesort")
    hits = (y[order] == 1).astype(np.float64)
    precision = np.cumsum(hits) / np.arange(1, s.size + 1)
    return float(np.sum(precision * hits) / n_pos)


def evaluate(scores, labels, threshold=0.5):
    s, y = _prep(scores, labels)
    n_pos = int((y == 1).sum())
    return EvalResult(roc_auc(s, y), f1_macro(s, y, threshold), average_precision(s, y),
                      n_pos, int(y.size - n_pos), threshold)
