"""Binary classification metrics: ROC AUC, average precision and F1."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import UndefinedMetricError


def _arrays(labels, scores) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels, dtype=np.int64).ravel()
    s = np.asarray(scores, dtype=np.float64).ravel()
    if y.shape != s.shape:
        raise ValueError(f"{y.size} labels but {s.size} scores")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return y, s


def roc_auc(labels, scores) -> float:
    """Probability that a random positive outscores a random negative (ties count half).

    Uses the rank-sum identity with average ranks for ties.
    """
    y, s = _arrays(labels, scores)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def pr_auc(labels, scores) -> float:
    """Average precision: mean of the precision at the rank of every positive.

    Scores are ranked in descending order; equal scores keep input order.
    """
    y, s = _arrays(labels, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, y.size + 1)
    return float((tp[hits == 1] / ranks[hits == 1]).sum() / n_pos)


def confusion(labels, scores, threshold: float = 0.5) -> tuple[int, int, int, int]:
    y, s = _arrays(labels, scores)
    pred = s >= threshold
    tp = int((pred & (y == 1)).sum())
    fp = int((pred & (y == 0)).sum())
    fn = int((~pred & (y == 1)).sum())
    tn = int((~pred & (y == 0)).sum())
    return tp, fp, tn, fn


def f1(labels, scores, threshold: float = 0.5) -> float:
    tp, fp, _, fn = confusion(labels, scores, threshold)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


@dataclass(frozen=True)
class MetricsReport:
    roc_auc: float
    pr_auc: float
    f1: float
    tp: int
    fp: int
    tn: int
    fn: int
    n_pos: int
    n_neg: int

    @property
    def n(self) -> int:
        return self.n_pos + self.n_neg

    def as_row(self) -> dict:
        return asdict(self)


REPORT_FIELDS = ("roc_auc", "pr_auc", "f1", "tp", "fp", "tn", "fn", "n_pos", "n_neg")


def report(labels, scores, threshold: float = 0.5) -> MetricsReport:
    """All metrics at once; ROC/PR AUC are NaN when a class is missing."""
    y, s = _arrays(labels, scores)
    try:
        auc = roc_auc(y, s)
    except UndefinedMetricError:
        auc = math.nan
    try:
        ap = pr_auc(y, s)
    except UndefinedMetricError:
        ap = math.nan
    tp, fp, tn, fn = confusion(y, s, threshold)
    n_pos = int(y.sum())
    return MetricsReport(auc, ap, f1(y, s, threshold), tp, fp, tn, fn, n_pos, y.size - n_pos)


def grouped_reports(labels, scores, groups: Sequence[str], threshold: float = 0.5) -> dict[str, MetricsReport]:
    """One report per group key, keys in first-appearance order. Empty groups never appear."""
    y, s = _arrays(labels, scores)
    keys = list(dict.fromkeys(groups))
    g = np.asarray(groups, dtype=object)
    return {k: report(y[g == k], s[g == k], threshold) for k in keys}
