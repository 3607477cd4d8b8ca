"""Threshold-free and best-threshold membership metrics."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata


def _prep(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).ravel().astype(np.int64)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not set(np.unique(y)) <= {0, 1}:
        raise ValueError("labels must be 0/1")
    if y.min(initial=1) == y.max(initial=0) or len(y) == 0:
        raise ValueError("both classes must be present")
    return s, y


def _counts(s: np.ndarray, y: np.ndarray):
    """Cumulative (TP, FP) after admitting every score >= each distinct threshold, descending."""
    order = np.argsort(-s, kind="stable")
    s, y = s[order], y[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.r_[s[1:] != s[:-1], True]
    return s[last], tp[last], fp[last]


def roc_curve(scores, labels) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(fpr, tpr, thresholds); starts at (0, 0) with threshold +inf, ends at (1, 1)."""
    s, y = _prep(scores, labels)
    thr, tp, fp = _counts(s, y)
    n_pos, n_neg = y.sum(), len(y) - y.sum()
    return np.r_[0.0, fp / n_neg], np.r_[0.0, tp / n_pos], np.r_[np.inf, thr]


def auc(scores, labels) -> float:
    """Mann-Whitney statistic: P(member score > non-member score), ties count 1/2."""
    s, y = _prep(scores, labels)
    ranks = rankdata(s)  # average ranks handle ties
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def asr(scores, labels) -> float:
    """Best accuracy of ``score >= tau`` over all thresholds, including the trivial ones."""
    s, y = _prep(scores, labels)
    _, tp, fp = _counts(s, y)
    n_neg = len(y) - y.sum()
    acc = (tp + n_neg - fp) / len(y)
    return float(max(acc.max(), n_neg / len(y)))


def tpr_at_fpr(scores, labels, fpr_cap: float = 0.01) -> float:
    fpr, tpr, _ = roc_curve(scores, labels)
    ok = fpr <= fpr_cap
    return float(tpr[ok].max()) if ok.any() else 0.0


@dataclass
class MetricReport:
    method: str
    asr: float
    auc: float
    tpr_at_1fpr: float
    n_member: int
    n_nonmember: int
    roc: list[tuple[float, float]] = field(default_factory=list, repr=False)

    def to_dict(self, with_roc: bool = False) -> dict:
        d = asdict(self)
        if not with_roc:
            d.pop("roc")
        return d


def metric_report(method: str, scores, labels) -> MetricReport:
    s, y = _prep(scores, labels)
    fpr, tpr, _ = roc_curve(s, y)
    return MetricReport(method, asr(s, y), auc(s, y), tpr_at_fpr(s, y, 0.01), int(y.sum()),
                        int(len(y) - y.sum()), [(float(a), float(b)) for a, b in zip(fpr, tpr)])
