"""Discrimination metrics and the feature/hidden-state correlation diagnostic."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, UndefinedMetricError

PAIRWISE_LIMIT = 10_000
SCHEMA_VERSION = 1


def _check_binary(scores, labels):
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ContractError("scores and labels must be 1-D arrays of equal length")
    if not np.all(np.isin(labels, (0, 1))):
        raise ContractError("labels must be 0 or 1")
    pos, neg = scores[labels == 1], scores[labels == 0]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    return scores, labels, pos, neg


def auc_pairwise(scores, labels) -> float:
    """Mann-Whitney AUC by explicit comparison of every positive/negative pair."""
    _, _, pos, neg = _check_binary(scores, labels)
    twice = 0
    for chunk in np.array_split(pos, max(1, pos.size // 512)):
        cmp = chunk[:, None] - neg[None, :]
        twice += 2 * int(np.count_nonzero(cmp > 0)) + int(np.count_nonzero(cmp == 0))
    return twice / (2.0 * pos.size * neg.size)


def auc_ranksum(scores, labels) -> float:
    """Mann-Whitney AUC from mid-ranks, O(n log n)."""
    scores, labels, pos, neg = _check_binary(scores, labels)
    ranks = rankdata(scores)  # average ranks for ties
    r_pos = ranks[labels == 1].sum()
    n1, n0 = pos.size, neg.size
    return float((r_pos - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def auc(scores, labels) -> float:
    """P(score_pos > score_neg) + 0.5 P(tie).

    Exact pair counting up to ``PAIRWISE_LIMIT`` samples, rank sums beyond.
    """
    if np.size(scores) <= PAIRWISE_LIMIT:
        return auc_pairwise(scores, labels)
    return auc_ranksum(scores, labels)


def candidate_thresholds(scores) -> np.ndarray:
    """Midpoints between consecutive distinct scores, plus -inf and +inf."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    return np.concatenate([[-np.inf], (u[:-1] + u[1:]) / 2.0, [np.inf]])


def breakeven(scores, labels):
    """Threshold where precision is closest to recall.

    A sample is called positive when its score exceeds the threshold.
    Thresholds with no predicted positives (precision undefined) are skipped.
    Ties in |precision - recall| go to higher specificity, then to the lower
    threshold.  Returns ``(threshold, ppv, specificity)``.
    """
    scores, labels, pos, neg = _check_binary(scores, labels)
    thr = candidate_thresholds(scores)
    sp, sn = np.sort(pos), np.sort(neg)
    tp = pos.size - np.searchsorted(sp, thr, side="right")
    fp = neg.size - np.searchsorted(sn, thr, side="right")
    keep = (tp + fp) > 0
    thr, tp, fp = thr[keep], tp[keep], fp[keep]
    precision = tp / (tp + fp)
    recall = tp / pos.size
    spec = (neg.size - fp) / neg.size
    gap = np.abs(precision - recall)
    best = np.lexsort((thr, -spec, gap))[0]
    return float(thr[best]), float(precision[best]), float(spec[best])


@dataclass
class EvalReport:
    auc: float
    breakeven_threshold: float
    ppv: float
    specificity: float
    n_pos: int
    n_neg: int

    def to_json(self) -> str:
        doc = {"schema_version": SCHEMA_VERSION, **asdict(self)}
        if not np.isfinite(doc["breakeven_threshold"]):
            doc["breakeven_threshold"] = str(doc["breakeven_threshold"])
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text) -> "EvalReport":
        doc = json.loads(text)
        doc.pop("schema_version", None)
        doc["breakeven_threshold"] = float(doc["breakeven_threshold"])
        return cls(**doc)


def evaluate_scores(scores, labels) -> EvalReport:
    labels = np.asarray(labels)
    thr, ppv, spec = breakeven(scores, labels)
    return EvalReport(
        auc=auc(scores, labels),
        breakeven_threshold=thr,
        ppv=ppv,
        specificity=spec,
        n_pos=int((labels == 1).sum()),
        n_neg=int((labels == 0).sum()),
    )


def cross_correlation(hidden_traces, feature_traces):
    """Pearson correlation between every feature and every hidden unit.

    ``hidden_traces`` and ``feature_traces`` are per-sample arrays (T_i x H and
    T_i x D) holding valid steps only; all steps of all samples are pooled.
    Returns ``(corr, degenerate)`` where ``corr`` is D x H and ``degenerate``
    marks entries set to 0 because a column had zero variance.
    """
    Hs = np.vstack([np.asarray(h, dtype=np.float64) for h in hidden_traces])
    Xs = np.vstack([np.asarray(x, dtype=np.float64) for x in feature_traces])
    if Hs.shape[0] != Xs.shape[0]:
        raise ContractError("hidden and feature traces must have matching steps")
    if Hs.shape[0] < 2:
        raise ContractError("need at least 2 pooled points")
    Hc = Hs - Hs.mean(axis=0)
    Xc = Xs - Xs.mean(axis=0)
    h_norm = np.sqrt((Hc**2).sum(axis=0))
    x_norm = np.sqrt((Xc**2).sum(axis=0))
    n = Hs.shape[0]
    h_flat = h_norm <= 1e-12 * np.sqrt(n) * (1.0 + np.abs(Hs.mean(axis=0)))
    x_flat = x_norm <= 1e-12 * np.sqrt(n) * (1.0 + np.abs(Xs.mean(axis=0)))
    degenerate = x_flat[:, None] | h_flat[None, :]
    denom = np.outer(x_norm, h_norm)
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = (Xc.T @ Hc) / denom
    corr = np.where(degenerate, 0.0, np.clip(corr, -1.0, 1.0))
    return corr, degenerate


def mean_std(values) -> str:
    """Format as ``mean (std)`` with three decimals, the comparison-table cell format."""
    v = np.asarray(values, dtype=np.float64)
    std = float(v.std(ddof=1)) if v.size > 1 else 0.0
    return f"{v.mean():.3f} ({std:.3f})"
