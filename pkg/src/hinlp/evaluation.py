"""Ranking metrics with explicit tie handling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

METHODS = ("lp-fixed", "lp-core-relation", "lp-path", "lp-path-segment")


def _check(scores, labels):
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(bool)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-d arrays of equal length")
    return scores, labels


def auc_roc(scores, labels) -> float:
    """Mann-Whitney form: ``P(s+ > s-) + 0.5 P(s+ = s-)`` using mid-ranks."""
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("degenerate labels")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def tie_blocks(scores, labels):
    """Cumulative ``(tp, fp)`` after each block of tied scores, in descending score order."""
    order = np.argsort(-scores, kind="mergesort")
    s, y = scores[order], labels[order]
    last = np.r_[s[1:] != s[:-1], True]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    return tp, fp


def pr_segment_area(tp0, fp0, dtp, dfp, n_pos) -> float:
    """Area under the precision-recall interpolation between two achievable points.

    Along the segment the counts move linearly, ``tp = tp0 + s*dtp`` and
    ``fp = fp0 + s*dfp`` for ``s`` in [0, 1], and precision is
    ``tp / (tp + fp)``.  The integral over recall has the closed form below.
    """
    if dtp == 0:
        return 0.0
    c = tp0 + fp0
    d = dtp + dfp
    if c == 0:
        # precision is constant dtp/d along a segment leaving the origin
        return dtp / d * dtp / n_pos
    u = d / c
    # (tp0*dfp - dtp*fp0) is an exact integer, so no cancellation here
    integral = dtp / d + (tp0 * dfp - dtp * fp0) / (d * c) * (np.log1p(u) / u)
    return float(dtp / n_pos * integral)


def auc_pr(scores, labels) -> float:
    """Area under the precision-recall curve.

    Tied scores form one block; between consecutive achievable points the
    curve follows the Davis-Goadrich interpolation, which is integrated
    exactly.
    """
    scores, labels = _check(scores, labels)
    n_pos = int(labels.sum())
    if n_pos == 0:
        raise ValueError("no positives")
    tp, fp = tie_blocks(scores, labels)
    area = 0.0
    prev_tp, prev_fp = 0, 0
    for t, f in zip(tp.tolist(), fp.tolist()):
        area += pr_segment_area(prev_tp, prev_fp, t - prev_tp, f - prev_fp, n_pos)
        prev_tp, prev_fp = t, f
    return area


@dataclass
class EvalReport:
    category: str
    method: str
    auc_roc: float
    auc_pr: float
    n_candidates: int
    n_positives: int


def evaluate_category(scores: dict[str, float], candidates, positives,
                      category: str = "", method: str = "") -> EvalReport:
    candidates = sorted(candidates)
    missing = [c for c in candidates if c not in scores]
    if missing:
        raise ValueError(f"{len(missing)} candidates have no score")
    positives = set(positives)
    s = np.array([scores[c] for c in candidates])
    y = np.array([c in positives for c in candidates])
    return EvalReport(category, method, auc_roc(s, y), auc_pr(s, y), len(candidates), int(y.sum()))
