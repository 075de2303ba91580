"""Ranking and thresholded multi-label metrics."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np


@dataclass
class EvalReport:
    ap: np.ndarray  # per class; NaN where the class has no positives
    mAP: float
    OP: float
    CP: float
    OR: float
    CR: float
    OF1: float
    CF1: float
    score_threshold: float = 0.5
    excluded: List[int] = field(default_factory=list)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in ("mAP", "OP", "CP", "OR", "CR", "OF1", "CF1")}

    def table(self) -> str:
        lines = [f"{'metric':<6} {'value':>8}"]
        lines += [f"{k:<6} {v:8.4f}" for k, v in self.row().items()]
        return "\n".join(lines)


def average_precision(scores, truth) -> float:
    """Mean of precision@k over the ranks k of the positives.

    Ranks come from sorting by descending score with ties broken by
    ascending sample index. Returns NaN when ``truth`` has no positives.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(truth) == 1
    n_pos = int(pos.sum())
    if n_pos == 0:
        return float("nan")
    order = np.lexsort((np.arange(scores.size), -scores))
    hits = pos[order]
    ranks = np.flatnonzero(hits) + 1
    precision_at_hits = np.arange(1, n_pos + 1) / ranks
    return float(precision_at_hits.sum() / n_pos)


def _ratio(num, den):
    return num / den if den else 0.0


def f1_report(scores, truth, threshold: float = 0.5) -> EvalReport:
    scores = np.asarray(scores, dtype=np.float64)
    truth = np.asarray(truth)
    if scores.shape != truth.shape or scores.ndim != 2:
        raise ValueError(f"scores {scores.shape} and truth {truth.shape} must be matching N x C arrays")
    C = scores.shape[1]
    pred = scores >= threshold
    gt = truth == 1
    n_correct = (pred & gt).sum(axis=0)
    n_pred = pred.sum(axis=0)
    n_gt = gt.sum(axis=0)
    OP = _ratio(n_correct.sum(), n_pred.sum())
    OR = _ratio(n_correct.sum(), n_gt.sum())
    CP = sum(_ratio(n_correct[i], n_pred[i]) for i in range(C)) / C
    CR = sum(_ratio(n_correct[i], n_gt[i]) for i in range(C)) / C
    OF1 = _ratio(2 * OP * OR, OP + OR)
    CF1 = _ratio(2 * CP * CR, CP + CR)
    ap = np.array([average_precision(scores[:, i], truth[:, i]) for i in range(C)])
    excluded = [i for i in range(C) if np.isnan(ap[i])]
    mAP = float(np.nanmean(ap)) if len(excluded) < C else float("nan")
    return EvalReport(ap, mAP, float(OP), float(CP), float(OR), float(CR), float(OF1), float(CF1), threshold, excluded)


def mean_average_precision(scores, truth) -> float:
    scores = np.asarray(scores)
    truth = np.asarray(truth)
    aps = [average_precision(scores[:, i], truth[:, i]) for i in range(scores.shape[1])]
    aps = [a for a in aps if not np.isnan(a)]
    return float(np.mean(aps)) if aps else float("nan")
