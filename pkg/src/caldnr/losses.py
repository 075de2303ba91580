"""Objective terms.

All classification losses take scores ``p`` already clamped away from 0 and
1 and sum over every entry they are given, so a batch loss is the sum of its
per-sample losses. The trainer divides by the batch size afterwards.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .numerics import safe_normalize

DEFAULT_ALPHA = 0.05


@dataclass
class LossBreakdown:
    l_full: float
    l_an: float
    l_pseudo: float
    l_weighted: float
    l_cls: float
    l_csl: float
    total: float

    def as_dict(self) -> dict:
        return asdict(self)


def _pos_neg_terms(p):
    p = np.asarray(p, dtype=np.float64)
    return -np.log(p), -np.log1p(-p)


def full_bce(y, p) -> float:
    """Binary cross-entropy against fully known labels in {-1, +1}."""
    y = np.asarray(y)
    pos, neg = _pos_neg_terms(p)
    return float(np.sum(np.where(y == 1, pos, 0.0) + np.where(y == -1, neg, 0.0)))


def weighted_loss(y, p, lam) -> float:
    """Assume-negative BCE with every entry's term multiplied by its weight."""
    y = np.asarray(y)
    pos, neg = _pos_neg_terms(p)
    terms = np.where(y == 1, pos, neg)
    return float(np.sum(terms * np.asarray(lam, dtype=np.float64)))


def an_loss(y, p) -> float:
    """Assume-negative BCE: unknown (0) labels are treated as negatives."""
    return weighted_loss(y, p, np.ones(np.shape(y)))


def pseudo_loss(y_tilde, p) -> float:
    return an_loss(y_tilde, p)


def classification_loss(y, y_tilde, lam, p) -> float:
    return an_loss(y, p) + pseudo_loss(y_tilde, p) + weighted_loss(y, p, lam)


def classification_grad(y, y_tilde, lam, p) -> np.ndarray:
    """d(classification_loss)/dp, elementwise."""
    y = np.asarray(y)
    yt = np.asarray(y_tilde)
    lam = np.asarray(lam, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    pos, pseudo_pos = (y == 1).astype(np.float64), (yt == 1).astype(np.float64)
    pos_coef = pos + pseudo_pos + lam * pos
    neg_coef = (1.0 - pos) + (1.0 - pseudo_pos) + lam * (1.0 - pos)
    return -pos_coef / p + neg_coef / (1.0 - p)


def total_loss(l_cls: float, l_csl: float, alpha: float = DEFAULT_ALPHA) -> float:
    return l_cls + alpha * l_csl


def _unit_backward(unit, norms, d_unit):
    """Pull a gradient on x/||x|| back to x (zero vectors get zero gradient)."""
    radial = np.sum(unit * d_unit, axis=-1, keepdims=True)
    return np.divide(d_unit - unit * radial, norms, out=np.zeros_like(d_unit), where=norms != 0)


def csl_loss(
    reprs: np.ndarray,
    labels: np.ndarray,
    queue_entries: Optional[Sequence[np.ndarray]] = None,
    reduction: str = "sum",
    with_grad: bool = False,
):
    """Cross-image semantic loss over ordered within-batch pairs and batch-vs-queue pairs.

    For each pair and category the term is 1 - s when both labels are
    positive and 1 + s otherwise, with s the cosine of the two category
    representations. Queue entries are constants and count as positives.
    ``reduction="mean"`` averages over each category's pairs before summing
    categories. With ``with_grad`` also returns d loss / d reprs.
    """
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    f = np.asarray(reprs, dtype=np.float64)
    y = np.asarray(labels) == 1
    B, C, _ = f.shape
    unit, norms = safe_normalize(f)
    d_unit = np.zeros_like(f)
    total = 0.0
    off_diag = ~np.eye(B, dtype=bool)
    for c in range(C):
        u = unit[:, c, :]
        yc = y[:, c]
        both = np.outer(yc, yc)
        sign = np.where(both, -1.0, 1.0) * off_diag
        sim = u @ u.T
        part = float(np.sum(off_diag) + np.sum(sign * sim))
        grad_u = 2.0 * sign @ u
        pairs = B * (B - 1)
        if queue_entries is not None and len(queue_entries[c]):
            q_unit, _ = safe_normalize(np.asarray(queue_entries[c], dtype=np.float64))
            qs = u @ q_unit.T  # B x K
            qsign = np.where(yc, -1.0, 1.0)[:, None]
            part += float(qs.size + np.sum(qsign * qs))
            grad_u += qsign * q_unit.sum(axis=0)[None, :]
            pairs += qs.size
        if reduction == "mean" and pairs:
            part /= pairs
            grad_u /= pairs
        total += part
        d_unit[:, c, :] = grad_u
    if not with_grad:
        return total
    return total, _unit_backward(unit, norms, d_unit)
