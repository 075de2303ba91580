"""Loss and gradient evaluation for one batch.

Pseudo labels, sample weights and queue contents arrive precomputed in the
:class:`Batch` and are constants here; gradients flow through the scores
and, for the cross-image term, through both sides of every within-batch pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from . import losses
from .config import TrainConfig
from .model import Forward, backward, forward
from .numerics import ParamSet, central_difference


class NumericError(FloatingPointError):
    def __init__(self, term: str, value: float):
        super().__init__(f"non-finite loss term {term}={value}")
        self.term = term


@dataclass
class Batch:
    features: np.ndarray  # B x L x D
    partial_labels: np.ndarray  # B x C in {0, 1}
    pseudo_labels: Optional[np.ndarray] = None  # B x C in {0, 1}; defaults to partial_labels
    weights: Optional[np.ndarray] = None  # B x C in {0, 1}; defaults to ones
    queue_entries: Optional[List[np.ndarray]] = None  # per category, K_c x D
    full_labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.shape[0] == 0:
            raise ValueError("empty batch")
        if self.pseudo_labels is None:
            self.pseudo_labels = np.asarray(self.partial_labels).copy()
        if self.weights is None:
            self.weights = np.ones(np.shape(self.partial_labels))

    @property
    def size(self) -> int:
        return self.features.shape[0]


def _check(term: str, value: float) -> None:
    if not np.isfinite(value):
        raise NumericError(term, value)


def evaluate_loss_and_gradients(
    params: ParamSet, batch: Batch, config: TrainConfig, fwd: Optional[Forward] = None
) -> Tuple[losses.LossBreakdown, ParamSet]:
    """Loss breakdown for ``batch``; writes d total / d param into ``params.grads``."""
    if fwd is None:
        fwd = forward(params, batch.features)
    p = fwd.scores
    y, yt, lam = batch.partial_labels, batch.pseudo_labels, batch.weights
    scale = 1.0 / batch.size if config.loss_reduction == "mean" else 1.0

    l_an = losses.an_loss(y, p) * scale
    l_pseudo = losses.pseudo_loss(yt, p) * scale
    l_weighted = losses.weighted_loss(y, p, lam) * scale
    l_cls = l_an + l_pseudo + l_weighted
    d_scores = losses.classification_grad(y, yt, lam, p) * scale

    alpha = config.alpha if config.enable_csl else 0.0
    if config.enable_csl:
        csl_labels = yt if config.csl_use_pseudo else y
        l_csl, d_reprs = losses.csl_loss(
            fwd.reprs, csl_labels, batch.queue_entries, reduction=config.loss_reduction, with_grad=True
        )
        d_reprs = alpha * d_reprs
    else:
        l_csl, d_reprs = 0.0, np.zeros_like(fwd.reprs)
    total = losses.total_loss(l_cls, l_csl, alpha)
    l_full = float("nan")
    if batch.full_labels is not None:
        l_full = losses.full_bce(batch.full_labels, p) * scale

    for name, value in (("l_an", l_an), ("l_pseudo", l_pseudo), ("l_weighted", l_weighted), ("l_csl", l_csl), ("total", total)):
        _check(name, value)
    params.set_grads(backward(params, fwd, d_reprs, d_scores))
    return losses.LossBreakdown(l_full, l_an, l_pseudo, l_weighted, l_cls, l_csl, total), params


def loss_value(params: ParamSet, batch: Batch, config: TrainConfig) -> float:
    """Total loss only, recomputed from scratch (no gradient)."""
    fwd = forward(params, batch.features)
    p = fwd.scores
    scale = 1.0 / batch.size if config.loss_reduction == "mean" else 1.0
    l_cls = losses.classification_loss(batch.partial_labels, batch.pseudo_labels, batch.weights, p) * scale
    if not config.enable_csl:
        return l_cls
    labels = batch.pseudo_labels if config.csl_use_pseudo else batch.partial_labels
    l_csl = losses.csl_loss(fwd.reprs, labels, batch.queue_entries, reduction=config.loss_reduction)
    return losses.total_loss(l_cls, l_csl, config.alpha)


def finite_difference_gradient(params: ParamSet, batch: Batch, config: TrainConfig, h: float = 1e-5) -> ParamSet:
    """Central-difference gradient of :func:`loss_value`, returned in a fresh ParamSet's grads."""
    if not h > 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    work = params.copy()
    grads = central_difference(lambda ps: loss_value(ps, batch, config), work, h)
    out = params.copy()
    out.set_grads(grads)
    return out
