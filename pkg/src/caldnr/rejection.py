"""Stochastic rejection of assumed-negative labels.

An unknown label (y = 0) is supervised as negative only with probability r.
In the default ``corrected`` mode r falls linearly from 1 at theta_neg to 0
at theta_pos, so entries that look like the positive queue are dropped. The
``literal`` mode uses the opposite ratio, (s - theta_neg) / (theta_pos - theta_neg).
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .discovery import Similarities

MODES = ("corrected", "literal")


class SampleWeights(NamedTuple):
    weights: np.ndarray  # B x C in {0, 1}
    keep_probability: np.ndarray  # B x C in [0, 1]

    @property
    def reject_rate(self) -> float:
        return float(1.0 - self.weights.mean()) if self.weights.size else 0.0


def keep_probability(
    sims: Similarities, partial_labels: np.ndarray, theta_pos: np.ndarray, theta_neg: np.ndarray, mode: str = "corrected"
) -> np.ndarray:
    if mode not in MODES:
        raise ValueError(f"rejection mode must be one of {MODES}, got {mode!r}")
    y = np.asarray(partial_labels)
    tp = np.asarray(theta_pos, dtype=np.float64)[None, :]
    tn = np.asarray(theta_neg, dtype=np.float64)[None, :]
    span = np.broadcast_to(tp - tn, y.shape)
    s = sims.values
    numer = tp - s if mode == "corrected" else s - tn
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(span > 0, numer / np.where(span > 0, span, 1.0), 1.0)
    r = np.clip(ratio, 0.0, 1.0)
    r[sims.abstain | (span <= 0) | (y == 1)] = 1.0
    return r


def sample_weights(
    sims: Similarities,
    partial_labels: np.ndarray,
    theta_pos: np.ndarray,
    theta_neg: np.ndarray,
    rng: np.random.Generator,
    mode: str = "corrected",
) -> SampleWeights:
    """lambda = 1 for observed positives, else 1[r > X] with X ~ U[0, 1].

    One uniform is drawn for every (n, c) entry, row-major, whatever its label,
    so the stream position depends only on the batch shape.
    """
    r = keep_probability(sims, partial_labels, theta_pos, theta_neg, mode)
    draws = rng.random(r.shape)
    lam = (r > draws).astype(np.float64)
    lam[np.asarray(partial_labels) == 1] = 1.0
    return SampleWeights(lam, r)
