"""Label discovery from per-category queues of positive representations.

Every category keeps a bounded FIFO of detached representations taken from
samples whose label for that category was *observed* positive. An unknown
label is promoted to a pseudo-positive when the sample's representation is,
on average, at least ``theta_pos[c]`` cosine-similar to that queue.
"""

from __future__ import annotations

from collections import deque
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from .numerics import cosine, safe_normalize

ABSTAIN = None

OBSERVED = 1
DISCOVERED = 2
NONE = 0


class PositiveQueue:
    """One FIFO per category, capacity ``capacity``, usable once it holds ``min_size`` entries."""

    def __init__(self, num_categories: int, capacity: int = 64, min_size: int = 8):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        if not 1 <= min_size <= capacity:
            raise ValueError(f"min_size must lie in [1, capacity], got {min_size}")
        self.capacity = capacity
        self.min_size = min_size
        self.queues: List[deque] = [deque(maxlen=capacity) for _ in range(num_categories)]

    @property
    def num_categories(self) -> int:
        return len(self.queues)

    def __len__(self) -> int:
        return len(self.queues)

    def push(self, c: int, vec: np.ndarray) -> None:
        self.queues[c].append(np.array(vec, dtype=np.float64, copy=True))

    def entries(self, c: int) -> np.ndarray:
        """Stored vectors for category c, oldest first (K x D; K may be 0)."""
        q = self.queues[c]
        if not q:
            return np.zeros((0, 0))
        return np.stack(list(q))

    def sizes(self) -> np.ndarray:
        return np.array([len(q) for q in self.queues], dtype=np.int64)

    def ready(self) -> np.ndarray:
        return self.sizes() >= self.min_size

    def copy(self) -> "PositiveQueue":
        other = PositiveQueue(self.num_categories, self.capacity, self.min_size)
        for c, q in enumerate(self.queues):
            for v in q:
                other.queues[c].append(v.copy())
        return other

    def equals(self, other: "PositiveQueue") -> bool:
        if (self.capacity, self.min_size, self.num_categories) != (other.capacity, other.min_size, other.num_categories):
            return False
        for a, b in zip(self.queues, other.queues):
            if len(a) != len(b) or any(not np.array_equal(u, v) for u, v in zip(a, b)):
                return False
        return True


class Similarities(NamedTuple):
    values: np.ndarray  # B x C, 0.0 where abstained
    abstain: np.ndarray  # B x C bool


class PseudoLabels(NamedTuple):
    labels: np.ndarray  # B x C in {0, 1}
    provenance: np.ndarray  # B x C in {NONE, OBSERVED, DISCOVERED}

    @property
    def discovered(self) -> np.ndarray:
        return self.provenance == DISCOVERED


def pairwise_similarity(f_n_c, f_m_c) -> float:
    return cosine(f_n_c, f_m_c)


def avg_positive_similarity(f_n_c, queue_c, min_size: int = 8) -> Optional[float]:
    """Mean cosine between ``f_n_c`` and each queue entry, or ABSTAIN if the queue is too short."""
    entries = list(queue_c)
    if len(entries) < min_size or not entries:
        return ABSTAIN
    return float(np.mean([cosine(f_n_c, q) for q in entries]))


def batch_positive_similarity(reprs: np.ndarray, queues: PositiveQueue) -> Similarities:
    """s^{n,pos}_c for a whole batch (B x C x D) against the current queues."""
    B, C, _ = reprs.shape
    values = np.zeros((B, C))
    abstain = np.ones((B, C), dtype=bool)
    unit, _ = safe_normalize(np.asarray(reprs, dtype=np.float64))
    for c in range(C):
        q = queues.queues[c]
        if len(q) < queues.min_size:
            continue
        q_unit, _ = safe_normalize(np.stack(list(q)))
        values[:, c] = np.clip(unit[:, c, :] @ q_unit.T, -1.0, 1.0).mean(axis=1)
        abstain[:, c] = False
    return Similarities(values, abstain)


def generate_pseudo_labels(sims: Similarities, partial_labels: np.ndarray, theta_pos: np.ndarray) -> PseudoLabels:
    """Observed positives stay 1; unknown entries become 1 when s >= theta_pos[c]."""
    y = np.asarray(partial_labels)
    hit = (~sims.abstain) & (sims.values >= np.asarray(theta_pos)[None, :]) & (y == 0)
    labels = ((y == 1) | hit).astype(np.int8)
    provenance = np.where(y == 1, OBSERVED, np.where(hit, DISCOVERED, NONE)).astype(np.int8)
    return PseudoLabels(labels, provenance)


def update_queues(reprs: np.ndarray, partial_labels: np.ndarray, queues: PositiveQueue) -> PositiveQueue:
    """Append detached copies of f^n_c for every observed positive (n, c), in row-major order."""
    y = np.asarray(partial_labels)
    for n, c in zip(*np.nonzero(y == 1)):
        queues.push(int(c), reprs[n, c])
    return queues


def queue_snapshot(queues: PositiveQueue) -> List[np.ndarray]:
    return [queues.entries(c) for c in range(queues.num_categories)]


def discovery_precision(pseudo: PseudoLabels, full_labels: Optional[np.ndarray]) -> Sequence[float]:
    """(count, precision, recall-over-missing) of discovered labels against ground truth."""
    found = pseudo.discovered
    count = int(found.sum())
    if full_labels is None:
        return count, float("nan"), float("nan")
    truth = np.asarray(full_labels) == 1
    correct = int((found & truth).sum())
    missing = int((truth & (pseudo.provenance != OBSERVED)).sum())
    precision = correct / count if count else float("nan")
    recall = correct / missing if missing else float("nan")
    return count, precision, recall
