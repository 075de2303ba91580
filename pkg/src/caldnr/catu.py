"""Per-category adaptive thresholds.

Running means of the positive-queue similarity are kept separately for
observed positives and for unknown (assumed negative) entries. After every
batch the current epoch's means are blended with last epoch's finals using
the fraction of the epoch already seen, then

    theta_pos[c] = max(s_pos[c], theta)
    theta_neg[c] = (theta_pos[c] + s_neg[c]) / 2

where theta follows a global per-epoch schedule.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class ThetaSchedule:
    warmup_epochs: int = 5
    start: float = 0.95
    step: float = 0.025
    floor: float = 0.6

    def validate(self) -> None:
        if self.floor > self.start:
            raise ValueError("theta floor must not exceed start")
        if self.step <= 0:
            raise ValueError("theta step must be positive")
        if self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")


def theta_at_epoch(epoch: int, schedule: ThetaSchedule | None = None) -> float:
    """1.0 during warm-up, then start, decreasing by step per epoch down to floor (epochs are 1-based)."""
    schedule = schedule or ThetaSchedule()
    if epoch < 1:
        raise ValueError(f"epoch is 1-based, got {epoch}")
    if epoch <= schedule.warmup_epochs:
        return 1.0
    k = epoch - schedule.warmup_epochs - 1
    # round away the binary representation error of k * step
    return max(round(schedule.start - schedule.step * k, 12), schedule.floor)


@dataclass
class ThresholdState:
    num_categories: int
    batches_per_epoch: int
    pos_mean: np.ndarray = field(default=None)
    pos_count: np.ndarray = field(default=None)
    neg_mean: np.ndarray = field(default=None)
    neg_count: np.ndarray = field(default=None)
    prev_pos: np.ndarray = field(default=None)
    prev_neg: np.ndarray = field(default=None)
    has_prev_pos: np.ndarray = field(default=None)
    has_prev_neg: np.ndarray = field(default=None)
    theta_pos: np.ndarray = field(default=None)
    theta_neg: np.ndarray = field(default=None)
    batch: int = 0
    epoch: int = 1
    theta: float = 1.0

    def __post_init__(self):
        C = self.num_categories
        if self.batches_per_epoch < 1:
            raise ValueError("batches_per_epoch must be >= 1")
        for name in ("pos_mean", "neg_mean", "prev_pos", "prev_neg"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(C))
        for name in ("pos_count", "neg_count"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(C, dtype=np.int64))
        for name in ("has_prev_pos", "has_prev_neg"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(C, dtype=bool))
        if self.theta_pos is None:
            self.theta_pos = np.full(C, float(self.theta))
        if self.theta_neg is None:
            self.theta_neg = self.theta_pos.copy()

    def copy(self) -> "ThresholdState":
        kw = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        return ThresholdState(**kw)

    def arrays(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if isinstance(v, np.ndarray)}

    def equals(self, other: "ThresholdState") -> bool:
        scalars = ("num_categories", "batches_per_epoch", "batch", "epoch", "theta")
        if any(getattr(self, k) != getattr(other, k) for k in scalars):
            return False
        return all(np.array_equal(v, getattr(other, k)) for k, v in self.arrays().items())


def _running_update(mean: np.ndarray, count: np.ndarray, values: np.ndarray, mask: np.ndarray) -> None:
    k = mask.sum(axis=0)
    total = np.where(mask, values, 0.0).sum(axis=0)
    seen = k > 0
    new_count = count + k
    mean[seen] += (total[seen] - k[seen] * mean[seen]) / new_count[seen]
    count[:] = new_count


def accumulate_stats(s_pos: np.ndarray, abstain: np.ndarray, partial_labels: np.ndarray, state: ThresholdState) -> ThresholdState:
    """Fold one batch of positive-queue similarities into the running means.

    Observed positives feed the positive side, unknown entries the negative
    side; abstained entries are skipped. Advances the batch counter.
    """
    y = np.asarray(partial_labels)
    valid = ~np.asarray(abstain, dtype=bool)
    _running_update(state.pos_mean, state.pos_count, s_pos, valid & (y == 1))
    _running_update(state.neg_mean, state.neg_count, s_pos, valid & (y == 0))
    state.batch = min(state.batch + 1, state.batches_per_epoch)
    return state


def _blend(cur, count, prev, has_prev, w):
    have_cur = count > 0
    cur_eff = np.where(have_cur, cur, prev)
    prev_eff = np.where(has_prev, prev, cur)
    blended = w * cur_eff + (1.0 - w) * prev_eff
    return blended, have_cur | has_prev


def blended_stats(state: ThresholdState):
    """(s_pos, s_neg, pos_defined, neg_defined) after momentum blending with the previous epoch."""
    if not 0 <= state.batch <= state.batches_per_epoch:
        raise ValueError("batch index outside [0, B]")
    w = state.batch / state.batches_per_epoch
    s_pos, pos_ok = _blend(state.pos_mean, state.pos_count, state.prev_pos, state.has_prev_pos, w)
    s_neg, neg_ok = _blend(state.neg_mean, state.neg_count, state.prev_neg, state.has_prev_neg, w)
    return s_pos, s_neg, pos_ok, neg_ok


def compute_thresholds(s_pos, s_neg, theta: float, pos_defined=None, neg_defined=None):
    s_pos = np.asarray(s_pos, dtype=np.float64)
    s_neg = np.asarray(s_neg, dtype=np.float64)
    pos_defined = np.ones(s_pos.shape, bool) if pos_defined is None else pos_defined
    neg_defined = np.ones(s_neg.shape, bool) if neg_defined is None else neg_defined
    theta_pos = np.where(pos_defined, np.maximum(s_pos, theta), theta)
    # without negative statistics theta_neg collapses onto theta_pos, which disables rejection
    theta_neg = np.where(neg_defined, 0.5 * (theta_pos + s_neg), theta_pos)
    return theta_pos, theta_neg


def update_thresholds(state: ThresholdState, theta: float) -> ThresholdState:
    s_pos, s_neg, pos_ok, neg_ok = blended_stats(state)
    state.theta = float(theta)
    state.theta_pos, state.theta_neg = compute_thresholds(s_pos, s_neg, theta, pos_ok, neg_ok)
    return state


def end_epoch(state: ThresholdState) -> ThresholdState:
    """Roll the finished epoch's means into prev, reset the running stats, advance the epoch."""
    for side in ("pos", "neg"):
        mean = getattr(state, f"{side}_mean")
        count = getattr(state, f"{side}_count")
        seen = count > 0
        getattr(state, f"prev_{side}")[seen] = mean[seen]
        getattr(state, f"has_prev_{side}")[seen] = True
        mean[:] = 0.0
        count[:] = 0
    state.batch = 0
    state.epoch += 1
    return state
