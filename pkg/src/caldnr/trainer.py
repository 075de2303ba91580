"""Training loop, evaluation and checkpoint persistence.

Per batch: forward pass, label discovery, noise rejection, loss and
gradients, Adam step, queue update, then threshold statistics. Disabled
modules fall back to identities (pseudo labels = observed labels, weights
all one, fixed thresholds).
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import catu
from .checkpoint import read_checkpoint, write_checkpoint
from .config import TrainConfig
from .data import Dataset
from .discovery import (
    PositiveQueue,
    PseudoLabels,
    Similarities,
    batch_positive_similarity,
    discovery_precision,
    generate_pseudo_labels,
    queue_snapshot,
    update_queues,
)
from .metrics import EvalReport, f1_report
from .model import DECAYED, forward, init_params
from .numerics import ParamSet
from .objective import Batch, NumericError, evaluate_loss_and_gradients
from .optim import Adam
from .rejection import sample_weights

log = logging.getLogger(__name__)

CSV_COLUMNS = [
    "epoch", "batch", "l_an", "l_pseudo", "l_weighted", "l_csl", "total",
    "pseudo_count", "pseudo_precision", "reject_rate", "mAP", "OF1", "CF1",
]
THRESHOLD_COLUMNS = ["epoch", "category", "theta_pos", "theta_neg"]
RNG_STREAMS = ("init", "shuffle", "reject")


class TrainingAborted(RuntimeError):
    def __init__(self, message: str, checkpoint: Optional[str]):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class EpochLog:
    epoch: int
    losses: Dict[str, float]
    theta_pos: np.ndarray
    theta_neg: np.ndarray
    pseudo_count: int
    pseudo_precision: float
    pseudo_recall: float
    reject_rate: float
    lr: float
    eval: Optional[EvalReport] = None


@dataclass
class TrainState:
    config: TrainConfig
    params: ParamSet
    optimizer: Adam
    thresholds: catu.ThresholdState
    queues: PositiveQueue
    rngs: Dict[str, np.random.Generator]
    epoch: int = 1  # next epoch to run
    history: List[EpochLog] = field(default_factory=list)


def make_rngs(seed: int) -> Dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(RNG_STREAMS))
    return {name: np.random.Generator(np.random.PCG64(s)) for name, s in zip(RNG_STREAMS, children)}


def init_state(dataset: Dataset, config: TrainConfig) -> TrainState:
    config.validate()
    rngs = make_rngs(config.seed)
    mcfg = config.model_config(dataset.num_categories, dataset.feature_dim)
    params = init_params(mcfg, rngs["init"])
    optimizer = Adam(params, config.beta1, config.beta2, config.adam_eps, config.weight_decay, DECAYED)
    batches = math.ceil(dataset.num_samples / config.batch_size)
    thresholds = catu.ThresholdState(dataset.num_categories, batches)
    queues = PositiveQueue(dataset.num_categories, config.queue_capacity, config.queue_min_size)
    return TrainState(config, params, optimizer, thresholds, queues, rngs)


def _fixed_thresholds(config: TrainConfig, epoch: int, C: int):
    if epoch <= config.warmup_epochs:
        return np.ones(C), np.full(C, min(config.fixed_theta_neg, 1.0))
    return np.full(C, config.fixed_theta_pos), np.full(C, config.fixed_theta_neg)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def _needs_similarity(config: TrainConfig) -> bool:
    return config.enable_cald or config.enable_canr or config.enable_catu


def train_epoch(state: TrainState, dataset: Dataset, writer=None) -> EpochLog:
    cfg = state.config
    epoch = state.epoch
    C = dataset.num_categories
    theta = catu.theta_at_epoch(epoch, cfg.schedule())
    lr = cfg.lr_at_epoch(epoch)
    th = state.thresholds
    if cfg.enable_catu:
        catu.update_thresholds(th, theta)
    else:
        th.theta = theta
        th.theta_pos, th.theta_neg = _fixed_thresholds(cfg, epoch, C)

    order = state.rngs["shuffle"].permutation(dataset.num_samples)
    sums = {k: 0.0 for k in ("l_an", "l_pseudo", "l_weighted", "l_csl", "total")}
    pseudo_count = pseudo_correct = missing = 0
    rejected = negatives = 0
    n_batches = th.batches_per_epoch
    for b in range(n_batches):
        idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
        x = dataset.features[idx].astype(np.float64)
        y = dataset.partial_labels[idx]
        full = None if dataset.full_labels is None else dataset.full_labels[idx]
        fwd = forward(state.params, x)

        if _needs_similarity(cfg):
            sims = batch_positive_similarity(fwd.reprs, state.queues)
        else:
            sims = Similarities(np.zeros(y.shape), np.ones(y.shape, dtype=bool))
        if cfg.enable_cald:
            pseudo = generate_pseudo_labels(sims, y, th.theta_pos)
        else:
            pseudo = PseudoLabels(y.copy(), np.where(y == 1, 1, 0).astype(np.int8))
        if cfg.enable_canr:
            sw = sample_weights(sims, y, th.theta_pos, th.theta_neg, state.rngs["reject"], cfg.rejection_mode)
            lam = sw.weights
        else:
            lam = np.ones(y.shape)

        batch = Batch(
            x, y, pseudo.labels, lam,
            queue_snapshot(state.queues) if cfg.enable_csl else None,
            full,
        )
        parts, _ = evaluate_loss_and_gradients(state.params, batch, cfg, fwd)
        state.optimizer.step(state.params, lr)
        if _needs_similarity(cfg) or cfg.enable_csl:
            update_queues(fwd.reprs, y, state.queues)
        if cfg.enable_catu:
            catu.accumulate_stats(sims.values, sims.abstain, y, th)
            catu.update_thresholds(th, theta)
        else:
            th.batch = min(th.batch + 1, th.batches_per_epoch)

        count, _, _ = discovery_precision(pseudo, full)
        pseudo_count += count
        if full is not None:
            truth = full == 1
            pseudo_correct += int((pseudo.discovered & truth).sum())
            missing += int((truth & (y == 0)).sum())
        neg = y == 0
        negatives += int(neg.sum())
        rejected += int((lam[neg] == 0).sum())
        row = parts.as_dict()
        for k in sums:
            sums[k] += row[k]
        if writer is not None:
            prec = pseudo_correct_batch(pseudo, full) if count else float("nan")
            writer.writerow([
                epoch, b + 1, *(_fmt(row[k]) for k in ("l_an", "l_pseudo", "l_weighted", "l_csl", "total")),
                count, _fmt(prec),
                _fmt(float(1.0 - lam[neg].mean()) if neg.any() else 0.0), "", "", "",
            ])

    if cfg.enable_catu:
        catu.end_epoch(th)
    else:
        th.batch = 0
        th.epoch += 1
    entry = EpochLog(
        epoch=epoch,
        losses={k: v / n_batches for k, v in sums.items()},
        theta_pos=th.theta_pos.copy(),
        theta_neg=th.theta_neg.copy(),
        pseudo_count=pseudo_count,
        pseudo_precision=pseudo_correct / pseudo_count if pseudo_count else float("nan"),
        pseudo_recall=pseudo_correct / missing if missing else float("nan"),
        reject_rate=rejected / negatives if negatives else 0.0,
        lr=lr,
    )
    state.epoch += 1
    return entry


def pseudo_correct_batch(pseudo: PseudoLabels, full) -> float:
    if full is None:
        return float("nan")
    found = pseudo.discovered
    return float((found & (full == 1)).sum() / max(found.sum(), 1))


def evaluate_params(params: ParamSet, dataset: Dataset, threshold: float = 0.5, batch_size: int = 256) -> EvalReport:
    if dataset.full_labels is None:
        raise ValueError("evaluation needs full labels")
    scores = np.concatenate([
        forward(params, dataset.features[i : i + batch_size].astype(np.float64)).scores
        for i in range(0, dataset.num_samples, batch_size)
    ])
    return f1_report(scores, dataset.full_labels, threshold)


def evaluate(checkpoint, dataset: Dataset, threshold: float = 0.5) -> EvalReport:
    """Metrics of a trained state (or a checkpoint path) on ``dataset``'s full labels."""
    if isinstance(checkpoint, (str, os.PathLike)):
        checkpoint = load_checkpoint(str(checkpoint))
    params = checkpoint.params if isinstance(checkpoint, TrainState) else checkpoint
    return evaluate_params(params, dataset, threshold)


def train(
    dataset: Dataset,
    config: TrainConfig,
    test: Optional[Dataset] = None,
    run_dir: Optional[str] = None,
    state: Optional[TrainState] = None,
    epochs: Optional[int] = None,
    eval_threshold: float = 0.5,
):
    """Run training to ``config.epochs`` (or ``epochs`` more epochs). Returns (state, history)."""
    if state is None:
        state = init_state(dataset, config)
    cfg = state.config
    last = cfg.epochs if epochs is None else min(cfg.epochs, state.epoch + epochs - 1)
    writer = th_writer = None
    fh = th_fh = None
    ckpt_path = None
    if run_dir is not None:
        os.makedirs(run_dir, exist_ok=True)
        ckpt_path = os.path.join(run_dir, "checkpoint.bin")
        metrics_path = os.path.join(run_dir, "metrics.csv")
        th_path = os.path.join(run_dir, "thresholds.csv")
        fresh = state.epoch == 1
        fh = open(metrics_path, "w" if fresh else "a", newline="")
        th_fh = open(th_path, "w" if fresh else "a", newline="")
        writer, th_writer = csv.writer(fh), csv.writer(th_fh)
        if fresh:
            writer.writerow(CSV_COLUMNS)
            th_writer.writerow(THRESHOLD_COLUMNS)
    try:
        while state.epoch <= last:
            try:
                entry = train_epoch(state, dataset, writer)
            except NumericError as err:
                raise TrainingAborted(f"epoch {state.epoch}: {err}", ckpt_path) from err
            if test is not None:
                entry.eval = evaluate_params(state.params, test, eval_threshold)
            state.history.append(entry)
            ev = entry.eval
            log.info(
                "epoch %d total=%.4f pseudo=%d prec=%.3f reject=%.3f mAP=%s",
                entry.epoch, entry.losses["total"], entry.pseudo_count, entry.pseudo_precision,
                entry.reject_rate, "-" if ev is None else f"{ev.mAP:.4f}",
            )
            if writer is not None:
                writer.writerow([
                    entry.epoch, "mean", *(_fmt(entry.losses[k]) for k in ("l_an", "l_pseudo", "l_weighted", "l_csl", "total")),
                    entry.pseudo_count, _fmt(entry.pseudo_precision), _fmt(entry.reject_rate),
                    *(("", "", "") if ev is None else (_fmt(ev.mAP), _fmt(ev.OF1), _fmt(ev.CF1))),
                ])
                for c in range(len(entry.theta_pos)):
                    th_writer.writerow([entry.epoch, c, _fmt(float(entry.theta_pos[c])), _fmt(float(entry.theta_neg[c]))])
                fh.flush()
                th_fh.flush()
                save_checkpoint(state, ckpt_path)
    finally:
        if fh is not None:
            fh.close()
            th_fh.close()
    return state, state.history


def save_checkpoint(state: TrainState, path: str) -> None:
    th = state.thresholds
    meta = {
        "epoch": state.epoch,
        "adam_t": state.optimizer.t,
        "config_hash": state.config.digest(),
        "thr": {k: getattr(th, k) for k in ("num_categories", "batches_per_epoch", "batch", "epoch", "theta")},
        "queue": {"capacity": state.queues.capacity, "min_size": state.queues.min_size},
        "param_names": state.params.names(),
    }
    write_checkpoint(path, {
        "conf": state.config.to_dict(),
        "meta": meta,
        "params": state.params.values,
        "adam_m": state.optimizer.m,
        "adam_v": state.optimizer.v,
        "thresholds": th.arrays(),
        "queues": queue_snapshot(state.queues),
        "rngs": {k: g.bit_generator.state for k, g in state.rngs.items()},
    })


def load_checkpoint(path: str) -> TrainState:
    raw = read_checkpoint(path)
    config = TrainConfig.from_dict(raw["conf"])
    meta = raw["meta"]
    if meta["config_hash"] != config.digest():
        raise ValueError(f"{path}: config hash mismatch")
    params = ParamSet({k: raw["params"][k] for k in meta["param_names"]})
    opt = Adam(params, config.beta1, config.beta2, config.adam_eps, config.weight_decay, DECAYED)
    opt.m = {k: raw["adam_m"][k] for k in meta["param_names"]}
    opt.v = {k: raw["adam_v"][k] for k in meta["param_names"]}
    opt.t = meta["adam_t"]
    thr = catu.ThresholdState(**meta["thr"], **raw["thresholds"])
    queues = PositiveQueue(meta["thr"]["num_categories"], meta["queue"]["capacity"], meta["queue"]["min_size"])
    for c, entries in enumerate(raw["queues"]):
        for row in entries:
            queues.push(c, row)
    rngs = {}
    for name, st in raw["rngs"].items():
        bg = np.random.PCG64()
        bg.state = st
        rngs[name] = np.random.Generator(bg)
    return TrainState(config, params, opt, thr, queues, rngs, epoch=meta["epoch"])
