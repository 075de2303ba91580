"""Command-line entry points.

    caldnr gen-synth   --out DIR [...]
    caldnr drop-labels --data DIR --keep 0.1
    caldnr train       --data DIR [--test DIR] --run-dir RUN [--config FILE] [training flags]
    caldnr eval        --checkpoint RUN/checkpoint.bin --data DIR
    caldnr sweep       --data DIR --test DIR --run-dir RUN [training flags]

Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields

import numpy as np

from .checkpoint import CheckpointError
from .config import TrainConfig
from .data import DatasetFormatError, SynthConfig, drop_labels, generate_synthetic, load_dataset, save_dataset
from .objective import NumericError
from .trainer import TrainingAborted, evaluate, load_checkpoint, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SWEEP_KEEPS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)

_HELP = {
    "epochs": "training epochs",
    "batch_size": "samples per batch",
    "lr": "initial learning rate (divided by lr_decay_factor every lr_decay_every epochs)",
    "lr_decay_every": "epochs between learning-rate drops",
    "lr_decay_factor": "learning-rate divisor",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "adam_eps": "Adam denominator epsilon",
    "weight_decay": "L2 weight decay on weight matrices",
    "alpha": "weight of the cross-image semantic loss",
    "loss_reduction": "mean or sum over batch samples",
    "mode": "category representation: attention or projection",
    "embed_dim": "category embedding width",
    "hidden_dim": "attention hidden width",
    "attention_gain": "init gain of the attention projections",
    "warmup_epochs": "epochs with theta fixed at 1",
    "theta_start": "theta right after warm-up",
    "theta_step": "theta decrease per epoch",
    "theta_floor": "lowest theta",
    "queue_capacity": "positive queue length per category",
    "queue_min_size": "queue entries needed before similarities are used",
    "rejection_mode": "corrected or literal keep-probability",
    "fixed_theta_pos": "positive threshold when adaptive thresholds are off",
    "fixed_theta_neg": "negative threshold when adaptive thresholds are off",
    "enable_cald": "label discovery",
    "enable_canr": "noise rejection",
    "enable_catu": "adaptive thresholds",
    "enable_csl": "cross-image semantic loss",
    "csl_use_pseudo": "cross-image loss positives from pseudo labels instead of observed labels",
    "seed": "random seed",
}


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def parse_bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    defaults = TrainConfig()
    g = p.add_argument_group("training options (override --config)")
    for f in fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        default = getattr(defaults, f.name)
        kind = parse_bool if isinstance(default, bool) else type(default)
        g.add_argument(
            flag, dest=f.name, type=kind, default=None, metavar=kind.__name__.upper() if kind is not parse_bool else "BOOL",
            help=f"{_HELP[f.name]} (default: {default})",
        )
    g.add_argument("--config", default=None, help="key=value config file (default: none)")


def read_config_file(path: str) -> dict:
    """Flat key=value text; '#' starts a comment."""
    defaults = TrainConfig()
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            key = key.replace("-", "_")
            if not hasattr(defaults, key):
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            default = getattr(defaults, key)
            try:
                out[key] = parse_bool(value) if isinstance(default, bool) else type(default)(value)
            except (ValueError, argparse.ArgumentTypeError) as err:
                raise UsageError(f"{path}:{lineno}: bad value for {key}: {err}")
    return out


def build_config(args) -> TrainConfig:
    values = {}
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = v
    cfg = TrainConfig(**values)
    try:
        cfg.validate()
    except ValueError as err:
        raise UsageError(str(err))
    return cfg


def write_config_snapshot(cfg: TrainConfig, path: str) -> None:
    with open(path, "w") as fh:
        for k, v in cfg.to_dict().items():
            fh.write(f"{k}={str(v).lower() if isinstance(v, bool) else v}\n")


def build_parser() -> Parser:
    parser = Parser(prog="caldnr", description="Multi-label training from partial positive labels.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr (default: off)")
    sub = parser.add_subparsers(dest="command", parser_class=Parser)

    p = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--n", type=int, default=2000, help="samples (default: 2000)")
    p.add_argument("--c", type=int, default=10, help="categories (default: 10)")
    p.add_argument("--l", type=int, default=16, help="locations per feature map (default: 16)")
    p.add_argument("--d", type=int, default=32, help="feature dimension (default: 32)")
    p.add_argument("--sigma", type=float, default=0.3, help="noise norm relative to the prototypes (default: 0.3)")
    p.add_argument("--max-labels", type=int, default=3, help="max categories per sample (default: 3)")
    p.add_argument("--correlation", type=float, default=0.0, help="prototype pair blending in [0, 1] (default: 0.0)")
    p.add_argument("--prototypes-seed", type=int, default=0, help="seed for the category prototypes (default: 0)")
    p.add_argument("--seed", type=int, default=0, help="seed for the samples (default: 0)")
    p.add_argument("--force", action="store_true", help="write into a non-empty directory (default: off)")

    p = sub.add_parser("drop-labels", help="keep a random proportion of positive labels")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--keep", type=float, required=True, help="proportion of positives kept, in (0, 1]")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("--per-image", action="store_true", help="drop within each sample instead of dataset-wide (default: off)")

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True, help="training dataset directory")
    p.add_argument("--test", default=None, help="evaluation dataset directory (default: none)")
    p.add_argument("--run-dir", required=True, help="output directory for logs and checkpoints")
    p.add_argument("--resume", action="store_true", help="continue from RUN_DIR/checkpoint.bin (default: off)")
    p.add_argument("--threshold", type=float, default=0.5, help="score threshold for F1 metrics (default: 0.5)")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory with full labels")
    p.add_argument("--threshold", type=float, default=0.5, help="score threshold for F1 metrics (default: 0.5)")
    p.add_argument("--csv", default=None, help="append the report as a CSV row to this file (default: none)")

    p = sub.add_parser("sweep", help="train and evaluate across keep proportions")
    p.add_argument("--data", required=True, help="training dataset directory (needs full labels)")
    p.add_argument("--test", required=True, help="evaluation dataset directory")
    p.add_argument("--run-dir", required=True, help="output directory")
    p.add_argument("--keeps", default=",".join(str(k) for k in SWEEP_KEEPS), help="comma-separated keep proportions (default: 0.1,...,0.9)")
    p.add_argument("--drop-seed", type=int, default=0, help="seed for label dropping (default: 0)")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs (default: 1)")
    p.add_argument("--threshold", type=float, default=0.5, help="score threshold for F1 metrics (default: 0.5)")
    _add_train_flags(p)
    return parser


def _load(path: str):
    if not os.path.isdir(path):
        raise FileNotFoundError(f"dataset directory not found: {path}")
    return load_dataset(path)


def cmd_gen_synth(args) -> int:
    if os.path.isdir(args.out) and os.listdir(args.out) and not args.force:
        raise UsageError(f"output directory {args.out} is not empty (use --force)")
    cfg = SynthConfig(args.n, args.c, args.l, args.d, args.prototypes_seed, args.sigma, args.max_labels, args.correlation)
    try:
        ds = generate_synthetic(cfg, args.seed)
    except ValueError as err:
        raise UsageError(str(err))
    save_dataset(ds, args.out)
    print(f"wrote {ds.num_samples} samples x {ds.num_categories} categories to {args.out}")
    return EXIT_OK


def cmd_drop_labels(args) -> int:
    if not 0.0 < args.keep <= 1.0:
        raise UsageError(f"--keep must lie in (0, 1], got {args.keep}")
    ds = _load(args.data)
    if ds.full_labels is None:
        raise DatasetFormatError("labels_full", "drop-labels needs full labels")
    partial = drop_labels(ds.full_labels, args.keep, args.seed, per_image=args.per_image)
    save_dataset(ds.with_partial(partial), args.data)
    print(f"kept {int(partial.sum())} of {int((ds.full_labels == 1).sum())} positive labels")
    return EXIT_OK


def _report_dict(report) -> dict:
    out = report.row()
    out["threshold"] = report.score_threshold
    out["ap"] = [None if np.isnan(a) else float(a) for a in report.ap]
    return out


def cmd_train(args) -> int:
    cfg = build_config(args)
    ds = _load(args.data)
    test = _load(args.test) if args.test else None
    os.makedirs(args.run_dir, exist_ok=True)
    state = None
    ckpt = os.path.join(args.run_dir, "checkpoint.bin")
    if args.resume:
        if not os.path.isfile(ckpt):
            raise FileNotFoundError(f"no checkpoint to resume at {ckpt}")
        state = load_checkpoint(ckpt)
        cfg = state.config
    write_config_snapshot(cfg, os.path.join(args.run_dir, "config.txt"))
    state, history = train(ds, cfg, test=test, run_dir=args.run_dir, state=state, eval_threshold=args.threshold)
    if history and history[-1].eval is not None:
        rep = history[-1].eval
        with open(os.path.join(args.run_dir, "report.json"), "w") as fh:
            json.dump(_report_dict(rep), fh, indent=2)
        print(rep.table())
    print(f"finished epoch {state.epoch - 1}; checkpoint at {ckpt}")
    return EXIT_OK


def cmd_eval(args) -> int:
    if not os.path.isfile(args.checkpoint):
        raise FileNotFoundError(f"checkpoint not found: {args.checkpoint}")
    ds = _load(args.data)
    rep = evaluate(args.checkpoint, ds, args.threshold)
    print(rep.table())
    if args.csv:
        new = not os.path.exists(args.csv)
        with open(args.csv, "a", newline="") as fh:
            w = csv.writer(fh)
            if new:
                w.writerow(["checkpoint", *rep.row()])
            w.writerow([args.checkpoint, *(repr(v) for v in rep.row().values())])
    return EXIT_OK


def _sweep_one(job):
    data_dir, test_dir, keep, drop_seed, cfg_dict, run_dir, threshold = job
    ds = load_dataset(data_dir)
    test = load_dataset(test_dir)
    ds = ds.with_partial(drop_labels(ds.full_labels, keep, drop_seed))
    cfg = TrainConfig(**cfg_dict)
    _, history = train(ds, cfg, test=test, run_dir=run_dir, eval_threshold=threshold)
    return keep, history[-1].eval.row()


def format_sweep_table(rows) -> str:
    lines = [f"{'keep':>6} {'mAP':>8} {'OF1':>8} {'CF1':>8}"]
    for keep, r in rows:
        lines.append(f"{keep:>6} {r['mAP'] * 100:8.2f} {r['OF1'] * 100:8.2f} {r['CF1'] * 100:8.2f}")
    ave = {k: float(np.mean([r[k] for _, r in rows])) for k in ("mAP", "OF1", "CF1")}
    lines.append(f"{'Ave.':>6} {ave['mAP'] * 100:8.2f} {ave['OF1'] * 100:8.2f} {ave['CF1'] * 100:8.2f}")
    return "\n".join(lines)


def cmd_sweep(args) -> int:
    cfg = build_config(args)
    try:
        keeps = [float(k) for k in args.keeps.split(",") if k.strip()]
    except ValueError:
        raise UsageError(f"--keeps must be comma-separated numbers, got {args.keeps!r}")
    if not keeps or any(not 0 < k <= 1 for k in keeps):
        raise UsageError("--keeps values must lie in (0, 1]")
    if args.jobs < 1:
        raise UsageError("--jobs must be >= 1")
    ds = _load(args.data)
    _load(args.test)
    if ds.full_labels is None:
        raise DatasetFormatError("labels_full", "sweep needs full labels on the training set")
    os.makedirs(args.run_dir, exist_ok=True)
    write_config_snapshot(cfg, os.path.join(args.run_dir, "config.txt"))
    jobs = [
        (args.data, args.test, k, args.drop_seed, cfg.to_dict(), os.path.join(args.run_dir, f"keep_{k:g}"), args.threshold)
        for k in keeps
    ]
    if args.jobs == 1:
        rows = [_sweep_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(args.jobs) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    with open(os.path.join(args.run_dir, "sweep.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["keep", "mAP", "OF1", "CF1"])
        for keep, r in rows:
            w.writerow([keep, repr(r["mAP"]), repr(r["OF1"]), repr(r["CF1"])])
        w.writerow(["Ave.", *(repr(float(np.mean([r[k] for _, r in rows]))) for k in ("mAP", "OF1", "CF1"))])
    print(format_sweep_table(rows))
    return EXIT_OK


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "drop-labels": cmd_drop_labels,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing subcommand; see --help")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return COMMANDS[args.command](args)
    except UsageError as err:
        print(f"error: usage: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, DatasetFormatError, CheckpointError) as err:
        print(f"error: data: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, TrainingAborted) as err:
        print(f"error: numeric: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
