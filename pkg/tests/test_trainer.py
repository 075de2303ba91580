import filecmp
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from caldnr.checkpoint import CheckpointError, read_checkpoint
from caldnr.config import TrainConfig, ablation
from caldnr.data import SynthConfig, drop_labels, generate_synthetic
from caldnr.losses import an_loss
from caldnr.model import forward
from caldnr.optim import adam_step
from caldnr.trainer import (
    evaluate,
    init_state,
    load_checkpoint,
    save_checkpoint,
    train,
)

SMALL = SynthConfig(n=96, c=4, l=6, d=8, max_labels_per_image=2)


@pytest.fixture(scope="module")
def data():
    train_set = generate_synthetic(SMALL, 1)
    train_set = train_set.with_partial(drop_labels(train_set.full_labels, 0.3, 2))
    return train_set, generate_synthetic(replace(SMALL, n=40), 3)


SIZES = dict(epochs=4, batch_size=16, warmup_epochs=1, queue_capacity=8, queue_min_size=2, hidden_dim=8, embed_dim=4)


def cfg(**kw):
    return TrainConfig(**{**SIZES, **kw})


def adam_oracle(x0, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.0):
    x, m, v, out = x0, 0.0, 0.0, []
    for t in range(1, steps + 1):
        g = grad_fn(x) + wd * x
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
        out.append(x)
    return out


def test_adam_fixed_point():
    p = np.array([1.5, -2.0])
    new, _, _ = adam_step(p, np.zeros(2), np.zeros(2), np.zeros(2), 0.1, t=1)
    assert np.array_equal(new, p)


def test_adam_first_step():
    new, _, _ = adam_step(np.array([0.0]), np.array([1.0]), np.zeros(1), np.zeros(1), 0.01, t=1)
    assert new[0] == pytest.approx(-0.01 / (1 + 1e-8), abs=1e-15)


def test_adam_rejects_step_zero():
    with pytest.raises(ValueError):
        adam_step(np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1), 0.1, t=0)


@pytest.mark.parametrize("wd", [0.0, 5e-4])
def test_adam_quadratic_trajectory(wd):
    grad = lambda x: 2.0 * (x - 3.0)
    expect = adam_oracle(0.5, grad, 50, 0.05, wd=wd)
    x, m, v = np.array([0.5]), np.zeros(1), np.zeros(1)
    for t in range(1, 51):
        x, m, v = adam_step(x, grad(x), m, v, 0.05, weight_decay=wd, t=t)
        assert x[0] == pytest.approx(expect[t - 1], abs=1e-12)


@given(st.integers(1, 60))
def test_lr_schedule(e):
    c = TrainConfig(lr=1e-3)
    assert c.lr_at_epoch(e) == pytest.approx(1e-3 * 10 ** -((e - 1) // 10), rel=1e-12)


def test_ablation_identity_trace(data):
    tr, _ = data
    _, hist = train(tr, ablation("an", **SIZES, enable_catu=True))
    for h in hist:
        assert h.losses["l_pseudo"] == h.losses["l_an"] == h.losses["l_weighted"]
        assert h.losses["l_csl"] == 0.0


def test_ablation_equals_plain_an_loop(data):
    """All modules off reproduces a hand-written loop minimizing 3x the AN loss."""
    tr, _ = data
    c = ablation("an", **{**SIZES, "epochs": 2})
    state, _ = train(tr, c)

    ref = init_state(tr, c)
    from caldnr.objective import Batch, evaluate_loss_and_gradients

    for epoch in (1, 2):
        order = ref.rngs["shuffle"].permutation(tr.num_samples)
        for b in range(ref.thresholds.batches_per_epoch):
            idx = order[b * c.batch_size : (b + 1) * c.batch_size]
            x = tr.features[idx].astype(np.float64)
            y = tr.partial_labels[idx]
            parts, _ = evaluate_loss_and_gradients(ref.params, Batch(x, y), c)
            assert parts.l_cls == 3 * an_loss(y, forward(ref.params, x).scores) / len(idx)
            ref.optimizer.step(ref.params, c.lr_at_epoch(epoch))
    assert all(np.array_equal(ref.params[k], state.params[k]) for k in ref.params)


def test_warmup_has_no_discoveries(data):
    tr, _ = data
    _, hist = train(tr, cfg(epochs=2, warmup_epochs=2))
    assert all(h.pseudo_count == 0 for h in hist)


def test_disabled_catu_uses_fixed_thresholds(data):
    tr, _ = data
    _, hist = train(tr, cfg(epochs=2, enable_catu=False, fixed_theta_pos=0.85, fixed_theta_neg=0.5))
    assert np.all(hist[0].theta_pos == 1.0)
    assert np.all(hist[1].theta_pos == 0.85) and np.all(hist[1].theta_neg == 0.5)


def test_determinism_and_csv(data, tmp_path):
    tr, te = data
    train(tr, cfg(), te, run_dir=tmp_path / "a")
    train(tr, cfg(), te, run_dir=tmp_path / "b")
    for name in ("metrics.csv", "thresholds.csv", "checkpoint.bin"):
        assert filecmp.cmp(tmp_path / "a" / name, tmp_path / "b" / name, shallow=False)
    header = (tmp_path / "a" / "metrics.csv").read_text().splitlines()[0]
    assert header == "epoch,batch,l_an,l_pseudo,l_weighted,l_csl,total,pseudo_count,pseudo_precision,reject_rate,mAP,OF1,CF1"


def test_resume_is_bit_identical(data, tmp_path):
    tr, te = data
    straight, _ = train(tr, cfg(), te, run_dir=tmp_path / "full")
    train(tr, cfg(), te, run_dir=tmp_path / "part", epochs=2)
    state = load_checkpoint(str(tmp_path / "part" / "checkpoint.bin"))
    assert state.epoch == 3
    resumed, _ = train(tr, state.config, te, run_dir=tmp_path / "part", state=state)
    assert all(np.array_equal(straight.params[k], resumed.params[k]) for k in straight.params)
    assert straight.queues.equals(resumed.queues)
    assert straight.thresholds.equals(resumed.thresholds)
    assert filecmp.cmp(tmp_path / "full" / "metrics.csv", tmp_path / "part" / "metrics.csv", shallow=False)


def test_checkpoint_round_trip(data, tmp_path):
    tr, _ = data
    state, _ = train(tr, cfg(epochs=2))
    path = str(tmp_path / "ck.bin")
    save_checkpoint(state, path)
    back = load_checkpoint(path)
    assert all(np.array_equal(back.params[k], state.params[k]) for k in state.params)
    assert all(np.array_equal(back.optimizer.m[k], state.optimizer.m[k]) for k in state.params)
    assert back.optimizer.t == state.optimizer.t
    assert back.thresholds.equals(state.thresholds)
    assert back.queues.equals(state.queues)
    assert back.rngs["reject"].random() == state.rngs["reject"].random()


def test_corrupt_checkpoint(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"NOTACKPT" + bytes(20))
    with pytest.raises(CheckpointError):
        read_checkpoint(str(path))


def test_evaluate_is_pure_and_near_prior_when_untrained(data):
    _, te = data
    big = generate_synthetic(SynthConfig(n=600, c=4, l=6, d=8, max_labels_per_image=2), 5)
    state = init_state(big, cfg())
    a, b = evaluate(state, big), evaluate(state, big)
    assert a.mAP == b.mAP and np.array_equal(a.ap, b.ap)
    prior = float(np.mean((big.full_labels == 1).mean(axis=0)))
    assert abs(a.mAP - prior) < 0.15


def test_non_finite_loss_aborts(data, tmp_path):
    from caldnr.trainer import TrainingAborted

    tr, _ = data
    bad = tr.subset(np.arange(tr.num_samples))
    bad.features[5, 0, 0] = np.inf
    with pytest.raises(TrainingAborted):
        train(bad, cfg(epochs=1), run_dir=tmp_path)


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0).validate()
    with pytest.raises(ValueError):
        TrainConfig.from_dict({"unknown": 1})
    with pytest.raises(ValueError):
        TrainConfig(rejection_mode="other").validate()
    assert TrainConfig().alpha == 0.05
