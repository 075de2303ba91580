import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caldnr.discovery import (
    ABSTAIN,
    DISCOVERED,
    NONE,
    OBSERVED,
    PositiveQueue,
    Similarities,
    avg_positive_similarity,
    batch_positive_similarity,
    discovery_precision,
    generate_pseudo_labels,
    update_queues,
)
from caldnr.numerics import cosine


def test_avg_similarity_cases():
    v = np.array([0.2, -1.0, 3.0])
    assert avg_positive_similarity(v, [v, v, v], min_size=3) == pytest.approx(1.0, abs=1e-15)
    assert avg_positive_similarity(v, [v, -v], min_size=2) == pytest.approx(0.0, abs=1e-15)
    assert avg_positive_similarity(v, [v, v], min_size=8) is ABSTAIN


def test_batch_similarity_matches_scalar_version():
    rng = np.random.default_rng(0)
    q = PositiveQueue(3, capacity=6, min_size=4)
    for c, k in enumerate([6, 3, 5]):
        for _ in range(k):
            q.push(c, rng.normal(size=5))
    reprs = rng.normal(size=(4, 3, 5))
    sims = batch_positive_similarity(reprs, q)
    assert np.array_equal(sims.abstain[0], [False, True, False])
    for n in range(4):
        for c in (0, 2):
            expect = avg_positive_similarity(reprs[n, c], q.queues[c], 4)
            assert sims.values[n, c] == pytest.approx(expect, abs=1e-12)


def one_entry(s, y=0, theta=1.0):
    sims = Similarities(np.array([[s]]), np.array([[False]]))
    return generate_pseudo_labels(sims, np.array([[y]]), np.array([theta]))


def test_warmup_threshold_blocks_discovery():
    assert one_entry(0.999999)[0][0, 0] == 0


def test_identical_candidate_is_discovered():
    v = np.ones(4)
    q = PositiveQueue(1, 8, 2)
    q.push(0, v)
    q.push(0, v)
    sims = batch_positive_similarity(v[None, None, :], q)
    out = generate_pseudo_labels(sims, np.zeros((1, 1), np.int8), np.array([0.9]))
    assert out.labels[0, 0] == 1 and out.provenance[0, 0] == DISCOVERED


def test_observed_and_abstain_rules():
    sims = Similarities(np.array([[0.95, 0.99, 0.1]]), np.array([[False, True, False]]))
    out = generate_pseudo_labels(sims, np.array([[1, 0, 0]]), np.array([0.9, 0.9, 0.9]))
    assert out.labels.tolist() == [[1, 0, 0]]
    assert out.provenance.tolist() == [[OBSERVED, NONE, NONE]]


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_pseudo_labels_dominate_partial(seed):
    rng = np.random.default_rng(seed)
    y = (rng.random((5, 4)) < 0.3).astype(np.int8)
    sims = Similarities(rng.uniform(-1, 1, (5, 4)), rng.random((5, 4)) < 0.2)
    out = generate_pseudo_labels(sims, y, rng.uniform(0, 1, 4))
    assert np.all(out.labels >= y)
    assert np.all(out.labels[sims.abstain & (y == 0)] == 0)


def test_fifo_capacity():
    q = PositiveQueue(1, capacity=2, min_size=1)
    for k in range(3):
        q.push(0, np.full(2, k))
    assert q.entries(0).tolist() == [[1, 1], [2, 2]]


def test_queue_gating_uses_observed_labels_only():
    q = PositiveQueue(2, capacity=8, min_size=1)
    reprs = np.arange(2 * 2 * 3, dtype=float).reshape(2, 2, 3)
    update_queues(reprs, np.array([[1, 0], [0, 0]]), q)
    assert q.sizes().tolist() == [1, 0]
    assert np.array_equal(q.entries(0)[0], reprs[0, 0])
    reprs[0, 0] += 100
    assert not np.array_equal(q.entries(0)[0], reprs[0, 0])  # stored detached


def test_queue_ready_and_copy():
    q = PositiveQueue(2, capacity=4, min_size=2)
    q.push(0, np.ones(2))
    q.push(0, np.ones(2))
    assert q.ready().tolist() == [True, False]
    assert q.copy().equals(q)
    with pytest.raises(ValueError):
        PositiveQueue(1, capacity=2, min_size=3)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_queue_length_bounded(seed, cap):
    rng = np.random.default_rng(seed)
    q = PositiveQueue(3, capacity=cap, min_size=1)
    for _ in range(4):
        y = (rng.random((5, 3)) < 0.5).astype(np.int8)
        update_queues(rng.normal(size=(5, 3, 2)), y, q)
    assert np.all(q.sizes() <= cap)


def test_discovery_precision():
    labels = np.array([[1, 1, 0], [0, 1, 1]])
    prov = np.array([[OBSERVED, DISCOVERED, NONE], [NONE, DISCOVERED, DISCOVERED]])
    from caldnr.discovery import PseudoLabels

    full = np.array([[1, 1, -1], [1, -1, 1]])
    count, precision, recall = discovery_precision(PseudoLabels(labels, prov), full)
    assert count == 3
    assert precision == pytest.approx(2 / 3)
    assert recall == pytest.approx(2 / 3)
