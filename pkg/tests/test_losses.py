import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from caldnr.losses import (
    an_loss,
    classification_grad,
    classification_loss,
    csl_loss,
    full_bce,
    pseudo_loss,
    total_loss,
    weighted_loss,
)
from caldnr.model import SCORE_EPS

LOG2 = 0.69314718


def test_full_bce_values():
    assert full_bce([[1]], [[0.5]]) == pytest.approx(LOG2, abs=1e-8)
    assert full_bce([[-1]], [[0.5]]) == pytest.approx(LOG2, abs=1e-8)
    assert full_bce([[1, -1]], [[1 - SCORE_EPS, SCORE_EPS]]) == pytest.approx(2 * SCORE_EPS, rel=1e-6)


def test_an_loss_values():
    assert an_loss([[1, 0]], [[0.9, 0.1]]) == pytest.approx(0.21072103, abs=1e-8)
    assert an_loss([[1, 1]], [[0.3, 0.6]]) == full_bce([[1, 1]], [[0.3, 0.6]])
    assert an_loss([[0]], [[SCORE_EPS]]) < 1e-6


def test_pseudo_loss():
    y = np.array([[1, 0, 0]])
    p = np.array([[0.7, 0.4, 0.2]])
    assert pseudo_loss(y, p) == an_loss(y, p)
    yt = np.array([[1, 1, 0]])
    assert pseudo_loss(yt, p) - an_loss(y, p) == pytest.approx(-math.log(0.4) + math.log(0.6))
    assert pseudo_loss(np.ones((1, 3)), np.full((1, 3), 0.5)) == pytest.approx(3 * LOG2, abs=1e-8)


def test_weighted_loss():
    y = np.array([[1, 0, 0]])
    p = np.array([[0.7, 0.4, 0.2]])
    assert weighted_loss(y, p, np.ones((1, 3))) == an_loss(y, p)
    assert weighted_loss(y, p, np.array([[1, 0, 0]])) == pytest.approx(-math.log(0.7))
    lam = np.array([[1, 1, 0]])
    assert an_loss(y, p) - weighted_loss(y, p, lam) == pytest.approx(-math.log(0.8))


def test_classification_loss_identities():
    rng = np.random.default_rng(0)
    y = (rng.random((2, 4)) < 0.4).astype(int)
    p = rng.uniform(0.05, 0.95, (2, 4))
    ones = np.ones((2, 4))
    assert classification_loss(y, y, ones, p) == pytest.approx(3 * an_loss(y, p), abs=1e-12)
    yt = np.maximum(y, rng.random((2, 4)) < 0.5)
    lam = (rng.random((2, 4)) < 0.5).astype(float)
    whole = classification_loss(y, yt, lam, p)
    parts = sum(classification_loss(y[i:i + 1], yt[i:i + 1], lam[i:i + 1], p[i:i + 1]) for i in range(2))
    assert whole == pytest.approx(parts, abs=1e-12)
    assert whole == pytest.approx(an_loss(y, p) + pseudo_loss(yt, p) + weighted_loss(y, p, lam), abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_classification_grad_matches_differences(seed):
    rng = np.random.default_rng(seed)
    y = (rng.random((3, 3)) < 0.4).astype(int)
    yt = np.maximum(y, rng.random((3, 3)) < 0.4)
    lam = rng.random((3, 3))
    p = rng.uniform(0.05, 0.95, (3, 3))
    g = classification_grad(y, yt, lam, p)
    h = 1e-6
    for idx in np.ndindex(p.shape):
        up, dn = p.copy(), p.copy()
        up[idx] += h
        dn[idx] -= h
        fd = (classification_loss(y, yt, lam, up) - classification_loss(y, yt, lam, dn)) / (2 * h)
        assert abs(fd - g[idx]) / max(1, abs(fd)) < 1e-5


def pair(u, v, y1, y2):
    return np.array([[u], [v]], dtype=float), np.array([[y1], [y2]])


def test_csl_pair_terms():
    f, y = pair([1.0, 2.0], [2.0, 4.0], 1, 1)
    assert csl_loss(f, y) == pytest.approx(0.0, abs=1e-12)  # two ordered pairs, each 1 - 1
    f, y = pair([1.0, 2.0], [2.0, 4.0], 1, 0)
    assert csl_loss(f, y) == pytest.approx(4.0)
    for labels in ((1, 1), (0, 1), (0, 0)):
        f, y = pair([1.0, 0.0], [0.0, 3.0], *labels)
        assert csl_loss(f, y) == pytest.approx(2.0)
        assert csl_loss(f, y, reduction="mean") == pytest.approx(1.0)


def test_csl_queue_terms():
    f = np.array([[[1.0, 0.0]]])
    q = [np.array([[2.0, 0.0], [0.0, 1.0]])]
    assert csl_loss(f, np.array([[1]]), q) == pytest.approx(0.0 + 1.0)
    assert csl_loss(f, np.array([[0]]), q) == pytest.approx(2.0 + 1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["sum", "mean"]))
def test_csl_gradient(seed, reduction):
    rng = np.random.default_rng(seed)
    f = rng.normal(size=(3, 2, 4))
    y = (rng.random((3, 2)) < 0.5).astype(int)
    q = [rng.normal(size=(2, 4)), rng.normal(size=(0, 4))]
    _, g = csl_loss(f, y, q, reduction, with_grad=True)
    h = 1e-6
    for idx in np.ndindex(f.shape):
        up, dn = f.copy(), f.copy()
        up[idx] += h
        dn[idx] -= h
        fd = (csl_loss(up, y, q, reduction) - csl_loss(dn, y, q, reduction)) / (2 * h)
        assert abs(fd - g[idx]) / max(1, abs(fd)) < 1e-5


def test_total_loss():
    assert total_loss(1.0, 2.0, 0.0) == 1.0
    assert total_loss(1.0, 2.0) == pytest.approx(1.1)
