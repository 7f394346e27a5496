import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from satinfra.losses import bce, binary_dice, dice, hybrid_loss, jaccard

masks = arrays(np.bool_, st.tuples(st.integers(1, 6), st.integers(1, 6)))


def test_bce_half_is_ln2():
    y = np.array([1, 0, 1, 1, 0, 0], dtype=float)
    assert bce(np.full(6, 0.5), y) == pytest.approx(math.log(2), abs=1e-12)


def test_bce_perfect_prediction():
    y = np.array([1, 0, 1, 0], dtype=float)
    assert bce(y, y) <= 1.2e-7


def test_bce_hand_arithmetic():
    assert bce([0.9, 0.2], [1, 0]) == pytest.approx(-0.5 * (math.log(0.9) + math.log(0.8)), abs=1e-12)
    assert bce([0.9, 0.2], [1, 0]) == pytest.approx(0.164252, abs=1e-6)


def test_bce_rejects_non_binary_target():
    with pytest.raises(ValueError):
        bce([0.5], [0.3])


def test_bce_shape_mismatch():
    with pytest.raises(ValueError):
        bce([0.5, 0.5], [1])


def test_dice_examples():
    a = np.array([1.0, 1, 0, 0])
    assert dice(a, a) == 1.0
    assert dice([1, 0, 0, 0], [0, 1, 0, 0]) == 0.0
    assert dice([1, 1, 0, 0], [1, 0, 1, 0]) == pytest.approx(0.5)
    assert dice(np.zeros(4), np.zeros(4)) == 1.0


def test_hybrid_perfect():
    y = np.array([1, 0, 0, 1], dtype=float)
    assert hybrid_loss(y, y) <= 1.2e-7


def brute_dice(a, b):
    num = sum(2 * x * y for x, y in zip(a, b))
    den = sum(x * x for x in a) + sum(y * y for y in b)
    return num / den


def test_hybrid_half_prediction_four_pixels():
    # every 4-pixel target with two ones
    for ones in itertools.combinations(range(4), 2):
        y = np.zeros(4)
        y[list(ones)] = 1
        p = np.full(4, 0.5)
        expected = math.log(2) + (1 - brute_dice(p.tolist(), y.tolist()))
        assert hybrid_loss(p, y) == pytest.approx(expected, abs=1e-12)


def test_hybrid_strictly_increases_when_one_pixel_corrupted():
    rng = np.random.default_rng(0)
    y = (rng.random(16) < 0.5).astype(float)
    base = hybrid_loss(y, y)
    for i in range(16):
        p = y.copy()
        p[i] = 1 - p[i]
        assert hybrid_loss(p, y) > base


def test_jaccard_examples():
    a = np.zeros(10, bool)
    b = np.zeros(10, bool)
    a[:4] = True
    b[2:6] = True
    assert jaccard(a, a) == 1.0
    assert jaccard(a[:2], ~a[:2]) == 0.0
    assert jaccard(a, b) == pytest.approx(2 / 6)
    assert jaccard(np.zeros(3), np.zeros(3)) == 1.0
    with pytest.raises(ValueError):
        jaccard(a, b[:5])


@settings(max_examples=200, deadline=None)
@given(st.data())
def test_dice_jaccard_identity(data):
    a = data.draw(masks)
    b = data.draw(arrays(np.bool_, a.shape))
    j = jaccard(a, b)
    assert binary_dice(a, b) == pytest.approx(2 * j / (1 + j), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.data())
def test_symmetry(data):
    a = data.draw(masks)
    b = data.draw(arrays(np.bool_, a.shape))
    assert jaccard(a, b) == jaccard(b, a)
    assert dice(a, b) == dice(b, a)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_bce_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    p = rng.random(20)
    y = (rng.random(20) < 0.5).astype(float)
    perm = rng.permutation(20)
    assert bce(p[perm], y[perm]) == pytest.approx(bce(p, y), rel=1e-12)
