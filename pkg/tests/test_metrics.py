import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvmc.fusion_ap import PairwiseOrdering, ap_loss
from mvmc.metrics import (auc, average_precision, hamming_loss, mean_average_precision,
                          mean_over_labels, ranking)
from mvmc.errors import UndefinedMetricError

TRUTH = np.array([1, -1, -1, -1, 1, -1, -1, -1])
S1 = np.array([0.4, 0.3, 0.2, 0.1, -0.1, -0.2, -0.3, -0.4])


def test_ap_examples():
    assert abs(average_precision(S1, TRUTH) - 0.7) < 1e-12
    assert abs(average_precision(-S1, TRUTH) - 0.25) < 1e-12
    assert average_precision([3, 2, 1, 0], [1, 1, -1, -1]) == 1.0


def test_ap_requires_positive():
    with pytest.raises(UndefinedMetricError):
        average_precision([1, 2], [-1, -1])


def test_ap_ties_break_by_index():
    # all scores equal: ranking is the original order
    np.testing.assert_array_equal(ranking(np.zeros(4)), [0, 1, 2, 3])
    assert average_precision(np.zeros(4), [-1, 1, -1, -1]) == 0.5


def test_auc_examples():
    assert auc([3, 2, 1, 0], [1, 1, -1, -1]) == 1.0
    assert auc(np.zeros(5), [1, -1, 1, -1, -1]) == 0.5
    pairs = [(i, j) for i in np.flatnonzero(TRUTH > 0) for j in np.flatnonzero(TRUTH < 0)]
    brute = np.mean([1.0 if S1[i] > S1[j] else 0.5 if S1[i] == S1[j] else 0.0 for i, j in pairs])
    assert auc(S1, TRUTH) == pytest.approx(brute, abs=1e-15)
    # positives at ranks 1 and 5 beat 6 and 3 of the 6 negatives
    assert auc(S1, TRUTH) == pytest.approx(9 / 12, abs=1e-15)
    with pytest.raises(UndefinedMetricError):
        auc([1, 2], [1, 1])


def test_hamming_examples():
    T = np.array([[1, -1], [-1, 1]])
    assert hamming_loss(T, T) == 0
    assert hamming_loss(-T, T) == 1
    P = T.copy()
    P[0, 0] = -1
    assert hamming_loss(P, T) == 0.25


def test_mean_over_labels_examples():
    assert mean_over_labels([0.7, 0.25]).value == pytest.approx(0.475)
    assert mean_over_labels([1.0]).value == 1.0
    r = mean_over_labels([0.7, None, 0.25])
    assert r.value == pytest.approx(0.475) and r.skipped == 1
    with pytest.raises(UndefinedMetricError):
        mean_over_labels([None])


def test_mean_ap_skips_undefined_labels():
    scores = np.array([[0.9, 0.1, 0.5], [0.2, 0.3, 0.4]])
    truth = np.array([[1, -1, -1], [-1, -1, -1]])
    r = mean_average_precision(scores, truth)
    assert r.value == 1.0 and r.skipped == 1


# a 0.1 grid keeps every map below strictly increasing in floating point
scores_st = st.lists(st.integers(-50, 50).map(lambda i: i / 10), min_size=2, max_size=8)


@settings(max_examples=100, deadline=None)
@given(scores_st, st.integers(0, 2**31 - 1))
def test_ap_auc_invariant_under_increasing_maps(scores, seed):
    s = np.array(scores)
    rng = np.random.default_rng(seed)
    y = np.where(rng.random(s.size) < 0.5, 1, -1)
    y[0], y[-1] = 1, -1
    for f in (lambda x: 1 / (1 + np.exp(-x)), lambda x: 3.0 * x + 1.0, np.exp):
        assert average_precision(f(s), y) == average_precision(s, y)
        assert auc(f(s), y) == auc(s, y)
    ap, a = average_precision(s, y), auc(s, y)
    assert 0 <= ap <= 1 and 0 <= a <= 1


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 8), st.integers(0, 2**31 - 1))
def test_ap_matches_precision_at_k_enumeration(n, seed):
    rng = np.random.default_rng(seed)
    y = np.where(rng.random(n) < 0.5, 1, -1)
    y[0] = 1
    s = rng.standard_normal(n)
    order = sorted(range(n), key=lambda i: (-s[i], i))
    precs = []
    for k in range(1, n + 1):
        if y[order[k - 1]] > 0:
            precs.append(sum(y[order[i]] > 0 for i in range(k)) / k)
    brute = sum(precs) / len(precs)
    assert average_precision(s, y) == pytest.approx(brute, abs=1e-14)
    assert 1 - ap_loss(y, PairwiseOrdering.from_scores(s)) == pytest.approx(brute, abs=1e-14)


def test_ap_loss_examples():
    assert ap_loss(TRUTH, PairwiseOrdering.truth(TRUTH)) == 0.0
    assert ap_loss(TRUTH, PairwiseOrdering.from_scores(S1)) == pytest.approx(0.3, abs=1e-12)
    assert ap_loss(TRUTH, PairwiseOrdering.from_scores(-S1)) == pytest.approx(0.75, abs=1e-12)
