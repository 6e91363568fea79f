import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from newsrec.metrics import DegenerateImpression, auc, mrr, ndcg_at_k

from oracles import auc_pairs, mrr_loop, ndcg_loop, random_impression


@pytest.mark.parametrize("scores,labels,expected", [
    ([0.9, 0.1], [1, 0], 1.0),
    ([0.3, 0.7, 0.5], [1, 0, 0], 0.0),
    ([0.5, 0.5], [1, 0], 0.5),
])
def test_auc_examples(scores, labels, expected):
    assert auc(scores, labels) == expected


def test_mrr_examples():
    assert mrr([0.9, 0.2, 0.1], [1, 0, 0]) == 1.0
    assert mrr([0.9, 0.5, 0.1], [0, 1, 0]) == 0.5
    assert mrr([0.9, 0.5, 0.1], [1, 0, 1]) == pytest.approx(2 / 3, abs=0)


def test_ndcg_examples():
    assert ndcg_at_k([0.9, 0.2, 0.1], [1, 0, 0], 5) == 1.0
    assert ndcg_at_k([0.9, 0.5, 0.1, 0.0], [0, 0, 1, 0], 5) == 0.5
    assert ndcg_at_k([6, 5, 4, 3, 2, 1], [0, 0, 0, 0, 0, 1], 5) == 0.0


def test_ties_follow_original_order():
    # equal scores: the earlier candidate ranks first
    assert mrr([1.0, 1.0, 1.0], [0, 1, 0]) == 0.5
    assert ndcg_at_k([1.0, 1.0], [0, 1], 1) == 0.0


@pytest.mark.parametrize("fn", [mrr, lambda s, y: ndcg_at_k(s, y, 5)])
def test_no_positive_is_degenerate(fn):
    with pytest.raises(DegenerateImpression):
        fn([0.1, 0.2], [0, 0])


@pytest.mark.parametrize("labels", [[0, 0, 0], [1, 1, 1]])
def test_auc_one_class_is_degenerate(labels):
    with pytest.raises(DegenerateImpression):
        auc([0.1, 0.2, 0.3], labels)


def test_rejects_bad_input():
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 2])
    with pytest.raises(ValueError):
        mrr([0.1], [1, 0])
    with pytest.raises(ValueError):
        ndcg_at_k([0.1, 0.2], [1, 0], 0)


def test_against_brute_force_with_ties():
    rng = np.random.default_rng(5)
    for _ in range(300):
        s, y = random_impression(rng, ties=True)
        assert abs(auc(s, y) - auc_pairs(s, y)) <= 1e-12
        assert abs(mrr(s, y) - mrr_loop(s, y)) <= 1e-12
        for k in (1, 5, 10):
            assert abs(ndcg_at_k(s, y, k) - ndcg_loop(s, y, k)) <= 1e-12


impressions = st.integers(2, 25).flatmap(lambda n: st.tuples(
    st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda y: 0 < sum(y) < len(y)),
))


@settings(max_examples=200, deadline=None)
@given(impressions)
def test_bounds(imp):
    s, y = imp
    for value in (auc(s, y), mrr(s, y), ndcg_at_k(s, y, 5), ndcg_at_k(s, y, 10)):
        assert 0.0 <= value <= 1.0 + 1e-12


@settings(max_examples=200, deadline=None)
@given(impressions)
def test_strictly_increasing_transform_is_invisible(imp):
    s, y = imp
    t = [math.atan(v / 100.0) * 3.0 + 7.0 for v in s]
    # the transform must not merge distinct scores in floating point
    if len(set(t)) != len(set(s)):
        return
    assert auc(t, y) == auc(s, y)
    assert mrr(t, y) == mrr(s, y)
    assert ndcg_at_k(t, y, 5) == ndcg_at_k(s, y, 5)
