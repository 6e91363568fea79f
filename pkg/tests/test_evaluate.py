import numpy as np
import pytest

from newsrec.data import ImpressionRecord
from newsrec.evaluate import evaluate_model, impression_metrics, score_impressions
from newsrec.model import encode_news

from conftest import random_feature_matrix, random_params, tiny_config
from oracles import report_loop


class CountingEncoder:
    def __init__(self):
        self.rows = 0

    def __call__(self, tokens, params):
        self.rows += len(tokens)
        return encode_news(tokens, params)


def random_impressions(rng, n, n_news, max_hist=8):
    out = []
    for i in range(n):
        hist = tuple(f"N{j}" for j in rng.integers(1, n_news + 1, size=int(rng.integers(0, max_hist + 1))))
        cands = rng.choice(np.arange(1, n_news + 1), size=int(rng.integers(2, 12)), replace=False)
        labels = rng.integers(0, 2, size=len(cands))
        out.append(ImpressionRecord(str(i), f"U{i}", "t", hist,
                                    tuple((f"N{c}", int(y)) for c, y in zip(cands, labels))))
    return out


def test_cache_encodes_each_news_once():
    rng = np.random.default_rng(0)
    fm = random_feature_matrix(rng, 30, 4, 20)
    p = random_params(tiny_config(), 0)
    cands = tuple((f"N{i}", int(i == 3)) for i in range(1, 11))
    imps = [ImpressionRecord("1", "U1", "t", ("N11", "N12"), cands),
            ImpressionRecord("2", "U2", "t", ("N12", "N13"), cands)]
    counter = CountingEncoder()
    evaluate_model(p, imps, fm, "concat", max_history=5, encoder=counter)
    assert counter.rows == 13
    counter = CountingEncoder()
    evaluate_model(p, imps, fm, "zero_pad", max_history=5, use_cache=True, encoder=counter)
    assert counter.rows == 13


@pytest.mark.parametrize("layout", ["zero_pad", "concat"])
def test_cache_soundness(layout):
    rng = np.random.default_rng(1)
    fm = random_feature_matrix(rng, 40, 5, 20)
    p = random_params(tiny_config("topic"), 1)
    imps = random_impressions(rng, 60, 40)
    a = evaluate_model(p, imps, fm, layout, max_history=8, batch_size=7, use_cache=True)
    b = evaluate_model(p, imps, fm, layout, max_history=8, batch_size=7, use_cache=False)
    for field in ("auc", "mrr", "ndcg5", "ndcg10"):
        assert abs(getattr(a, field) - getattr(b, field)) <= 1e-6
    assert (a.impressions, a.skipped) == (b.impressions, b.skipped)


def test_layouts_score_alike():
    rng = np.random.default_rng(2)
    fm = random_feature_matrix(rng, 40, 5, 20)
    p = random_params(tiny_config(), 2)
    imps = random_impressions(rng, 30, 40)
    zp = score_impressions(p, imps, fm, "zero_pad", 8, 5)
    cc = score_impressions(p, imps, fm, "concat", 8, 9)
    for a, b in zip(zp, cc):
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


def test_report_matches_brute_force():
    rng = np.random.default_rng(3)
    fm = random_feature_matrix(rng, 40, 5, 20)
    p = random_params(tiny_config(), 3)
    imps = random_impressions(rng, 80, 40)
    scores = score_impressions(p, imps, fm, "concat", 8)
    report = evaluate_model(p, imps, fm, "concat", 8)
    expected = report_loop([(s, imp.labels) for s, imp in zip(scores, imps)])
    for field, value in expected.items():
        assert abs(getattr(report, field) - value) <= 1e-12
    assert report.impressions == 80
    assert report.skipped == sum(1 for imp in imps if sum(imp.labels) in (0, len(imp.labels)))


def test_degenerate_impressions_are_counted():
    s = np.array([0.3, 0.1])
    report = impression_metrics([(s, np.array([0, 0])), (s, np.array([1, 0])), (s, np.array([1, 1]))])
    assert report.impressions == 3 and report.skipped == 2
    assert report.auc == 1.0
    # the all-positive impression still has a defined reciprocal rank
    assert report.mrr == pytest.approx((1.0 + 0.75) / 2)
    for v in (report.auc, report.mrr, report.ndcg5, report.ndcg10):
        assert 0.0 <= v <= 1.0
    assert "skipped=2" in report.to_text()
