"""Impression-level ranking metrics.

Ties are resolved by a stable sort on the original candidate order, so every
value is reproducible.
"""

import numpy as np
from scipy.stats import rankdata


class DegenerateImpression(ValueError):
    """The impression lacks the positives/negatives the metric needs."""


def _arrays(scores, labels):
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise ValueError(f"scores {s.shape} and labels {y.shape} must be equal-length vectors")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(bool)


def auc(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ordered correctly, ties counting 1/2."""
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateImpression("AUC needs at least one positive and one negative")
    ranks = rankdata(s)  # average ranks handle ties
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def _ranked_labels(s, y):
    order = np.argsort(-s, kind="stable")
    return y[order]


def mrr(scores, labels) -> float:
    s, y = _arrays(scores, labels)
    if not y.any():
        raise DegenerateImpression("MRR needs at least one positive")
    ranked = _ranked_labels(s, y)
    ranks = np.flatnonzero(ranked) + 1
    return float(np.mean(1.0 / ranks))


def ndcg_at_k(scores, labels, k: int) -> float:
    """Binary-gain nDCG truncated at ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    s, y = _arrays(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DegenerateImpression("nDCG needs at least one positive")
    discounts = 1.0 / np.log2(np.arange(2, len(y) + 2))
    ranked = _ranked_labels(s, y)[:k]
    dcg = float((ranked * discounts[:len(ranked)]).sum())
    idcg = float(discounts[:min(n_pos, k)].sum())
    return dcg / idcg
