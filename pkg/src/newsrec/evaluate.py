"""Full-impression evaluation with an optional news-vector cache."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Callable, Sequence

import numpy as np

from . import metrics
from .batching import LAYOUTS, history_rows
from .data import FeatureMatrix, ImpressionRecord
from .model import ModelParams, encode_news, encode_user_concat, encode_user_zero_pad, score

ENCODE_CHUNK = 2048


@dataclass
class MetricsReport:
    auc: float
    mrr: float
    ndcg5: float
    ndcg10: float
    impressions: int
    skipped: int

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _mean(xs):
    return float(np.mean(xs)) if xs else 0.0


def impression_metrics(scored: Sequence[tuple[np.ndarray, np.ndarray]]) -> MetricsReport:
    """Unweighted means over impressions.

    AUC skips impressions lacking a positive or a negative; MRR and nDCG skip
    only those lacking a positive. ``skipped`` counts the AUC-degenerate ones.
    """
    aucs, mrrs, n5, n10 = [], [], [], []
    skipped = 0
    for s, y in scored:
        n_pos = int(np.sum(y))
        if n_pos == 0 or n_pos == len(y):
            skipped += 1
        else:
            aucs.append(metrics.auc(s, y))
        if n_pos:
            mrrs.append(metrics.mrr(s, y))
            n5.append(metrics.ndcg_at_k(s, y, 5))
            n10.append(metrics.ndcg_at_k(s, y, 10))
    return MetricsReport(_mean(aucs), _mean(mrrs), _mean(n5), _mean(n10), len(scored), skipped)


def encode_rows(rows: np.ndarray, fm: FeatureMatrix, params: ModelParams, encoder=encode_news) -> np.ndarray:
    out = [encoder(fm.rows[rows[s:s + ENCODE_CHUNK]], params) for s in range(0, len(rows), ENCODE_CHUNK)]
    if not out:
        return np.zeros((0, params.config.model_dim), dtype=params.config.dtype)
    return np.concatenate(out)


def score_impressions(params: ModelParams, impressions: Sequence[ImpressionRecord], fm: FeatureMatrix,
                      layout: str = "concat", max_history: int = 50, batch_size: int = 64,
                      use_cache: bool | None = None,
                      encoder: Callable[[np.ndarray, ModelParams], np.ndarray] = encode_news) -> list[np.ndarray]:
    """Score every candidate of every impression; returns one score vector per impression.

    With the cache on, every distinct news referenced anywhere is encoded once
    up front. Without it each batch encodes its own news (zero-pad: the full
    padded block, concat: the batch's distinct rows).
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    if use_cache is None:
        use_cache = layout == "concat"
    hists = [history_rows(imp.history, fm, max_history) for imp in impressions]
    cands = [[fm.row(nid) for nid, _ in imp.candidates] for imp in impressions]
    cache_pos = None
    if use_cache:
        distinct = np.unique(np.fromiter((r for group in (hists, cands) for rows in group for r in rows),
                                         dtype=np.int64))
        cache_vecs = encode_rows(distinct, fm, params, encoder)
        cache_pos = {int(r): i for i, r in enumerate(distinct)}

    out: list[np.ndarray] = []
    for s in range(0, len(impressions), batch_size):
        bh, bc = hists[s:s + batch_size], cands[s:s + batch_size]
        B = len(bh)
        c_max = max(len(c) for c in bc)
        if layout == "zero_pad":
            hist = np.zeros((B, max_history), dtype=np.int64)
            mask = np.zeros((B, max_history), dtype=np.int8)
            cand = np.zeros((B, c_max), dtype=np.int64)
            for b in range(B):
                hist[b, :len(bh[b])] = bh[b]
                mask[b, :len(bh[b])] = 1
                cand[b, :len(bc[b])] = bc[b]
            if use_cache:
                table = np.concatenate([np.zeros((1, cache_vecs.shape[1]), cache_vecs.dtype), cache_vecs])
                lookup = np.vectorize(lambda r: 0 if r == 0 else cache_pos[r] + 1, otypes=[np.int64])
                hvecs, cvecs = table[lookup(hist)], table[lookup(cand)]
            else:
                vecs = encode_rows(np.concatenate([hist.ravel(), cand.ravel()]), fm, params, encoder)
                hvecs = vecs[:hist.size].reshape(B, max_history, -1)
                cvecs = vecs[hist.size:].reshape(B, c_max, -1)
            users = encode_user_zero_pad(hvecs, mask, params)
        else:
            offsets = np.zeros(B + 1, dtype=np.int64)
            offsets[1:] = np.cumsum([len(h) for h in bh])
            flat = np.array([r for h in bh for r in h], dtype=np.int64)
            cand = np.zeros((B, c_max), dtype=np.int64)
            for b in range(B):
                cand[b, :len(bc[b])] = bc[b]
            if use_cache:
                table = cache_vecs
                remap = cache_pos
            else:
                rows = np.unique(np.concatenate([flat, np.concatenate([np.asarray(c) for c in bc])]))
                table = encode_rows(rows, fm, params, encoder)
                remap = {int(r): i for i, r in enumerate(rows)}
            index = np.array([remap[int(r)] for r in flat], dtype=np.int64)
            users = encode_user_concat(table, index, offsets, params)
            cvecs = np.zeros((B, c_max, table.shape[1]), dtype=table.dtype)
            for b in range(B):
                cvecs[b, :len(bc[b])] = table[[remap[r] for r in bc[b]]]
        scores = score(users, cvecs)
        out.extend(scores[b, :len(bc[b])] for b in range(B))
    return out


def evaluate_model(params: ModelParams, impressions: Sequence[ImpressionRecord], fm: FeatureMatrix,
                   layout: str = "concat", max_history: int = 50, batch_size: int = 64,
                   use_cache: bool | None = None, encoder=encode_news) -> MetricsReport:
    scores = score_impressions(params, impressions, fm, layout, max_history, batch_size, use_cache, encoder)
    return impression_metrics([(s, np.array(imp.labels)) for s, imp in zip(scores, impressions)])
