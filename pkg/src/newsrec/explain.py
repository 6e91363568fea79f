"""Topic-centric explanations from the topic-attention model.

The user's topic mixture is the mean of their history news mixtures. A
topic's shared score is ``min(user_weight, news_weight)``; the top topics by
shared score are reported together with the words that load most on each
topic, taken from the history and from the recommended article.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .data import FeatureMatrix, Vocabulary
from .model import ModelParams, topic_attention


@dataclass
class SharedTopic:
    topic: int
    user_weight: float
    news_weight: float
    shared: float
    history_terms: list[str]
    news_terms: list[str]


@dataclass
class TopicExplanation:
    user_id: str
    news_id: str
    history: list[str]
    user_mixture: np.ndarray
    news_mixture: np.ndarray
    topics: list[SharedTopic]
    text: str


def _top_terms(tokens: np.ndarray, weights: np.ndarray, topic: int, vocab: Vocabulary, m: int) -> list[str]:
    """Words present in ``tokens`` ranked by their weight on ``topic`` (max over occurrences)."""
    best: dict[str, float] = {}
    for row_tokens, row_weights in zip(tokens, weights):
        for tok, w in zip(row_tokens, row_weights[:, topic]):
            if tok < 2:  # padding and unknown words cannot be named
                continue
            word = vocab.words[tok]
            if w > best.get(word, -1.0):
                best[word] = float(w)
    return [w for w, _ in sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))[:m]]


def _highlight(tokens: np.ndarray, vocab: Vocabulary, terms: set[str], delims: tuple[str, str]) -> str:
    words = [vocab.words[t] for t in tokens if t != 0]
    return " ".join(f"{delims[0]}{w}{delims[1]}" if w in terms else w for w in words)


def generate_explanation(user_history: Sequence[str], recommended: str, params: ModelParams, fm: FeatureMatrix,
                         vocab: Vocabulary, top_t: int = 3, top_m: int = 5, user_id: str = "",
                         categories: Mapping[str, str] | None = None,
                         delimiters: tuple[str, str] = ("[[", "]]")) -> TopicExplanation:
    if not user_history:
        raise ValueError("an explanation needs a non-empty browsing history")
    if top_t < 1 or top_m < 1:
        raise ValueError("top_t and top_m must be >= 1")
    hist_rows = np.array([fm.row(n) for n in user_history])
    rec_row = fm.row(recommended)
    tokens = fm.rows[np.append(hist_rows, rec_row)]
    mixtures, word_weights = topic_attention(tokens, params)
    user_mix = mixtures[:-1].mean(axis=0)
    news_mix = mixtures[-1]
    shared = np.minimum(user_mix, news_mix)
    order = np.argsort(-shared, kind="stable")[:top_t]

    topics = []
    for k in order:
        topics.append(SharedTopic(
            topic=int(k),
            user_weight=float(user_mix[k]),
            news_weight=float(news_mix[k]),
            shared=float(shared[k]),
            history_terms=_top_terms(tokens[:-1], word_weights[:-1], int(k), vocab, top_m),
            news_terms=_top_terms(tokens[-1:], word_weights[-1:], int(k), vocab, top_m),
        ))

    cats = categories or {}
    hist_terms = {w for t in topics for w in t.history_terms}
    news_terms = {w for t in topics for w in t.news_terms}
    lines = [f"Explanation for user {user_id or '?'} -> {recommended}", "", "Browsing history:"]
    for nid, row in zip(user_history, hist_rows):
        lines.append(f"  {nid} [{cats.get(nid, '-')}] {_highlight(fm.rows[row], vocab, hist_terms, delimiters)}")
    lines += ["", "Recommended:",
              f"  {recommended} [{cats.get(recommended, '-')}] "
              f"{_highlight(fm.rows[rec_row], vocab, news_terms, delimiters)}", "", "Shared topics:"]
    for t in topics:
        h = ", ".join(f"{delimiters[0]}{w}{delimiters[1]}" for w in t.history_terms) or "-"
        n = ", ".join(f"{delimiters[0]}{w}{delimiters[1]}" for w in t.news_terms) or "-"
        lines.append(f"  topic {t.topic}: shared={t.shared:.4f} user={t.user_weight:.4f} news={t.news_weight:.4f}")
        lines.append(f"    history terms: {h}")
        lines.append(f"    article terms: {n}")
    lead = topics[0]
    lead_h = ", ".join(lead.history_terms[:3]) or "its recurring words"
    lead_n = ", ".join(lead.news_terms[:3]) or "related words"
    lines += ["", f"Rationale: the history of user {user_id or '?'} leans on topic {lead.topic} "
                  f"({lead_h}); {recommended} carries the same topic through {lead_n}"
                  + (f", with {len(topics) - 1} further shared topic(s) listed above." if len(topics) > 1 else ".")]
    return TopicExplanation(user_id, recommended, list(user_history), user_mix, news_mix, topics,
                            "\n".join(lines) + "\n")
