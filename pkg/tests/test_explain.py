import math

import numpy as np
import pytest

from newsrec.data import FeatureMatrix, Vocabulary
from newsrec.explain import generate_explanation
from newsrec.model import ModelConfig

from conftest import random_params


def hand_model():
    vocab = Vocabulary(["<pad>", "<unk>", "goal", "vote"])
    cfg = ModelConfig(vocab_size=4, embed_dim=2, heads=1, head_dim=2, attn_dim=2, n_topics=2, variant="topic",
                      dtype="float64")
    p = random_params(cfg, 0)
    p.tensors["embedding"][2] = [5.0, 0.0]  # "goal" leans on topic 0
    p.tensors["embedding"][3] = [0.0, 0.0]  # "vote" is split evenly
    p.tensors["topic.theta"][:] = np.eye(2)
    rows = np.array([[0, 0], [2, 2], [2, 3], [3, 0]])
    fm = FeatureMatrix(rows, ["H1", "R1", "R2"], 2)
    return p, fm, vocab


def test_hand_set_topics_rank_shared_topic_first():
    p, fm, vocab = hand_model()
    ex = generate_explanation(["H1"], "R1", p, fm, vocab, top_t=2, top_m=2, user_id="U9")
    lead = math.exp(5) / (math.exp(5) + 1)
    assert np.allclose(ex.user_mixture, [lead, 1 - lead], atol=1e-15)
    assert np.allclose(ex.news_mixture, [(lead + 0.5) / 2, (1 - lead + 0.5) / 2], atol=1e-15)
    assert [t.topic for t in ex.topics] == [0, 1]
    assert ex.topics[0].shared == pytest.approx(min(lead, (lead + 0.5) / 2), abs=1e-15)
    assert ex.topics[0].history_terms == ["goal"] and ex.topics[0].news_terms == ["goal", "vote"]


def test_self_recommendation_shares_whole_mixture():
    p, fm, vocab = hand_model()
    ex = generate_explanation(["R1"], "R1", p, fm, vocab, top_t=2)
    assert np.array_equal(ex.user_mixture, ex.news_mixture)
    assert [t.shared for t in ex.topics] == sorted(ex.news_mixture.tolist(), reverse=True)


def test_text_layout_and_terms():
    p, fm, vocab = hand_model()
    ex = generate_explanation(["H1", "R2"], "R1", p, fm, vocab, top_t=1, top_m=3, user_id="U9",
                              categories={"H1": "sports"}, delimiters=("<", ">"))
    lines = ex.text.splitlines()
    assert lines[0] == "Explanation for user U9 -> R1"
    assert "Browsing history:" in lines and "Recommended:" in lines and "Shared topics:" in lines
    assert lines[-1].startswith("Rationale: ")
    assert "  H1 [sports] <goal> <goal>" in lines
    hist_words = {vocab.words[t] for r in ("H1", "R2") for t in fm.rows[fm.row(r)] if t}
    for t in ex.topics:
        assert set(t.history_terms) <= hist_words
        assert set(t.news_terms) <= {vocab.words[t] for t in fm.rows[fm.row("R1")] if t}


def test_empty_history_rejected():
    p, fm, vocab = hand_model()
    with pytest.raises(ValueError, match="history"):
        generate_explanation([], "R1", p, fm, vocab)
    with pytest.raises(KeyError):
        generate_explanation(["H1"], "R404", p, fm, vocab)
