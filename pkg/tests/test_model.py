import math

import numpy as np
import pytest

from newsrec import layers
from newsrec.batching import BatchPlan, TrainingInstance, build_concat_batch, build_zero_pad_batch
from newsrec.model import (ModelConfig, ModelParams, StaleTraceError, additive_attention_pool, backward, embed_tokens,
                           encode_news, encode_user_concat, encode_user_zero_pad, forward, loss_and_grads,
                           multi_head_self_attention, score, topic_attention, training_loss)

from conftest import random_feature_matrix, random_instances, random_params, tiny_config


def test_embed_lookup():
    p = random_params(tiny_config(), 0)
    out = embed_tokens(np.array([[0, 0, 0], [3, 3, 5]]), p)
    assert not out[0].any()
    assert np.array_equal(out[1, 0], p["embedding"][3]) and np.array_equal(out[1, 0], out[1, 1])
    with pytest.raises(IndexError):
        embed_tokens(np.array([[20]]), p)


def test_attention_hand_computed_two_by_two():
    x = np.array([[[1.0, 0.0], [0.0, 1.0]]])
    eye = np.eye(2)
    out, _ = layers.mhsa_forward(x, np.ones((1, 2)), eye, eye, eye, eye, heads=1)
    a = math.exp(1 / math.sqrt(2))
    w_self, w_other = a / (a + 1), 1 / (a + 1)
    assert np.allclose(out[0], [[w_self, w_other], [w_other, w_self]], atol=1e-15, rtol=0)


def test_attention_singleton_and_symmetry():
    rng = np.random.default_rng(0)
    wq, wk, wv, wo = (rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4)),
                      rng.normal(size=(4, 4)))
    x = rng.normal(size=(1, 1, 3))
    out, cache = layers.mhsa_forward(x, np.ones((1, 1)), wq, wk, wv, wo, heads=2)
    assert np.all(cache[5] == 1.0)
    assert np.allclose(out[0, 0], x[0, 0] @ wv @ wo, atol=1e-14)
    twin = np.repeat(x, 2, axis=1)
    out2, _ = layers.mhsa_forward(twin, np.ones((1, 2)), wq, wk, wv, wo, heads=2)
    assert np.array_equal(out2[0, 0], out2[0, 1])
    empty, _ = layers.mhsa_forward(twin, np.zeros((1, 2)), wq, wk, wv, wo, heads=2)
    assert not empty.any()
    with pytest.raises(ValueError):
        layers.mhsa_forward(rng.normal(size=(1, 2, 5)), np.ones((1, 2)), wq, wk, wv, wo, heads=2)


def test_pool_hand_computed():
    h = np.array([[[1.0, 0.0], [0.0, 2.0]]])
    out = additive_attention_pool(h, np.ones((1, 2)), np.eye(2), np.zeros(2), np.ones(2))
    e0, e1 = math.tanh(1.0), math.tanh(2.0)
    a0 = math.exp(e0) / (math.exp(e0) + math.exp(e1))
    assert np.allclose(out[0], [a0, 2 * (1 - a0)], atol=1e-15, rtol=0)


def test_pool_degenerate_cases():
    rng = np.random.default_rng(1)
    w, b, v = rng.normal(size=(5, 3)), rng.normal(size=5), rng.normal(size=5)
    row = rng.normal(size=(1, 1, 3))
    assert np.allclose(additive_attention_pool(row, np.ones((1, 1)), w, b, v), row[:, 0], atol=1e-15)
    twin = np.repeat(row, 2, axis=1)
    assert np.allclose(additive_attention_pool(twin, np.ones((1, 2)), w, b, v), row[:, 0], atol=1e-15)
    assert not additive_attention_pool(twin, np.zeros((1, 2)), w, b, v).any()


def test_masked_softmax_rows_sum_to_one():
    rng = np.random.default_rng(2)
    logits = rng.normal(size=(50, 7)) * 30
    mask = rng.integers(0, 2, size=(50, 7))
    mask[0] = 0
    p = layers.masked_softmax(logits, mask)
    sums = p.sum(axis=1)
    assert np.all(np.abs(sums[mask.any(axis=1)] - 1) <= 1e-6)
    assert not p[0].any() and not p[mask == 0].any()


@pytest.mark.parametrize("variant", ["nrms", "topic"])
def test_news_encoder_rows_are_independent(variant):
    p = random_params(tiny_config(variant), 3)
    tokens = np.array([[0, 0, 0, 0], [2, 5, 0, 0], [7, 1, 9, 4]])
    out = encode_news(tokens, p)
    assert not out[0].any()
    swapped = encode_news(tokens[[0, 2, 1]], p)
    assert np.allclose(swapped, out[[0, 2, 1]], atol=1e-14)


def test_single_token_news_composes_singletons():
    p = random_params(tiny_config(), 4)
    emb = p["embedding"][6]
    attended = emb @ p["news_attn.wv"] @ p["news_attn.wo"]
    assert np.allclose(encode_news(np.array([[6, 0, 0, 0]]), p)[0], attended, atol=1e-12)


def test_user_encoder_singleton_empty_and_padding():
    p = random_params(tiny_config(), 5)
    rng = np.random.default_rng(0)
    vec = rng.normal(size=8)
    hist = np.zeros((2, 3, 8))
    hist[0, 0] = vec
    mask = np.array([[1, 0, 0], [0, 0, 0]])
    user = encode_user_zero_pad(hist, mask, p)
    assert np.allclose(user[0], vec @ p["user_attn.wv"] @ p["user_attn.wo"], atol=1e-12)
    assert not user[1].any()
    noisy = hist.copy()
    noisy[:, 1:] = rng.normal(size=(2, 2, 8))
    noisy[1] = rng.normal(size=(3, 8))
    assert np.array_equal(encode_user_zero_pad(noisy, mask, p), user)


def test_user_concat_matches_zero_pad_and_validates_offsets():
    p = random_params(tiny_config(), 6)
    rng = np.random.default_rng(1)
    unique = rng.normal(size=(6, 8))
    index = np.array([0, 3, 1, 1, 2, 5, 4, 0])
    offsets = np.array([0, 2, 2, 5, 8])
    concat = encode_user_concat(unique, index, offsets, p)
    padded = np.zeros((4, 3, 8))
    mask = np.zeros((4, 3))
    for b in range(4):
        seg = index[offsets[b]:offsets[b + 1]]
        padded[b, :len(seg)] = unique[seg]
        mask[b, :len(seg)] = 1
    assert np.max(np.abs(concat - encode_user_zero_pad(padded, mask, p))) <= 1e-12
    shared = encode_user_concat(unique, np.array([2, 4, 2, 4]), np.array([0, 2, 4]), p)
    assert np.array_equal(shared[0], shared[1])
    with pytest.raises(ValueError):
        encode_user_concat(unique, index, np.array([0, 5, 2, 8, 8]), p)
    with pytest.raises(ValueError):
        encode_user_concat(unique, np.array([0, 9]), np.array([0, 2]), p)


def test_topic_attention_sharpens_at_low_temperature():
    cfg = ModelConfig(vocab_size=4, embed_dim=2, heads=1, head_dim=2, attn_dim=2, n_topics=2, tau=0.01,
                      variant="topic", dtype="float64")
    p = random_params(cfg, 0)
    p.tensors["embedding"][2] = [1.0, 0.0]
    p.tensors["topic.theta"][:] = [[1.0, 0.0], [0.0, 1.0]]
    mix, weights = topic_attention(np.array([[2, 2, 2], [0, 0, 0]]), p)
    assert weights[0, 0, 0] > 0.99
    assert np.allclose(mix[0], weights[0, 0], atol=1e-15)
    assert mix[1].tolist() == [0.5, 0.5]


def test_topic_rows_are_distributions():
    p = random_params(tiny_config("topic"), 7)
    tokens = np.array([[0, 0, 0, 0], [2, 5, 0, 0], [7, 1, 9, 4]])
    mix, weights = topic_attention(tokens, p)
    assert np.all(np.abs(weights.sum(axis=-1) - 1) <= 1e-6)
    assert np.all(np.abs(mix.sum(axis=-1) - 1) <= 1e-6)
    with pytest.raises(ValueError):
        topic_attention(tokens, random_params(tiny_config(), 0))


def test_score_and_loss_arithmetic():
    assert score(np.array([[1.0, 2.0]]), np.array([[[3.0, -1.0]]]))[0, 0] == 1.0
    u = np.array([[3.0, 4.0]])
    assert score(u, np.array([[[3.0, 4.0], [-4.0, 3.0]]])).tolist() == [[25.0, 0.0]]
    assert training_loss(np.zeros((3, 5)), np.array([0, 2, 4])) == pytest.approx(math.log(5), abs=1e-15)
    assert training_loss(np.array([[1.0, 0.0]]), np.array([0])) == pytest.approx(
        -math.log(math.e / (math.e + 1)), abs=1e-15)
    assert abs(training_loss(np.array([[1.0, 0.0]]), np.array([0])) - 0.3133) < 1e-4
    assert training_loss(np.array([[20.0, 0, 0, 0, 0]]), np.array([0])) < 1e-3
    with pytest.raises(FloatingPointError):
        training_loss(np.array([[np.nan, 0.0]]), np.array([0]))
    with pytest.raises(ValueError):
        score(np.ones((2, 3)), np.ones((2, 4, 2)))


def _batch(rng, layout, n=5, negatives=4, max_history=6, vocab=20, fm=None):
    fm = fm or random_feature_matrix(rng, 30, 4, vocab)
    insts = random_instances(rng, n, 30, max_history, negatives)
    plan = BatchPlan(batch_size=n, negatives=negatives, max_history=max_history)
    build = build_zero_pad_batch if layout == "zero_pad" else build_concat_batch
    return build(insts, fm, plan), insts, fm, plan


@pytest.mark.parametrize("variant", ["nrms", "topic"])
def test_masked_slots_are_invisible(variant):
    rng = np.random.default_rng(8)
    p = random_params(tiny_config(variant), 8)
    batch, *_ = _batch(rng, "zero_pad")
    batch.history_mask[0, :] = 0
    batch.history_tokens[0] = 0
    base = loss_and_grads(batch, p)
    t0 = forward(batch, p)
    # scribble over every masked history slot
    hidden = batch.history_mask == 0
    batch.history_tokens[hidden] = rng.integers(1, 20, size=(int(hidden.sum()), 4))
    t1 = forward(batch, p)
    assert np.array_equal(t0.scores, t1.scores) and t0.loss == t1.loss
    after = backward(batch, p, t1)
    for name in base[1]:
        if name == "embedding":
            continue  # scribbled tokens differ, their rows must still get zero gradient
        assert np.array_equal(base[1][name], after[name]), name
    touched = np.unique(batch.history_tokens[hidden])
    only_masked = np.setdiff1d(touched, np.concatenate([batch.history_tokens[~hidden].ravel(),
                                                        batch.candidate_tokens.ravel()]))
    assert not after["embedding"][only_masked].any()


@pytest.mark.parametrize("layout", ["zero_pad", "concat"])
def test_permuting_instances_permutes_scores(layout):
    rng = np.random.default_rng(9)
    p = random_params(tiny_config(), 9)
    batch, insts, fm, plan = _batch(rng, layout)
    perm = [3, 0, 4, 1, 2]
    build = build_zero_pad_batch if layout == "zero_pad" else build_concat_batch
    shuffled = build([insts[i] for i in perm], fm, plan)
    a, b = forward(batch, p), forward(shuffled, p)
    assert np.allclose(b.scores, a.scores[perm], atol=1e-12, rtol=0)
    assert abs(a.loss - b.loss) <= 1e-12


def test_stale_trace_rejected():
    rng = np.random.default_rng(10)
    p = random_params(tiny_config(), 10)
    batch, *_ = _batch(rng, "concat")
    other, *_ = _batch(rng, "concat")
    trace = forward(batch, p)
    with pytest.raises(StaleTraceError):
        backward(other, p, trace)
    p.bump()
    with pytest.raises(StaleTraceError):
        backward(batch, p, trace)


def test_frozen_embedding_gets_zero_gradient():
    rng = np.random.default_rng(11)
    p = random_params(tiny_config(train_embedding=False), 11)
    batch, *_ = _batch(rng, "zero_pad")
    _, grads = loss_and_grads(batch, p)
    assert not grads["embedding"].any() and not p.trainable("embedding")
    assert grads["user_pool.v"].any()


@pytest.mark.parametrize("layout", ["zero_pad", "concat"])
def test_duplicated_instance_has_single_instance_gradient(layout):
    rng = np.random.default_rng(12)
    p = random_params(tiny_config("topic"), 12)
    fm = random_feature_matrix(rng, 30, 4, 20)
    inst = random_instances(rng, 1, 30, 6, 4, min_history=2)[0]
    one = BatchPlan(batch_size=1, negatives=4, max_history=6)
    two = BatchPlan(batch_size=2, negatives=4, max_history=6)
    build = build_zero_pad_batch if layout == "zero_pad" else build_concat_batch
    l1, g1 = loss_and_grads(build([inst], fm, one), p)
    l2, g2 = loss_and_grads(build([inst, inst], fm, two), p)
    assert abs(l1 - l2) <= 1e-12
    for name in g1:
        assert np.allclose(g1[name], g2[name], rtol=1e-10, atol=1e-14), name


def test_empty_history_user_is_zero():
    rng = np.random.default_rng(13)
    p = random_params(tiny_config(), 13)
    fm = random_feature_matrix(rng, 10, 4, 20)
    insts = [TrainingInstance((), (1, 2, 3, 4, 5), 2)]
    plan = BatchPlan(batch_size=1, negatives=4, max_history=6)
    for build in (build_zero_pad_batch, build_concat_batch):
        trace = forward(build(insts, fm, plan), p)
        assert not trace.user_vecs.any() and np.all(trace.scores == 0)
        assert trace.loss == pytest.approx(math.log(5), abs=1e-15)


def test_default_init_is_float32_and_pad_row_zero():
    p = ModelParams.init(ModelConfig(vocab_size=50), seed=0)
    assert all(t.dtype == np.float32 for t in p.tensors.values())
    assert not p["embedding"][0].any()
    assert p.config.model_dim == 256
    tokens = np.array([[3, 4, 0, 0]])
    assert encode_news(tokens, p).dtype == np.float32
    with pytest.raises(ValueError, match="registry"):
        ModelParams(p.config, {"embedding": p["embedding"]})
