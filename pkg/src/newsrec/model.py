"""Attention news recommender with exact analytic gradients.

Two variants share the user side (self-attention over history news vectors,
then additive pooling):

* ``nrms``  - news encoder is word-level multi-head self-attention followed
  by additive pooling.
* ``topic`` - news encoder is a minimal topic-attention head: each word gets a
  softmax distribution over learned topic vectors, topic representations are
  the weighted means of projected word vectors, and an additive pool mixes
  the topics into the news vector. This is deliberately smaller than a full
  bi-level topic model; it exists to support topic-centric explanations.

Both layouts (zero-pad and concat) run through the same primitives, so their
scores and gradients agree up to floating-point reassociation.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from . import layers
from .batching import ConcatBatch, ZeroPadBatch
from .data import PAD

VARIANTS = ("nrms", "topic")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 300
    heads: int = 16
    head_dim: int = 16
    attn_dim: int = 200
    n_topics: int = 50
    tau: float = 1.0
    variant: str = "nrms"
    train_embedding: bool = True
    dtype: str = "float32"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown model variant {self.variant!r}; expected one of {VARIANTS}")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.variant == "topic" and self.n_topics < 2:
            raise ValueError("topic variant needs n_topics >= 2")
        if min(self.vocab_size, self.embed_dim, self.heads, self.head_dim, self.attn_dim) < 1:
            raise ValueError("model dimensions must be positive")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def model_dim(self) -> int:
        return self.heads * self.head_dim

    def shapes(self) -> dict[str, tuple[int, ...]]:
        D, Dm, A = self.embed_dim, self.model_dim, self.attn_dim
        out: dict[str, tuple[int, ...]] = {"embedding": (self.vocab_size, D)}
        if self.variant == "nrms":
            out.update({f"news_attn.{n}": (D, Dm) for n in ("wq", "wk", "wv")})
            out["news_attn.wo"] = (Dm, Dm)
        else:
            out["topic.theta"] = (self.n_topics, D)
            out["topic.proj"] = (D, Dm)
        out.update({"news_pool.w": (A, Dm), "news_pool.b": (A,), "news_pool.v": (A,)})
        out.update({f"user_attn.{n}": (Dm, Dm) for n in ("wq", "wk", "wv", "wo")})
        out.update({"user_pool.w": (A, Dm), "user_pool.b": (A,), "user_pool.v": (A,)})
        return out


class ModelParams:
    """Named registry of every model tensor.

    ``version`` increments on each in-place update so stale forward traces can
    be detected.
    """

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray], seed: int = 0):
        shapes = config.shapes()
        if set(tensors) != set(shapes):
            missing, extra = set(shapes) - set(tensors), set(tensors) - set(shapes)
            raise ValueError(f"parameter registry mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, shape in shapes.items():
            if tensors[name].shape != shape:
                raise ValueError(f"tensor {name!r} has shape {tensors[name].shape}, expected {shape}")
        self.config = config
        self.seed = seed
        self.tensors = {name: np.ascontiguousarray(tensors[name], dtype=config.dtype) for name in shapes}
        self.version = 0

    @classmethod
    def init(cls, config: ModelConfig, seed: int = 0, embedding: np.ndarray | None = None) -> "ModelParams":
        rng = np.random.default_rng(seed)
        tensors = {}
        for name, shape in config.shapes().items():
            if name == "embedding":
                if embedding is None:
                    t = rng.uniform(-0.1, 0.1, size=shape)
                else:
                    t = np.array(embedding, dtype=np.float64)
            elif name.endswith(".b"):
                t = np.zeros(shape)
            elif name.endswith(".v"):
                t = rng.uniform(-0.1, 0.1, size=shape)
            elif name == "topic.theta":
                t = rng.normal(0.0, 1.0 / np.sqrt(shape[1]), size=shape)
            else:
                lim = np.sqrt(6.0 / (shape[0] + shape[1]))
                t = rng.uniform(-lim, lim, size=shape)
            tensors[name] = t
        tensors["embedding"][PAD] = 0.0
        return cls(config, tensors, seed)

    def names(self) -> list[str]:
        return list(self.tensors)

    def trainable(self, name: str) -> bool:
        return name != "embedding" or self.config.train_embedding

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def copy(self) -> "ModelParams":
        out = ModelParams(self.config, {k: v.copy() for k, v in self.tensors.items()}, self.seed)
        return out

    def astype(self, dtype: str) -> "ModelParams":
        return ModelParams(replace(self.config, dtype=dtype), self.tensors, self.seed)

    def bump(self) -> None:
        self.version += 1

    def hyperparameters(self) -> dict:
        return asdict(self.config)


# ---------------------------------------------------------------- primitives


def embed_tokens(tokens: np.ndarray, params: ModelParams) -> np.ndarray:
    table = params["embedding"]
    if tokens.size and (tokens.min() < 0 or tokens.max() >= table.shape[0]):
        raise IndexError(f"token index outside [0, {table.shape[0]})")
    return table[tokens]


def _attn(params: ModelParams, level: str):
    p = params.tensors
    return (p[f"{level}_attn.wq"], p[f"{level}_attn.wk"], p[f"{level}_attn.wv"], p[f"{level}_attn.wo"],
            params.config.heads)


def _pool(params: ModelParams, level: str):
    p = params.tensors
    return p[f"{level}_pool.w"], p[f"{level}_pool.b"], p[f"{level}_pool.v"]


def multi_head_self_attention(x: np.ndarray, mask: np.ndarray, params: ModelParams, level: str = "news"):
    return layers.mhsa_forward(x, mask, *_attn(params, level))[0]


def additive_attention_pool(h: np.ndarray, mask: np.ndarray, w: np.ndarray, b: np.ndarray, v: np.ndarray):
    return layers.pool_forward(h, mask, w, b, v)[0]


def topic_attention(tokens: np.ndarray, params: ModelParams):
    """Return ``(topic_mixture [N, K_t], word_topic_weights [N, L, K_t])``."""
    if params.config.variant != "topic":
        raise ValueError("topic_attention requires the topic model variant")
    mask = tokens != PAD
    p, _, _ = layers.topic_forward(embed_tokens(tokens, params), mask, params["topic.theta"], params.config.tau)
    return layers.topic_mixture(p, mask), p


# ------------------------------------------------------------ news encoder


def _news_forward(tokens: np.ndarray, params: ModelParams):
    mask = (tokens != PAD).astype(np.int8)
    emb = embed_tokens(tokens, params)
    if params.config.variant == "nrms":
        h, attn_cache = layers.mhsa_forward(emb, mask, *_attn(params, "news"))
        vec, pool_cache = layers.pool_forward(h, mask, *_pool(params, "news"))
        return vec, ("nrms", tokens, attn_cache, pool_cache)
    theta, proj, tau = params["topic.theta"], params["topic.proj"], params.config.tau
    p, pm, col = layers.topic_forward(emb, mask, theta, tau)
    n, L, D = emb.shape
    wproj = (emb.reshape(n * L, D) @ proj).reshape(n, L, -1)
    topics = pm.transpose(0, 2, 1) @ wproj
    tmask = np.ones(topics.shape[:2], dtype=np.int8)
    vec, pool_cache = layers.pool_forward(topics, tmask, *_pool(params, "news"))
    return vec, ("topic", tokens, emb, mask, p, pm, col, wproj, pool_cache)


def _scatter_embedding(grads: dict, tokens: np.ndarray, demb: np.ndarray, params: ModelParams) -> None:
    if not params.trainable("embedding"):
        return
    grads["embedding"] += layers.scatter_rows(tokens, demb, params.config.vocab_size)
    grads["embedding"][PAD] = 0.0


def _news_backward(dvec: np.ndarray, cache, params: ModelParams, grads: dict) -> None:
    if cache[0] == "nrms":
        _, tokens, attn_cache, pool_cache = cache
        dh, g = layers.pool_backward(dvec, pool_cache)
        _accumulate(grads, "news_pool", g)
        demb, g = layers.mhsa_backward(dh, attn_cache)
        _accumulate(grads, "news_attn", g)
        _scatter_embedding(grads, tokens, demb, params)
        return
    _, tokens, emb, mask, p, pm, col, wproj, pool_cache = cache
    theta, proj, tau = params["topic.theta"], params["topic.proj"], params.config.tau
    dtopics, g = layers.pool_backward(dvec, pool_cache)
    _accumulate(grads, "news_pool", g)
    n, L, D = emb.shape
    dwproj = pm @ dtopics
    dpm = wproj @ dtopics.transpose(0, 2, 1)
    dlogits = layers.topic_backward(dpm, p, pm, mask, col, tau)
    emb2 = emb.reshape(n * L, D)
    grads["topic.proj"] += emb2.T @ dwproj.reshape(n * L, -1)
    grads["topic.theta"] += dlogits.reshape(n * L, -1).T @ emb2
    demb = dwproj.reshape(n * L, -1) @ proj.T + dlogits.reshape(n * L, -1) @ theta
    _scatter_embedding(grads, tokens, demb, params)


def _accumulate(grads: dict, prefix: str, g: dict) -> None:
    for k, v in g.items():
        grads[f"{prefix}.{k}"] += v


def encode_news(tokens: np.ndarray, params: ModelParams) -> np.ndarray:
    """Encode token rows [N, L] into news vectors [N, D_m]; the null news maps to zero."""
    return _news_forward(tokens, params)[0]


# ------------------------------------------------------------ user encoder


def _user_padded_forward(hvecs, mask, params):
    h, attn_cache = layers.mhsa_forward(hvecs, mask, *_attn(params, "user"))
    vec, pool_cache = layers.pool_forward(h, mask, *_pool(params, "user"))
    return vec, (attn_cache, pool_cache)


def _user_padded_backward(duser, cache, grads):
    attn_cache, pool_cache = cache
    dh, g = layers.pool_backward(duser, pool_cache)
    _accumulate(grads, "user_pool", g)
    dhvecs, g = layers.mhsa_backward(dh, attn_cache)
    _accumulate(grads, "user_attn", g)
    return dhvecs


def encode_user_zero_pad(history_vecs: np.ndarray, mask: np.ndarray, params: ModelParams) -> np.ndarray:
    return _user_padded_forward(history_vecs, mask, params)[0]


def _check_segments(history_index, history_offsets, n_unique):
    offs = np.asarray(history_offsets)
    if offs.ndim != 1 or len(offs) < 1 or offs[0] != 0 or np.any(np.diff(offs) < 0) \
            or offs[-1] != len(history_index):
        raise ValueError("history_offsets must be monotone, start at 0 and end at len(history_index)")
    if len(history_index) and (np.min(history_index) < 0 or np.max(history_index) >= n_unique):
        raise ValueError("history_index points outside the unique news block")
    return offs


def _user_concat_forward(unique_vecs, history_index, history_offsets, params):
    offs = _check_segments(history_index, history_offsets, len(unique_vecs))
    B = len(offs) - 1
    out = np.zeros((B, unique_vecs.shape[1]), dtype=unique_vecs.dtype)
    caches = []
    for b in range(B):
        seg = history_index[offs[b]:offs[b + 1]]
        if len(seg) == 0:
            caches.append(None)
            continue
        x = unique_vecs[seg][None]
        vec, cache = _user_padded_forward(x, np.ones((1, len(seg)), dtype=np.int8), params)
        out[b] = vec[0]
        caches.append((seg, cache))
    return out, caches


def _user_concat_backward(duser, caches, n_unique, grads):
    segs, dxs = [], []
    for b, item in enumerate(caches):
        if item is None:
            continue
        seg, cache = item
        segs.append(seg)
        dxs.append(_user_padded_backward(duser[b:b + 1], cache, grads)[0])
    if not segs:
        return np.zeros((n_unique, duser.shape[1]), dtype=duser.dtype)
    return layers.scatter_rows(np.concatenate(segs), np.concatenate(dxs), n_unique)


def encode_user_concat(unique_news_vecs, history_index, history_offsets, params: ModelParams) -> np.ndarray:
    """User vectors from segment-delimited histories over a deduplicated news block."""
    return _user_concat_forward(unique_news_vecs, history_index, history_offsets, params)[0]


# ------------------------------------------------------------ scoring / loss


def score(user_vecs: np.ndarray, cand_vecs: np.ndarray) -> np.ndarray:
    if user_vecs.ndim != 2 or cand_vecs.ndim != 3 or user_vecs.shape[0] != cand_vecs.shape[0] \
            or user_vecs.shape[1] != cand_vecs.shape[2]:
        raise ValueError(f"score shape mismatch: users {user_vecs.shape}, candidates {cand_vecs.shape}")
    return (cand_vecs @ user_vecs[:, :, None])[:, :, 0]


def _log_softmax(scores):
    z = scores - scores.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def training_loss(scores: np.ndarray, positive_position: np.ndarray) -> float:
    """Mean softmax cross-entropy of the clicked candidate against the sampled negatives."""
    if not np.all(np.isfinite(scores)):
        raise FloatingPointError("non-finite scores")
    pos = np.asarray(positive_position)
    if np.any(pos < 0) or np.any(pos >= scores.shape[1]):
        raise IndexError("positive position out of range")
    logp = _log_softmax(scores)
    return float(-logp[np.arange(len(pos)), pos].mean())


# ------------------------------------------------------------ full batch


class StaleTraceError(RuntimeError):
    pass


@dataclass
class ForwardTrace:
    batch_id: int
    version: int
    layout: str
    loss: float
    scores: np.ndarray
    news_cache: tuple
    user_cache: object
    user_vecs: np.ndarray
    cand_vecs: np.ndarray
    n_news: int


def forward(batch: ZeroPadBatch | ConcatBatch, params: ModelParams) -> ForwardTrace:
    if isinstance(batch, ZeroPadBatch):
        B, H, L = batch.history_tokens.shape
        C = batch.candidate_tokens.shape[1]
        tokens = np.concatenate([batch.history_tokens.reshape(B * H, L), batch.candidate_tokens.reshape(B * C, L)])
        vecs, news_cache = _news_forward(tokens, params)
        hvecs = vecs[:B * H].reshape(B, H, -1)
        cand = vecs[B * H:].reshape(B, C, -1)
        user, user_cache = _user_padded_forward(hvecs, batch.history_mask, params)
        layout = "zero_pad"
    elif isinstance(batch, ConcatBatch):
        vecs, news_cache = _news_forward(batch.unique_tokens, params)
        user, user_cache = _user_concat_forward(vecs, batch.history_index, batch.history_offsets, params)
        cand = vecs[batch.candidate_index]
        layout = "concat"
    else:
        raise TypeError(f"unsupported batch type {type(batch).__name__}")
    scores = score(user, cand)
    loss = training_loss(scores, batch.labels)
    return ForwardTrace(id(batch), params.version, layout, loss, scores, news_cache, user_cache, user, cand,
                        len(vecs))


def zero_grads(params: ModelParams) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.tensors.items()}


def backward(batch: ZeroPadBatch | ConcatBatch, params: ModelParams, trace: ForwardTrace) -> dict[str, np.ndarray]:
    """Exact gradients of the mean training loss for every registered tensor.

    Frozen tensors get an all-zero entry.
    """
    if trace.batch_id != id(batch) or trace.version != params.version:
        raise StaleTraceError("forward trace does not match this batch / parameter version")
    grads = zero_grads(params)
    B = batch.size
    p = np.exp(_log_softmax(trace.scores))
    p[np.arange(B), batch.labels] -= 1.0
    dscores = p / B
    duser = (dscores[:, None, :] @ trace.cand_vecs)[:, 0]
    dcand = dscores[:, :, None] * trace.user_vecs[:, None, :]
    if trace.layout == "zero_pad":
        B_, H = batch.history_mask.shape
        dh = _user_padded_backward(duser, trace.user_cache, grads)
        dvecs = np.concatenate([dh.reshape(B * H, -1), dcand.reshape(-1, dcand.shape[2])])
    else:
        dvecs = _user_concat_backward(duser, trace.user_cache, trace.n_news, grads)
        dvecs += layers.scatter_rows(batch.candidate_index, dcand, trace.n_news)
    _news_backward(dvecs, trace.news_cache, params, grads)
    return grads


def loss_and_grads(batch, params):
    trace = forward(batch, params)
    return trace.loss, backward(batch, params, trace)
