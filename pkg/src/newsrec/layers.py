"""Forward/backward primitives for the attention encoders.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache and returns the input gradient plus
a dict of parameter gradients. Masks are ``{0,1}`` arrays over sequence
positions; a sequence with no unmasked position produces zeros.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import sparse


def masked_softmax(logits: np.ndarray, mask: np.ndarray | None, axis: int = -1) -> np.ndarray:
    """Softmax along ``axis`` with masked entries at exactly zero probability.

    Rows where every entry is masked come back as all zeros instead of NaN.
    """
    if mask is None:
        z = logits - logits.max(axis=axis, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=axis, keepdims=True)
    keep = mask.astype(bool)
    z = np.where(keep, logits, -np.inf)
    top = z.max(axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.where(keep, np.exp(np.where(keep, z - top, 0.0)), 0.0)
    s = e.sum(axis=axis, keepdims=True)
    return e / np.where(s > 0, s, 1.0)


def softmax_backward(p: np.ndarray, dp: np.ndarray, axis: int = -1) -> np.ndarray:
    return p * (dp - (p * dp).sum(axis=axis, keepdims=True))


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    n, s, d = x.shape
    return x.reshape(n, s, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    n, h, s, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, s, h * dh)


def mhsa_forward(x, mask, wq, wk, wv, wo, heads):
    """Scaled dot-product multi-head self-attention.

    ``x``: [N, S, D_in]; projections are [D_in, D_m] with heads stacked along
    columns; ``wo``: [D_m, D_m]. Outputs at masked query positions are zero.
    """
    n, s, d_in = x.shape
    if wq.shape[0] != d_in or mask.shape != (n, s):
        raise ValueError(f"shape mismatch: x {x.shape}, mask {mask.shape}, wq {wq.shape}")
    d_m = wq.shape[1]
    if d_m % heads:
        raise ValueError(f"model dim {d_m} not divisible by {heads} heads")
    scale = 1.0 / math.sqrt(d_m // heads)
    x2 = x.reshape(n * s, d_in)
    q = _split_heads((x2 @ wq).reshape(n, s, d_m), heads)
    k = _split_heads((x2 @ wk).reshape(n, s, d_m), heads)
    v = _split_heads((x2 @ wv).reshape(n, s, d_m), heads)
    scores = (q @ k.transpose(0, 1, 3, 2)) * scale
    key_mask = mask[:, None, None, :]
    attn = masked_softmax(scores, np.broadcast_to(key_mask, scores.shape))
    ctx = _merge_heads(attn @ v)
    qmask = mask[:, :, None].astype(x.dtype)
    out = (ctx.reshape(n * s, d_m) @ wo).reshape(n, s, d_m) * qmask
    cache = (x, qmask, q, k, v, attn, ctx, scale, wq, wk, wv, wo, heads)
    return out, cache


def mhsa_backward(dout, cache):
    x, qmask, q, k, v, attn, ctx, scale, wq, wk, wv, wo, heads = cache
    n, s, d_in = x.shape
    d_m = wo.shape[0]
    dout = (dout * qmask).reshape(n * s, d_m)
    grads = {"wo": ctx.reshape(n * s, d_m).T @ dout}
    dctx = _split_heads((dout @ wo.T).reshape(n, s, d_m), heads)
    dattn = dctx @ v.transpose(0, 1, 3, 2)
    dv = attn.transpose(0, 1, 3, 2) @ dctx
    dscores = softmax_backward(attn, dattn) * scale
    dq = dscores @ k
    dk = dscores.transpose(0, 1, 3, 2) @ q
    x2 = x.reshape(n * s, d_in)
    dq2 = _merge_heads(dq).reshape(n * s, d_m)
    dk2 = _merge_heads(dk).reshape(n * s, d_m)
    dv2 = _merge_heads(dv).reshape(n * s, d_m)
    grads["wq"] = x2.T @ dq2
    grads["wk"] = x2.T @ dk2
    grads["wv"] = x2.T @ dv2
    dx = dq2 @ wq.T + dk2 @ wk.T + dv2 @ wv.T
    return dx.reshape(n, s, d_in), grads


def pool_forward(h, mask, w, b, v):
    """Additive attention pooling: a = softmax(v . tanh(W h + b)), out = sum a_i h_i.

    ``h``: [N, S, D]; ``w``: [A, D]; ``b``, ``v``: [A].
    """
    n, s, d = h.shape
    if w.shape[1] != d or mask.shape != (n, s):
        raise ValueError(f"shape mismatch: h {h.shape}, mask {mask.shape}, W {w.shape}")
    u = np.tanh(h.reshape(n * s, d) @ w.T + b)
    e = (u @ v).reshape(n, s)
    a = masked_softmax(e, mask)
    out = (a[:, None, :] @ h)[:, 0]
    return out, (h, u, a, w, v)


def pool_backward(dout, cache):
    h, u, a, w, v = cache
    n, s, d = h.shape
    dh = a[:, :, None] * dout[:, None, :]
    da = (h @ dout[:, :, None])[:, :, 0]
    de = softmax_backward(a, da).reshape(n * s)
    du = de[:, None] * v[None, :]
    dz = du * (1.0 - u * u)
    grads = {"v": u.T @ de, "w": dz.T @ h.reshape(n * s, d), "b": dz.sum(axis=0)}
    dh += (dz @ w).reshape(n, s, d)
    return dh, grads


def topic_forward(emb, mask, theta, tau):
    """Word-level topic attention.

    Returns word-topic weights ``p`` [N, L, K] (softmax over topics of
    theta . w / tau), the per-topic attention over words ``pm`` (``p`` masked
    and renormalised over the unmasked words of each topic column) and the
    column sums needed by the backward pass. All-padding rows get ``pm = 0``.
    """
    logits = (emb @ theta.T) / tau
    p = masked_softmax(logits, None)
    q = p * mask[:, :, None].astype(emb.dtype)
    col = q.sum(axis=1, keepdims=True)
    pm = q / np.where(col > 0, col, 1.0)
    return p, pm, col


def topic_backward(dpm, p, pm, mask, col, tau):
    """Gradient of the topic-attention logits given the gradient on ``pm``."""
    dq = (dpm - (dpm * pm).sum(axis=1, keepdims=True)) / np.where(col > 0, col, 1.0)
    dp = dq * mask[:, :, None]
    return softmax_backward(p, dp) / tau


def topic_mixture(p, mask):
    """Mean of the unmasked word distributions; all-padding rows get the uniform mixture."""
    m = mask[:, :, None].astype(p.dtype)
    count = mask.sum(axis=1)[:, None].astype(p.dtype)
    k = p.shape[-1]
    mix = (p * m).sum(axis=1) / np.maximum(count, 1)
    return np.where(count > 0, mix, 1.0 / k)


def scatter_rows(index: np.ndarray, values: np.ndarray, n_rows: int) -> np.ndarray:
    """Sum ``values[i]`` into row ``index[i]`` of an ``[n_rows, D]`` block."""
    index = np.asarray(index).reshape(-1)
    values = values.reshape(len(index), -1)
    onehot = sparse.csr_matrix((np.ones(len(index), dtype=values.dtype), (index, np.arange(len(index)))),
                               shape=(n_rows, len(index)))
    return np.asarray(onehot @ values)
