"""Training instances and the two batch layouts: zero-padded and concatenated.

The zero-pad layout materialises every history as ``H_max`` slots of token
rows, padding with the null news.  The concat layout flattens the true
histories into one index list delimited by offsets and deduplicates every
token row referenced by the batch (histories and candidates jointly), so each
distinct news is encoded once per batch.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .data import FeatureMatrix, ImpressionRecord

log = logging.getLogger(__name__)

LAYOUTS = ("zero_pad", "concat")


@dataclass(frozen=True)
class TrainingInstance:
    history: tuple[int, ...]
    candidate_rows: tuple[int, ...]
    positive_position: int
    instance_id: int = -1

    def __post_init__(self):
        if not 0 <= self.positive_position < len(self.candidate_rows):
            raise ValueError("positive_position out of range")


@dataclass(frozen=True)
class BatchPlan:
    batch_size: int = 32
    negatives: int = 4
    max_history: int = 50
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.negatives < 1 or self.max_history < 1:
            raise ValueError("batch_size, negatives and max_history must all be >= 1")


@dataclass
class ZeroPadBatch:
    history_tokens: np.ndarray  # [B, H_max, L]
    history_mask: np.ndarray  # [B, H_max]
    candidate_tokens: np.ndarray  # [B, C, L]
    labels: np.ndarray  # [B]
    instance_ids: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)


@dataclass
class ConcatBatch:
    unique_tokens: np.ndarray  # [U, L]
    history_index: np.ndarray  # [T]
    history_offsets: np.ndarray  # [B + 1]
    candidate_index: np.ndarray  # [B, C]
    labels: np.ndarray  # [B]
    instance_ids: np.ndarray

    @property
    def size(self) -> int:
        return len(self.labels)

    def segment(self, b: int) -> np.ndarray:
        return self.history_index[self.history_offsets[b]:self.history_offsets[b + 1]]


def history_rows(history: Sequence[str], fm: FeatureMatrix, max_history: int) -> tuple[int, ...]:
    """Map a history to feature-matrix rows, keeping the most recent ``max_history``."""
    recent = history[-max_history:] if max_history else ()
    return tuple(fm.row(nid) for nid in recent)


def sample_training_instances(imp: ImpressionRecord, negatives: int, rng: np.random.Generator,
                              fm: FeatureMatrix, max_history: int) -> list[TrainingInstance]:
    """One instance per clicked candidate, each with ``negatives`` sampled non-clicks.

    Negatives are drawn without replacement when enough exist, otherwise with
    replacement. The positive lands at a uniformly random slot.
    """
    pos = [fm.row(nid) for nid, label in imp.candidates if label == 1]
    neg = [fm.row(nid) for nid, label in imp.candidates if label == 0]
    if not pos:
        return []
    if not neg:
        log.warning("impression %s has no negatives; skipped", imp.impression_id)
        return []
    hist = history_rows(imp.history, fm, max_history)
    out = []
    for p in pos:
        picks = rng.choice(len(neg), size=negatives, replace=len(neg) < negatives)
        cands = [neg[i] for i in picks]
        slot = int(rng.integers(negatives + 1))
        cands.insert(slot, p)
        out.append(TrainingInstance(hist, tuple(cands), slot))
    return out


def sample_all(impressions: Sequence[ImpressionRecord], negatives: int, seed: int | Sequence[int], fm: FeatureMatrix,
               max_history: int) -> list[TrainingInstance]:
    rng = np.random.default_rng(seed)
    out = []
    for imp in impressions:
        for inst in sample_training_instances(imp, negatives, rng, fm, max_history):
            out.append(TrainingInstance(inst.history, inst.candidate_rows, inst.positive_position, len(out)))
    return out


def _check_candidates(instances: Sequence[TrainingInstance], plan: BatchPlan) -> int:
    n_cand = plan.negatives + 1
    for inst in instances:
        if len(inst.candidate_rows) != n_cand:
            raise ValueError(f"instance {inst.instance_id} has {len(inst.candidate_rows)} candidates, expected {n_cand}")
        if len(inst.history) > plan.max_history:
            raise ValueError(f"instance {inst.instance_id} history exceeds max_history={plan.max_history}")
    return n_cand


def build_zero_pad_batch(instances: Sequence[TrainingInstance], fm: FeatureMatrix, plan: BatchPlan) -> ZeroPadBatch:
    n_cand = _check_candidates(instances, plan)
    B, H = len(instances), plan.max_history
    hist = np.zeros((B, H), dtype=np.int64)
    mask = np.zeros((B, H), dtype=np.int8)
    for b, inst in enumerate(instances):
        h = len(inst.history)
        hist[b, :h] = inst.history
        mask[b, :h] = 1
    cands = np.array([inst.candidate_rows for inst in instances], dtype=np.int64).reshape(B, n_cand)
    return ZeroPadBatch(
        history_tokens=fm.rows[hist],
        history_mask=mask,
        candidate_tokens=fm.rows[cands],
        labels=np.array([inst.positive_position for inst in instances], dtype=np.int64),
        instance_ids=np.array([inst.instance_id for inst in instances], dtype=np.int64),
    )


def build_concat_batch(instances: Sequence[TrainingInstance], fm: FeatureMatrix, plan: BatchPlan) -> ConcatBatch:
    n_cand = _check_candidates(instances, plan)
    B = len(instances)
    lengths = np.array([len(inst.history) for inst in instances], dtype=np.int64)
    offsets = np.zeros(B + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    flat_hist = np.fromiter((r for inst in instances for r in inst.history), dtype=np.int64, count=int(offsets[-1]))
    flat_cand = np.array([inst.candidate_rows for inst in instances], dtype=np.int64).reshape(-1)
    referenced = np.concatenate([flat_hist, flat_cand])
    # dedup on token content, not row id, so no two unique rows are identical
    news_rows, news_inv = np.unique(referenced, return_inverse=True)
    unique_tokens, tok_inv = np.unique(fm.rows[news_rows], axis=0, return_inverse=True)
    index = tok_inv.reshape(-1)[news_inv.reshape(-1)]
    T = len(flat_hist)
    return ConcatBatch(
        unique_tokens=unique_tokens,
        history_index=index[:T],
        history_offsets=offsets,
        candidate_index=index[T:].reshape(B, n_cand),
        labels=np.array([inst.positive_position for inst in instances], dtype=np.int64),
        instance_ids=np.array([inst.instance_id for inst in instances], dtype=np.int64),
    )


def build_batch(instances, fm, plan, layout):
    if layout == "zero_pad":
        return build_zero_pad_batch(instances, fm, plan)
    if layout == "concat":
        return build_concat_batch(instances, fm, plan)
    raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")


def epoch_order(n: int, plan: BatchPlan, epoch: int = 0) -> np.ndarray:
    if not plan.shuffle:
        return np.arange(n)
    return np.random.default_rng([plan.seed, epoch]).permutation(n)


def iterate_batches(instances: Sequence[TrainingInstance], plan: BatchPlan, layout: str, fm: FeatureMatrix,
                    epoch: int = 0, workers: int = 0) -> Iterator[ZeroPadBatch | ConcatBatch]:
    """Yield batches in seeded-permutation order; the last partial batch is kept.

    With ``workers > 0`` batches are built on a thread pool ahead of the
    consumer; delivery order is unchanged.
    """
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}; expected one of {LAYOUTS}")
    order = epoch_order(len(instances), plan, epoch)
    chunks = [[instances[i] for i in order[s:s + plan.batch_size]] for s in range(0, len(order), plan.batch_size)]
    if workers <= 0:
        for chunk in chunks:
            yield build_batch(chunk, fm, plan, layout)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        yield from pool.map(lambda c: build_batch(c, fm, plan, layout), chunks)


def expand_concat_histories(batch: ConcatBatch) -> list[np.ndarray]:
    """Per-instance history token rows recovered from a concat batch."""
    return [batch.unique_tokens[batch.segment(b)] for b in range(batch.size)]


def dump_batch(batch: ZeroPadBatch | ConcatBatch) -> str:
    """Debug text: one line per instance segment, for golden comparisons."""
    lines = []
    if isinstance(batch, ConcatBatch):
        lines.append(f"concat B={batch.size} U={len(batch.unique_tokens)} T={len(batch.history_index)}")
        for u, row in enumerate(batch.unique_tokens):
            lines.append(f"u{u}: {' '.join(map(str, row))}")
        for b in range(batch.size):
            seg = " ".join(map(str, batch.segment(b)))
            cand = " ".join(map(str, batch.candidate_index[b]))
            lines.append(f"b{b} id={batch.instance_ids[b]} hist=[{seg}] cand=[{cand}] label={batch.labels[b]}")
    else:
        B, H, _ = batch.history_tokens.shape
        lines.append(f"zero_pad B={B} H_max={H} pad_slots={int((batch.history_mask == 0).sum())}")
        for b in range(B):
            mask = "".join(map(str, batch.history_mask[b]))
            hist = " | ".join(" ".join(map(str, r)) for r in batch.history_tokens[b])
            cand = " | ".join(" ".join(map(str, r)) for r in batch.candidate_tokens[b])
            lines.append(f"b{b} id={batch.instance_ids[b]} mask={mask} hist=[{hist}] cand=[{cand}] label={batch.labels[b]}")
    return "\n".join(lines) + "\n"
