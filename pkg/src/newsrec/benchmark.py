"""Samples-per-second comparison of the two batch layouts."""

from __future__ import annotations

import json
import os
import platform
import time
from dataclasses import asdict, dataclass
from typing import Iterator, Sequence

import numpy as np

from .batching import LAYOUTS, BatchPlan, TrainingInstance, build_batch, epoch_order
from .data import FeatureMatrix
from .evaluate import encode_rows
from .model import ModelParams, backward, encode_user_concat, forward, score
from .training import OptimizerState, adam_step

# Published GPU measurements (A100 40GB, MIND-small), samples/second. Context only;
# desk-scale CPU runs are not expected to reproduce them.
REFERENCE_SPEEDS = {
    "nrms": {"zero_pad": (769.9, 880.8), "concat": (1630.0, 2622.5), "improvement_pct": (111.77, 197.72)},
    "topic": {"zero_pad": (767.4, 790.8), "concat": (1554.9, 2402.8), "improvement_pct": (102.63, 203.88)},
}


@dataclass
class ThroughputReport:
    layout: str
    s_train: float
    s_eval: float
    train_seconds: float
    eval_seconds: float
    train_samples: int
    eval_samples: int
    warmup_batches: int
    measured_batches: int
    batch_size: int
    hardware: str

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def hardware_note() -> str:
    threads = os.environ.get("OMP_NUM_THREADS") or os.environ.get("OPENBLAS_NUM_THREADS") or "default"
    return (f"{platform.machine()} {platform.system()} cpus={os.cpu_count()} blas_threads={threads} "
            f"numpy={np.__version__} python={platform.python_version()}")


def _chunks(instances: Sequence[TrainingInstance], plan: BatchPlan, n: int) -> Iterator[list[TrainingInstance]]:
    """``n`` batches from the seeded stream, wrapping into later epochs if needed."""
    epoch, produced = 0, 0
    while produced < n:
        order = epoch_order(len(instances), plan, epoch)
        for s in range(0, len(order), plan.batch_size):
            if produced == n:
                return
            yield [instances[i] for i in order[s:s + plan.batch_size]]
            produced += 1
        epoch += 1


class _NewsCache:
    """Row -> news vector table that grows as unseen rows arrive."""

    def __init__(self, params: ModelParams, fm: FeatureMatrix):
        self.params, self.fm = params, fm
        self.pos: dict[int, int] = {}
        self.blocks: list[np.ndarray] = []
        self.table = np.zeros((0, params.config.model_dim), dtype=params.config.dtype)

    def lookup(self, rows: np.ndarray) -> np.ndarray:
        missing = np.unique(rows)
        missing = missing[[int(r) not in self.pos for r in missing]]
        if len(missing):
            start = len(self.table)
            self.table = np.concatenate([self.table, encode_rows(missing, self.fm, self.params)])
            for i, r in enumerate(missing):
                self.pos[int(r)] = start + i
        return np.array([self.pos[int(r)] for r in rows], dtype=np.int64)


def _eval_concat_cached(chunk: list[TrainingInstance], cache: _NewsCache, params: ModelParams) -> np.ndarray:
    B = len(chunk)
    offsets = np.zeros(B + 1, dtype=np.int64)
    offsets[1:] = np.cumsum([len(inst.history) for inst in chunk])
    hist = np.array([r for inst in chunk for r in inst.history], dtype=np.int64)
    cand = np.array([inst.candidate_rows for inst in chunk], dtype=np.int64)
    idx = cache.lookup(np.concatenate([hist, cand.ravel()]))
    users = encode_user_concat(cache.table, idx[:len(hist)], offsets, params)
    return score(users, cache.table[idx[len(hist):]].reshape(B, cand.shape[1], -1))


def measure_throughput(params: ModelParams, instances: Sequence[TrainingInstance], fm: FeatureMatrix, layout: str,
                       plan: BatchPlan, warmup_batches: int = 10, measured_batches: int = 20,
                       learning_rate: float = 1e-4) -> ThroughputReport:
    """Time training steps and forward-only scoring over the same seeded instance stream.

    Training timing covers batch construction, forward, backward and the Adam
    update on a private copy of ``params``. Evaluation timing covers batch
    construction and scoring; for the concat layout a news-vector cache (reset
    when the measured window starts) encodes each distinct news once.
    """
    if measured_batches < 1:
        raise ValueError("measured_batches must be >= 1")
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    work = params.copy()
    state = OptimizerState.fresh(work, learning_rate)
    chunks = list(_chunks(instances, plan, warmup_batches + measured_batches))

    def train_step(chunk):
        batch = build_batch(chunk, fm, plan, layout)
        trace = forward(batch, work)
        adam_step(work, backward(batch, work, trace), state)
        return batch.size

    for chunk in chunks[:warmup_batches]:
        train_step(chunk)
    t0 = time.perf_counter()
    train_samples = sum(train_step(chunk) for chunk in chunks[warmup_batches:])
    train_seconds = time.perf_counter() - t0

    def eval_step(chunk, cache):
        if layout == "concat":
            _eval_concat_cached(chunk, cache, params)
        else:
            forward(build_batch(chunk, fm, plan, layout), params)
        return len(chunk)

    cache = _NewsCache(params, fm)
    for chunk in chunks[:warmup_batches]:
        eval_step(chunk, cache)
    cache = _NewsCache(params, fm)
    t0 = time.perf_counter()
    eval_samples = sum(eval_step(chunk, cache) for chunk in chunks[warmup_batches:])
    eval_seconds = time.perf_counter() - t0

    return ThroughputReport(layout, train_samples / train_seconds, eval_samples / eval_seconds, train_seconds,
                            eval_seconds, train_samples, eval_samples, warmup_batches, measured_batches,
                            plan.batch_size, hardware_note())


def improvement_pct(base: float, new: float) -> float:
    return (new / base - 1.0) * 100.0


def compare_report(reports: dict[str, ThroughputReport], variant: str = "nrms") -> str:
    """Side-by-side text for a zero_pad/concat pair plus the reference GPU figures."""
    lines = [r.to_text() for r in reports.values()]
    if {"zero_pad", "concat"} <= set(reports):
        z, c = reports["zero_pad"], reports["concat"]
        lines.append(f"improvement_train_pct={improvement_pct(z.s_train, c.s_train):.2f}\n")
        lines.append(f"improvement_eval_pct={improvement_pct(z.s_eval, c.s_eval):.2f}\n")
    ref = REFERENCE_SPEEDS.get(variant)
    if ref:
        lines.append(f"reference_gpu={variant} A100-40GB MIND-small "
                     f"zero_pad S_train={ref['zero_pad'][0]}/s S_eval={ref['zero_pad'][1]}/s; "
                     f"concat S_train={ref['concat'][0]}/s S_eval={ref['concat'][1]}/s; "
                     f"improvement +{ref['improvement_pct'][0]}% train, +{ref['improvement_pct'][1]}% eval\n")
    return "".join(lines)
