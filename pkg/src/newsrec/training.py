"""Optimisation loop, Adam, early stopping and exhaustive grid search."""

from __future__ import annotations

import itertools
import json
import logging
import math
import time
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .batching import LAYOUTS, BatchPlan, iterate_batches, sample_all
from .checkpoint import save_checkpoint
from .data import FeatureMatrix, ImpressionRecord
from .evaluate import MetricsReport, evaluate_model
from .model import ModelConfig, ModelParams, backward, forward

log = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: ModelParams, lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> "OptimizerState":
        if lr <= 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        zeros = {k: np.zeros_like(t) for k, t in params.tensors.items() if params.trainable(k)}
        return cls({k: z.copy() for k, z in zeros.items()}, zeros, 0, lr, beta1, beta2, eps)

    def header(self) -> dict:
        return {"step": self.step, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: OptimizerState) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    if set(state.m) != {k for k in params.names() if params.trainable(k)}:
        raise ValueError("optimizer state does not match the trainable parameter registry")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, m in state.m.items():
        g = grads[name]
        theta = params.tensors[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, expected {theta.shape}")
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        theta -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    params.bump()


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    plan: BatchPlan = field(default_factory=BatchPlan)
    layout: str = "concat"
    learning_rate: float = 1e-4
    patience: int = 2
    seed: int = 0
    checkpoint_dir: str | None = None
    eval_batch_size: int = 64

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.patience < 0:
            raise ValueError("patience must be >= 0")
        if self.learning_rate <= 0 or not math.isfinite(self.learning_rate):
            raise ValueError(f"learning_rate must be a positive finite number, got {self.learning_rate}")
        if self.layout not in LAYOUTS:
            raise ValueError(f"unknown layout {self.layout!r}")


@dataclass
class TrainResult:
    params: ModelParams
    best_auc: float
    best_epoch: int
    best_checkpoint: Path | None
    log: list[dict]


def _record(epoch: int, loss: float, report: MetricsReport, seconds: float) -> dict:
    return {"ts": round(time.time(), 3), "epoch": epoch, "loss": loss, "auc": report.auc, "mrr": report.mrr,
            "ndcg5": report.ndcg5, "ndcg10": report.ndcg10, "seconds": round(seconds, 3)}


def train(config: TrainConfig, train_set: Sequence[ImpressionRecord], dev_set: Sequence[ImpressionRecord],
          fm: FeatureMatrix, params: ModelParams) -> TrainResult:
    """Train ``params`` in place, evaluating on ``dev_set`` after each epoch.

    Negatives are resampled every epoch from a ``(seed, epoch)`` stream. The
    best-dev-AUC parameters are kept (and checkpointed when a directory is
    configured); training stops once ``patience`` consecutive epochs fail to
    improve on it.
    """
    if not train_set:
        raise ValueError("empty training set")
    plan = config.plan
    state = OptimizerState.fresh(params, config.learning_rate)
    ckpt_dir = Path(config.checkpoint_dir) if config.checkpoint_dir else None
    if ckpt_dir is not None:
        ckpt_dir.mkdir(parents=True, exist_ok=True)
    best_auc, best_epoch, best_params, best_path = -1.0, 0, params.copy(), None
    records: list[dict] = []
    stale = 0
    for epoch in range(1, config.epochs + 1):
        t0 = time.perf_counter()
        instances = sample_all(train_set, plan.negatives, [config.seed, epoch], fm, plan.max_history)
        if not instances:
            raise ValueError("no trainable instances (every impression lacks a positive or a negative)")
        total, seen = 0.0, 0
        for i, batch in enumerate(iterate_batches(instances, replace(plan, seed=config.seed), config.layout, fm,
                                                  epoch=epoch)):
            trace = forward(batch, params)
            if not math.isfinite(trace.loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {i}")
            grads = backward(batch, params, trace)
            adam_step(params, grads, state)
            total += trace.loss * batch.size
            seen += batch.size
        report = evaluate_model(params, dev_set, fm, config.layout, plan.max_history, config.eval_batch_size)
        rec = _record(epoch, total / seen, report, time.perf_counter() - t0)
        improved = report.auc > best_auc
        if improved:
            best_auc, best_epoch, best_params, stale = report.auc, epoch, params.copy(), 0
            if ckpt_dir is not None:
                best_path = save_checkpoint(params, state, ckpt_dir / "best.ckpt",
                                            extra={"epoch": epoch, "dev_auc": report.auc})
        else:
            stale += 1
        rec["checkpointed"] = improved
        records.append(rec)
        log.info("epoch %d loss=%.5f auc=%.4f mrr=%.4f ndcg5=%.4f ndcg10=%.4f", epoch, rec["loss"], report.auc,
                 report.mrr, report.ndcg5, report.ndcg10, extra={"payload": rec})
        if ckpt_dir is not None:
            with open(ckpt_dir / "train_log.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
        if stale > config.patience:
            log.info("early stop after epoch %d (best epoch %d, auc=%.4f)", epoch, best_epoch, best_auc)
            break
    return TrainResult(best_params, best_auc, best_epoch, best_path, records)


# ------------------------------------------------------------------ grid search


@dataclass(frozen=True)
class GridSpec:
    grid: dict[str, list]
    objective: str = "auc"

    def __post_init__(self):
        if not self.grid or any(len(v) == 0 for v in self.grid.values()):
            raise ValueError("grid must be non-empty with at least one value per key")
        if self.objective not in ("auc", "mrr", "ndcg5", "ndcg10"):
            raise ValueError(f"unknown objective {self.objective!r}")

    def cells(self) -> list[dict]:
        keys = sorted(self.grid)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.grid[k] for k in keys))]


@dataclass
class GridRow:
    index: int
    settings: dict
    metrics: dict | None
    error: str | None = None
    checkpoint: Path | None = None


@dataclass
class GridResult:
    rows: list[GridRow]
    winner: GridRow | None
    ranked: list[GridRow]
    winner_params: ModelParams | None = None


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)} - {"plan"}
_PLAN_KEYS = {f.name for f in fields(BatchPlan)}
_MODEL_KEYS = {f.name for f in fields(ModelConfig)} - {"vocab_size"}


def apply_settings(settings: dict, base: TrainConfig, model: ModelConfig) -> tuple[TrainConfig, ModelConfig]:
    """Route each grid key to the config that owns it."""
    t, p, m = {}, {}, {}
    for key, value in settings.items():
        if key in _TRAIN_KEYS:
            t[key] = value
        elif key in _PLAN_KEYS:
            p[key] = value
        elif key in _MODEL_KEYS:
            m[key] = value
        else:
            raise KeyError(f"grid key {key!r} is not a training, batching or model hyperparameter")
    plan = replace(base.plan, **p)
    return replace(base, plan=plan, **t), replace(model, **m)


def grid_search(grid: GridSpec, base: TrainConfig, train_set, dev_set, fm: FeatureMatrix, model: ModelConfig,
                embedding: np.ndarray | None = None) -> GridResult:
    """Exhaustive search in sorted-key cartesian order.

    Each cell trains from a fresh init seeded with ``base.seed``; failing cells
    are recorded and skipped. The winner maximises the objective, earlier
    cells winning ties.
    """
    for key in grid.grid:
        if key not in _TRAIN_KEYS | _PLAN_KEYS | _MODEL_KEYS:
            raise KeyError(f"grid key {key!r} is not a training, batching or model hyperparameter")
    rows: list[GridRow] = []
    winner, winner_params = None, None
    for i, settings in enumerate(grid.cells()):
        try:
            cell_dir = Path(base.checkpoint_dir) / f"cell{i:03d}" if base.checkpoint_dir else None
            cfg, mcfg = apply_settings(settings, replace(base, checkpoint_dir=str(cell_dir) if cell_dir else None),
                                       model)
            params = ModelParams.init(mcfg, seed=cfg.seed, embedding=embedding)
            result = train(cfg, train_set, dev_set, fm, params)
        except Exception as exc:  # noqa: BLE001 - a failed cell must not abort the search
            log.warning("grid cell %d %s failed: %s", i, settings, exc)
            rows.append(GridRow(i, settings, None, f"{type(exc).__name__}: {exc}"))
            continue
        best = next(r for r in result.log if r["epoch"] == result.best_epoch)
        row = GridRow(i, settings, {k: best[k] for k in ("auc", "mrr", "ndcg5", "ndcg10")}, None,
                      result.best_checkpoint)
        rows.append(row)
        log.info("grid cell %d %s -> %s=%.4f", i, settings, grid.objective, row.metrics[grid.objective])
        if winner is None or row.metrics[grid.objective] > winner.metrics[grid.objective]:
            winner, winner_params = row, result.params
    ok = [r for r in rows if r.metrics is not None]
    ranked = sorted(ok, key=lambda r: (-r.metrics[grid.objective], r.index))
    return GridResult(rows, winner, ranked, winner_params)


def grid_table(result: GridResult, objective: str = "auc") -> str:
    lines = ["rank\tcell\tsettings\tauc\tmrr\tndcg5\tndcg10"]
    for rank, row in enumerate(result.ranked, 1):
        m = row.metrics
        lines.append(f"{rank}\t{row.index}\t{json.dumps(row.settings, sort_keys=True)}\t"
                     f"{m['auc']:.6f}\t{m['mrr']:.6f}\t{m['ndcg5']:.6f}\t{m['ndcg10']:.6f}")
    for row in result.rows:
        if row.error:
            lines.append(f"failed\t{row.index}\t{json.dumps(row.settings, sort_keys=True)}\t{row.error}")
    return "\n".join(lines) + "\n"

