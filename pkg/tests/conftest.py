from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from newsrec.batching import BatchPlan, TrainingInstance
from newsrec.data import FeatureMatrix
from newsrec.model import ModelConfig, ModelParams

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "fixtures" / "mini"

# criterion number -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: minutes-long acceptance runs")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")


def tiny_config(variant: str = "nrms", vocab_size: int = 20, **kw) -> ModelConfig:
    base = dict(vocab_size=vocab_size, embed_dim=8, heads=2, head_dim=4, attn_dim=6, n_topics=3, variant=variant,
                dtype="float64")
    base.update(kw)
    return ModelConfig(**base)


def random_params(config: ModelConfig, seed: int, scale: float = 0.7) -> ModelParams:
    """O(1) random weights; default init keeps gradients near roundoff for finite differences."""
    rng = np.random.default_rng(seed)
    tensors = {k: rng.normal(0.0, scale, shape).astype(config.dtype) for k, shape in config.shapes().items()}
    tensors["embedding"][0] = 0.0
    return ModelParams(config, tensors, seed)


def random_feature_matrix(rng: np.random.Generator, n_news: int, width: int, vocab_size: int) -> FeatureMatrix:
    rows = np.zeros((n_news + 1, width), dtype=np.int64)
    for r in range(1, n_news + 1):
        n = rng.integers(1, width + 1)
        rows[r, :n] = rng.integers(1, vocab_size, size=n)
    ids = [f"N{r}" for r in range(1, n_news + 1)]
    return FeatureMatrix(rows, ids, width, 0)


def random_instances(rng: np.random.Generator, n: int, n_news: int, max_history: int, negatives: int,
                     min_history: int = 0) -> list[TrainingInstance]:
    out = []
    for i in range(n):
        h = int(rng.integers(min_history, max_history + 1))
        hist = tuple(int(x) for x in rng.integers(1, n_news + 1, size=h))
        cands = tuple(int(x) for x in rng.integers(1, n_news + 1, size=negatives + 1))
        out.append(TrainingInstance(hist, cands, int(rng.integers(negatives + 1)), i))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_plan():
    return BatchPlan(batch_size=5, negatives=4, max_history=6, shuffle=False)
