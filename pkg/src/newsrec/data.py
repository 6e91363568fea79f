"""Raw MIND-style logs -> vocabulary, embedding table and fixed-width feature matrix."""

from __future__ import annotations

import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD = 0
UNK = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

_SPLIT = re.compile(r"[\W_]+")


class DataFormatError(ValueError):
    """Raised when an input file violates its column layout."""


@dataclass(frozen=True)
class NewsRecord:
    news_id: str
    category: str
    subcategory: str
    title_tokens: tuple[str, ...]
    body_tokens: tuple[str, ...] = ()


@dataclass(frozen=True)
class ImpressionRecord:
    impression_id: str
    user_id: str
    timestamp: str
    history: tuple[str, ...]
    candidates: tuple[tuple[str, int], ...]

    @property
    def labels(self) -> list[int]:
        return [label for _, label in self.candidates]


@dataclass
class Vocabulary:
    """Word <-> index map with ``0`` reserved for padding and ``1`` for unknown words."""

    words: list[str] = field(default_factory=lambda: [PAD_TOKEN, UNK_TOKEN])

    def __post_init__(self):
        if self.words[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must start with the pad and unk slots")
        self.index = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate word in vocabulary")

    @property
    def size(self) -> int:
        return len(self.words)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index and self.index[word] >= 2

    def lookup(self, word: str) -> int:
        idx = self.index.get(word, UNK)
        return UNK if idx < 2 else idx

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, w in enumerate(self.words):
                fh.write(f"{w}\t{i}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        words = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                word, idx = line.rstrip("\n").split("\t")
                if int(idx) != lineno - 1:
                    raise DataFormatError(f"{path}:{lineno}: non-contiguous index {idx}")
                words.append(word)
        return cls(words)


@dataclass
class FeatureMatrix:
    """Token-index rows per news article; row 0 is the all-padding null news.

    ``rows`` has shape ``[n_news + 1, width]`` where width is ``title_len`` or
    ``title_len + body_len`` when body features are on.
    """

    rows: np.ndarray
    news_ids: list[str]
    title_len: int
    body_len: int = 0

    def __post_init__(self):
        self.row_of = {nid: i + 1 for i, nid in enumerate(self.news_ids)}

    @property
    def width(self) -> int:
        return self.rows.shape[1]

    def row(self, news_id: str) -> int:
        try:
            return self.row_of[news_id]
        except KeyError:
            raise KeyError(f"news id {news_id!r} is not in the feature matrix") from None

    def news_id_of(self, row: int) -> str | None:
        return None if row == 0 else self.news_ids[row - 1]


def tokenize(text: str) -> list[str]:
    """Lowercase and split on every run of non-alphanumeric characters.

    >>> tokenize("5G-Home")
    ['5g', 'home']
    """
    return [t for t in _SPLIT.split(text.lower()) if t]


def _read_lines(path: str | Path) -> Iterable[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if line:
                yield lineno, line


def parse_news_file(path: str | Path) -> list[NewsRecord]:
    """Parse a tab-separated news file (id, category, subcategory, title, abstract, ...).

    The abstract column supplies the body tokens; extra columns are ignored.
    """
    out: list[NewsRecord] = []
    seen: set[str] = set()
    for lineno, line in _read_lines(path):
        cols = line.split("\t")
        if len(cols) < 5:
            raise DataFormatError(f"{path}:{lineno}: expected >= 5 tab-separated fields, got {len(cols)}")
        nid = cols[0].strip()
        if not nid:
            raise DataFormatError(f"{path}:{lineno}: empty news id")
        if nid in seen:
            raise DataFormatError(f"{path}:{lineno}: duplicate news id {nid!r}")
        seen.add(nid)
        out.append(NewsRecord(nid, cols[1], cols[2], tuple(tokenize(cols[3])), tuple(tokenize(cols[4]))))
    return out


def parse_behaviors_file(path: str | Path) -> list[ImpressionRecord]:
    """Parse a tab-separated behaviors file (impression id, user, time, history, candidates)."""
    out: list[ImpressionRecord] = []
    for lineno, line in _read_lines(path):
        cols = line.split("\t")
        if len(cols) != 5:
            raise DataFormatError(f"{path}:{lineno}: expected 5 tab-separated fields, got {len(cols)}")
        imp_id, user, ts, hist, cands = cols
        candidates = []
        for tok in cands.split():
            nid, sep, label = tok.rpartition("-")
            if not sep or not nid:
                raise DataFormatError(f"{path}:{lineno}: candidate {tok!r} lacks a '-label' suffix")
            if label not in ("0", "1"):
                raise DataFormatError(f"{path}:{lineno}: candidate {tok!r} has label outside {{0,1}}")
            candidates.append((nid, int(label)))
        if not candidates:
            raise DataFormatError(f"{path}:{lineno}: impression has no candidates")
        out.append(ImpressionRecord(imp_id, user, ts, tuple(hist.split()), tuple(candidates)))
    return out


def write_behaviors_file(impressions: Iterable[ImpressionRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for imp in impressions:
            cands = " ".join(f"{nid}-{label}" for nid, label in imp.candidates)
            fh.write(f"{imp.impression_id}\t{imp.user_id}\t{imp.timestamp}\t{' '.join(imp.history)}\t{cands}\n")


def build_vocabulary(news: Sequence[NewsRecord], min_count: int = 1, max_size: int = 100_000,
                     use_body: bool = True) -> Vocabulary:
    """Rank words by (frequency desc, word asc) and keep the top ``max_size - 2``."""
    if min_count < 1:
        raise ValueError("min_count must be >= 1")
    if max_size <= 2:
        raise ValueError("max_size must exceed the two reserved slots")
    counts: Counter[str] = Counter()
    for rec in news:
        counts.update(rec.title_tokens)
        if use_body:
            counts.update(rec.body_tokens)
    ranked = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    return Vocabulary([PAD_TOKEN, UNK_TOKEN] + ranked[: max_size - 2])


def init_embeddings(vocab: Vocabulary, dim: int, seed: int = 0, dtype=np.float32) -> np.ndarray:
    rng = np.random.default_rng(seed)
    table = rng.uniform(-0.1, 0.1, size=(vocab.size, dim))
    table[PAD] = 0.0
    return table.astype(dtype)


def load_pretrained_embeddings(path: str | Path, vocab: Vocabulary, dim: int, seed: int = 0,
                               dtype=np.float32) -> np.ndarray:
    """Build a ``[vocab.size, dim]`` table from a GloVe-style text file.

    Words missing from the file keep their seeded uniform(-0.1, 0.1) init.
    Row 0 is zeroed last.
    """
    table = init_embeddings(vocab, dim, seed, dtype=np.float64)
    for lineno, line in _read_lines(path):
        parts = line.rstrip().split(" ")
        word, values = parts[0], parts[1:]
        if len(values) != dim:
            raise DataFormatError(f"{path}:{lineno}: expected {dim} components, got {len(values)}")
        idx = vocab.index.get(word)
        if idx is None or idx < 2:
            continue
        try:
            table[idx] = [float(v) for v in values]
        except ValueError:
            raise DataFormatError(f"{path}:{lineno}: non-numeric component") from None
    if not np.all(np.isfinite(table)):
        raise DataFormatError(f"{path}: non-finite embedding value")
    table[PAD] = 0.0
    return table.astype(dtype)


def _fit(ids: list[int], length: int) -> list[int]:
    return ids[:length] + [PAD] * (length - len(ids[:length]))


def build_feature_matrix(news: Sequence[NewsRecord], vocab: Vocabulary, title_len: int, body_len: int = 0,
                         use_body: bool = False) -> FeatureMatrix:
    if title_len < 1 or body_len < 0 or (use_body and body_len < 1):
        raise ValueError("need title_len >= 1, body_len >= 0 and body_len >= 1 when use_body")
    width = title_len + (body_len if use_body else 0)
    rows = np.zeros((len(news) + 1, width), dtype=np.int64)
    ids: list[str] = []
    seen: set[str] = set()
    for i, rec in enumerate(news, 1):
        if rec.news_id in seen:
            raise DataFormatError(f"news id collision: {rec.news_id!r}")
        seen.add(rec.news_id)
        ids.append(rec.news_id)
        row = _fit([vocab.lookup(w) for w in rec.title_tokens], title_len)
        if use_body:
            row += _fit([vocab.lookup(w) for w in rec.body_tokens], body_len)
        rows[i] = row
    return FeatureMatrix(rows, ids, title_len, body_len if use_body else 0)
