"""Seeded synthetic MIND-format corpora.

The planted-preference corpus gives every user one favourite category: their
histories and clicks come only from that category, so a working model should
rank same-category candidates first.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .batching import TrainingInstance
from .data import ImpressionRecord, NewsRecord, write_behaviors_file

_ONSETS = ["b", "c", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st", "tr"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]


def _words(rng: np.random.Generator, n: int, taken: set[str]) -> list[str]:
    out = []
    while len(out) < n:
        w = "".join(rng.choice(_ONSETS) + rng.choice(_VOWELS) for _ in range(int(rng.integers(2, 4))))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


@dataclass
class SyntheticCorpus:
    news: list[NewsRecord]
    train: list[ImpressionRecord]
    dev: list[ImpressionRecord]
    user_category: dict[str, int]
    categories: list[str]

    def write(self, out_dir: str | Path, embed_dim: int | None = None, seed: int = 0) -> dict[str, Path]:
        """Write news.tsv, behaviors.tsv (train), dev_behaviors.tsv and optionally embeddings.txt."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"news": out / "news.tsv", "behaviors": out / "behaviors.tsv", "dev_behaviors": out / "dev_behaviors.tsv"}
        with open(paths["news"], "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.news:
                title = " ".join(rec.title_tokens).capitalize()
                body = " ".join(rec.body_tokens).capitalize() + "."
                fh.write(f"{rec.news_id}\t{rec.category}\t{rec.subcategory}\t{title}\t{body}\t\t[]\t[]\n")
        write_behaviors_file(self.train, paths["behaviors"])
        write_behaviors_file(self.dev, paths["dev_behaviors"])
        if embed_dim:
            rng = np.random.default_rng(seed)
            words = sorted({w for rec in self.news for w in rec.title_tokens + rec.body_tokens})
            paths["embeddings"] = out / "embeddings.txt"
            with open(paths["embeddings"], "w", encoding="utf-8", newline="\n") as fh:
                for w in words:
                    vec = rng.normal(0.0, 0.3, embed_dim)
                    fh.write(w + " " + " ".join(f"{x:.5f}" for x in vec) + "\n")
        return paths


def planted_corpus(n_categories: int = 8, n_news: int = 400, n_users: int = 300, n_train: int = 2000,
                   n_dev: int = 500, words_per_category: int = 30, common_words: int = 60,
                   title_len: tuple[int, int] = (5, 10), body_len: tuple[int, int] = (8, 16),
                   topical_share: float = 0.6, history_len: tuple[int, int] = (1, 20),
                   n_candidates: tuple[int, int] = (5, 12), seed: int = 0) -> SyntheticCorpus:
    """Generate news plus train/dev impressions where each user clicks one category only.

    Titles and bodies mix category-specific words (``topical_share`` of the
    tokens) with a shared common pool. Every impression has 1-2 clicked
    candidates from the user's category, the rest drawn from other categories.
    """
    rng = np.random.default_rng(seed)
    taken: set[str] = set()
    common = _words(rng, common_words, taken)
    cat_words = [_words(rng, words_per_category, taken) for _ in range(n_categories)]
    categories = [f"cat{c}" for c in range(n_categories)]

    def text(c: int, lo_hi: tuple[int, int]) -> tuple[str, ...]:
        n = int(rng.integers(lo_hi[0], lo_hi[1] + 1))
        return tuple(rng.choice(cat_words[c]) if rng.random() < topical_share else rng.choice(common)
                     for _ in range(n))

    news, by_cat = [], [[] for _ in range(n_categories)]
    for i in range(n_news):
        c = i % n_categories
        nid = f"N{i + 1}"
        news.append(NewsRecord(nid, categories[c], f"{categories[c]}sub{int(rng.integers(3))}", text(c, title_len),
                               text(c, body_len)))
        by_cat[c].append(nid)

    users = [f"U{u + 1}" for u in range(n_users)]
    fav = {u: int(rng.integers(n_categories)) for u in users}
    user_hist = {}
    for u in users:
        pool = by_cat[fav[u]]
        h = int(rng.integers(history_len[0], history_len[1] + 1))
        user_hist[u] = tuple(rng.choice(pool, size=min(h, len(pool)), replace=False))

    def impression(k: int) -> ImpressionRecord:
        u = users[int(rng.integers(n_users))]
        c = fav[u]
        n_c = int(rng.integers(n_candidates[0], n_candidates[1] + 1))
        n_pos = int(rng.integers(1, 3))
        pos = rng.choice(by_cat[c], size=n_pos, replace=False)
        others = [nid for cc in range(n_categories) if cc != c for nid in by_cat[cc]]
        neg = rng.choice(others, size=n_c - n_pos, replace=False)
        cands = [(str(n), 1) for n in pos] + [(str(n), 0) for n in neg]
        order = rng.permutation(len(cands))
        return ImpressionRecord(str(k), u, f"11/{(k % 28) + 1}/2019 9:00:00 AM", tuple(map(str, user_hist[u])),
                                tuple(cands[j] for j in order))

    train = [impression(k + 1) for k in range(n_train)]
    dev = [impression(n_train + k + 1) for k in range(n_dev)]
    return SyntheticCorpus(news, train, dev, {u: fav[u] for u in users}, categories)


def fixture_corpus(seed: int = 7) -> SyntheticCorpus:
    """The bundled 200-news / 500-impression fixture (400 train + 100 dev)."""
    return planted_corpus(n_news=200, n_users=80, n_train=400, n_dev=100, history_len=(0, 12), seed=seed)


def skewed_instances(n_instances: int, n_news: int, max_history: int, negatives: int, seed: int = 0):
    """Training instances whose history lengths are uniform on [1, max_history]."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_instances):
        h = int(rng.integers(1, max_history + 1))
        hist = tuple(int(x) for x in rng.integers(1, n_news + 1, size=h))
        cands = tuple(int(x) for x in rng.integers(1, n_news + 1, size=negatives + 1))
        out.append(TrainingInstance(hist, cands, int(rng.integers(negatives + 1)), i))
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="write the bundled synthetic fixture")
    ap.add_argument("out", help="output directory")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--embed-dim", type=int, default=50)
    args = ap.parse_args(argv)
    fixture_corpus(args.seed).write(args.out, embed_dim=args.embed_dim, seed=args.seed)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
