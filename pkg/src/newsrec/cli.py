"""``newsrec`` command line: preprocess, train, evaluate, bench, explain.

Processed artifacts (all under ``--out`` / ``--data``):

==========================  ==================================================
``vocab.tsv``               ``word<TAB>index`` per line, index order
``news_index.tsv``          ``row<TAB>news_id<TAB>category<TAB>subcategory``
``features.npy``            int64 ``[n_news + 1, width]`` token rows
``embeddings.npy``          float32 ``[vocab, D]`` initial word vectors
``train_behaviors.tsv``     training impressions (MIND behaviors format)
``dev_behaviors.tsv``       dev impressions
``train_instances.tsv``     ``id<TAB>history rows<TAB>candidate rows<TAB>pos``
``manifest.json``           settings and SHA-256 of every file above
==========================  ==================================================
"""

from __future__ import annotations

import hashlib
import json
import shutil
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import runlog
from .batching import BatchPlan, TrainingInstance, sample_all
from .benchmark import compare_report, measure_throughput
from .checkpoint import load_checkpoint, save_checkpoint
from .config import Config, ConfigError, parse_config, parse_grid
from .data import (FeatureMatrix, ImpressionRecord, Vocabulary, build_feature_matrix, build_vocabulary,
                   init_embeddings, load_pretrained_embeddings, parse_behaviors_file, parse_news_file,
                   write_behaviors_file)
from .evaluate import evaluate_model
from .explain import generate_explanation
from .model import ModelConfig, ModelParams
from .training import GridSpec, TrainConfig, grid_search, grid_table, train

log = runlog.get("cli")

COMMANDS = ("preprocess", "train", "evaluate", "bench", "explain")
ARTIFACTS = ("vocab.tsv", "news_index.tsv", "features.npy", "embeddings.npy", "train_behaviors.tsv",
             "dev_behaviors.tsv", "train_instances.tsv")


class UsageError(Exception):
    pass


def _require(cfg: Config, *keys: str) -> None:
    for key in keys:
        if not cfg[key]:
            raise UsageError(f"missing required setting --{key}")


def _require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _embed_dim_from_file(path: Path) -> int:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().rstrip().split(" ")
    if len(first) < 2:
        raise ValueError(f"{path}: cannot infer embedding dimension from the first line")
    return len(first) - 1


# ------------------------------------------------------------------ artifacts


@dataclass
class Artifacts:
    root: Path
    vocab: Vocabulary
    fm: FeatureMatrix
    embeddings: np.ndarray
    train: list[ImpressionRecord]
    dev: list[ImpressionRecord]
    instances: list[TrainingInstance]
    categories: dict[str, str]
    manifest: dict


def load_artifacts(data_dir: str | Path) -> Artifacts:
    root = Path(data_dir)
    for name in ARTIFACTS + ("manifest.json",):
        _require_file(root / name, "processed artifact")
    manifest = json.loads((root / "manifest.json").read_text(encoding="utf-8"))
    vocab = Vocabulary.load(root / "vocab.tsv")
    ids, cats = [], {}
    with open(root / "news_index.tsv", encoding="utf-8") as fh:
        for line in fh:
            row, nid, cat, _sub = line.rstrip("\n").split("\t")
            ids.append(nid)
            cats[nid] = cat
    s = manifest["settings"]
    fm = FeatureMatrix(np.load(root / "features.npy"), ids, s["title_len"], s["body_len"] if s["use_body"] else 0)
    instances = []
    with open(root / "train_instances.tsv", encoding="utf-8") as fh:
        for line in fh:
            iid, hist, cands, pos = line.rstrip("\n").split("\t")
            instances.append(TrainingInstance(tuple(map(int, hist.split())), tuple(map(int, cands.split())),
                                              int(pos), int(iid)))
    return Artifacts(root, vocab, fm, np.load(root / "embeddings.npy"),
                     parse_behaviors_file(root / "train_behaviors.tsv"), parse_behaviors_file(root / "dev_behaviors.tsv"),
                     instances, cats, manifest)


def cmd_preprocess(cfg: Config) -> int:
    _require(cfg, "news", "behaviors", "out")
    news_path = _require_file(cfg["news"], "news file")
    beh_path = _require_file(cfg["behaviors"], "behaviors file")
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)

    news = parse_news_file(news_path)
    impressions = parse_behaviors_file(beh_path)
    if cfg["dev_behaviors"]:
        train_imps, dev_imps = impressions, parse_behaviors_file(_require_file(cfg["dev_behaviors"], "dev behaviors file"))
    else:
        n_dev = int(round(len(impressions) * cfg["dev_fraction"]))
        train_imps, dev_imps = impressions[:len(impressions) - n_dev], impressions[len(impressions) - n_dev:]
    log.info("parsed %d news, %d train / %d dev impressions", len(news), len(train_imps), len(dev_imps))

    vocab = build_vocabulary(news, cfg["min_count"], cfg["max_vocab"], use_body=cfg["use_body"])
    fm = build_feature_matrix(news, vocab, cfg["title_len"], cfg["body_len"], cfg["use_body"])
    if cfg["embeddings"]:
        emb_path = _require_file(cfg["embeddings"], "embedding file")
        dim = _embed_dim_from_file(emb_path)
        if cfg.provenance["embed_dim"] != "default" and cfg["embed_dim"] != dim:
            raise ValueError(f"embed_dim={cfg['embed_dim']} but {emb_path} has {dim}-dimensional vectors")
        emb = load_pretrained_embeddings(emb_path, vocab, dim, seed=cfg["seed"])
    else:
        emb = init_embeddings(vocab, cfg["embed_dim"], seed=cfg["seed"])
    instances = sample_all(train_imps, cfg["negatives"], cfg["seed"], fm, cfg["max_history"])

    vocab.save(out / "vocab.tsv")
    with open(out / "news_index.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for rec in news:
            fh.write(f"{fm.row(rec.news_id)}\t{rec.news_id}\t{rec.category}\t{rec.subcategory}\n")
    np.save(out / "features.npy", fm.rows)
    np.save(out / "embeddings.npy", emb.astype(np.float32))
    write_behaviors_file(train_imps, out / "train_behaviors.tsv")
    write_behaviors_file(dev_imps, out / "dev_behaviors.tsv")
    with open(out / "train_instances.tsv", "w", encoding="utf-8", newline="\n") as fh:
        for inst in instances:
            fh.write(f"{inst.instance_id}\t{' '.join(map(str, inst.history))}\t"
                     f"{' '.join(map(str, inst.candidate_rows))}\t{inst.positive_position}\n")
    settings = {k: cfg[k] for k in ("title_len", "body_len", "use_body", "min_count", "max_vocab", "dev_fraction",
                                    "negatives", "max_history", "seed")}
    settings["embed_dim"] = int(emb.shape[1])
    manifest = {"settings": settings, "vocab_size": vocab.size, "n_news": len(news),
                "n_train_impressions": len(train_imps), "n_dev_impressions": len(dev_imps),
                "n_instances": len(instances), "files": {name: _sha256(out / name) for name in ARTIFACTS}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    log.info("wrote artifacts to %s", out, extra={"payload": manifest})
    print(f"preprocess ok: {out} vocab={vocab.size} news={len(news)} instances={len(instances)}")
    return 0


def _model_config(cfg: Config, art: Artifacts) -> ModelConfig:
    dim = art.embeddings.shape[1]
    if cfg.provenance["embed_dim"] != "default" and cfg["embed_dim"] != dim:
        raise ValueError(f"embed_dim={cfg['embed_dim']} but processed embeddings are {dim}-dimensional")
    return ModelConfig(vocab_size=art.vocab.size, embed_dim=dim, heads=cfg["heads"], head_dim=cfg["head_dim"],
                       attn_dim=cfg["attn_dim"], n_topics=cfg["n_topics"], tau=cfg["tau"], variant=cfg["model"],
                       train_embedding=cfg["train_embedding"], dtype=cfg["precision"])


def _plan(cfg: Config) -> BatchPlan:
    return BatchPlan(cfg["batch_size"], cfg["negatives"], cfg["max_history"], cfg["shuffle"], cfg["seed"])


# schema key -> grid key understood by training.apply_settings
_GRID_KEYS = {"model": "variant", "precision": "dtype"}


def cmd_train(cfg: Config) -> int:
    _require(cfg, "data")
    art = load_artifacts(cfg["data"])
    ckpt_dir = Path(cfg["checkpoint_dir"] or art.root / "checkpoints")
    tcfg = TrainConfig(cfg["epochs"], _plan(cfg), cfg["layout"], cfg["learning_rate"], cfg["patience"], cfg["seed"],
                       str(ckpt_dir), cfg["eval_batch_size"])
    mcfg = _model_config(cfg, art)
    if cfg["grid"]:
        grid = {_GRID_KEYS.get(k, k): v for k, v in parse_grid(cfg["grid"]).items()}
        result = grid_search(GridSpec(grid, cfg["objective"]), tcfg, art.train, art.dev, art.fm, mcfg, art.embeddings)
        (ckpt_dir / "grid.tsv").write_text(grid_table(result), encoding="utf-8")
        if result.winner is None or result.winner.checkpoint is None:
            raise RuntimeError("every grid cell failed")
        shutil.copyfile(result.winner.checkpoint, ckpt_dir / "best.ckpt")
        log.info("grid winner cell %d %s", result.winner.index, result.winner.settings,
                 extra={"payload": result.winner.metrics})
        print(f"train ok: grid winner cell {result.winner.index} -> {ckpt_dir / 'best.ckpt'}")
        return 0
    params = ModelParams.init(mcfg, seed=cfg["seed"], embedding=art.embeddings)
    result = train(tcfg, art.train, art.dev, art.fm, params)
    if result.best_checkpoint is None:
        result_path = save_checkpoint(result.params, None, ckpt_dir / "best.ckpt")
    else:
        result_path = result.best_checkpoint
    print(f"train ok: best epoch {result.best_epoch} dev auc={result.best_auc:.4f} -> {result_path}")
    return 0


def _load_model(cfg: Config) -> tuple[Artifacts, ModelParams]:
    _require(cfg, "data", "checkpoint")
    art = load_artifacts(cfg["data"])
    params, _ = load_checkpoint(_require_file(cfg["checkpoint"], "checkpoint"))
    if params.config.vocab_size != art.vocab.size:
        raise ValueError(f"checkpoint vocabulary ({params.config.vocab_size}) does not match artifacts "
                         f"({art.vocab.size})")
    return art, params


def cmd_evaluate(cfg: Config) -> int:
    art, params = _load_model(cfg)
    report = evaluate_model(params, art.dev, art.fm, cfg["layout"], cfg["max_history"], cfg["eval_batch_size"])
    (art.root / "metrics.txt").write_text(report.to_text(), encoding="utf-8")
    log.info("evaluation done", extra={"payload": json.loads(report.to_json())})
    sys.stdout.write(report.to_text())
    sys.stdout.write(report.to_json() + "\n")
    return 0


def cmd_bench(cfg: Config) -> int:
    art, params = _load_model(cfg)
    layouts = [x.strip() for x in cfg["layouts"].split(",") if x.strip()]
    s = art.manifest["settings"]
    plan = BatchPlan(cfg["batch_size"], s["negatives"], s["max_history"], True, cfg["seed"])
    reports = {}
    for layout in layouts:
        reports[layout] = measure_throughput(params, art.instances, art.fm, layout, plan, cfg["warmup_batches"],
                                             cfg["measured_batches"])
        log.info("bench %s", layout, extra={"payload": json.loads(reports[layout].to_json())})
    text = compare_report(reports, params.config.variant)
    (art.root / "bench.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def _latest_history(art: Artifacts, user: str) -> tuple[str, ...]:
    for imp in reversed(art.train + art.dev):
        if imp.user_id == user and imp.history:
            return imp.history
    raise KeyError(f"no impression with a non-empty history for user {user!r}")


def cmd_explain(cfg: Config) -> int:
    _require(cfg, "user", "news_id")
    art, params = _load_model(cfg)
    users = [u.strip() for u in cfg["user"].split(",")]
    news = [n.strip() for n in cfg["news_id"].split(",")]
    if len(users) != len(news):
        raise UsageError("--user and --news must list the same number of ids")
    left, _, right = cfg["delimiters"].partition(",")
    blocks = []
    for u, n in zip(users, news):
        exp = generate_explanation(_latest_history(art, u)[-cfg["max_history"]:], n, params, art.fm, art.vocab,
                                   cfg["top_t"], cfg["top_m"], user_id=u, categories=art.categories,
                                   delimiters=(left, right))
        blocks.append(exp.text)
    text = "\n".join(blocks)
    (art.root / "explanations.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


HANDLERS = {"preprocess": cmd_preprocess, "train": cmd_train, "evaluate": cmd_evaluate, "bench": cmd_bench,
            "explain": cmd_explain}

USAGE = """usage: newsrec <command> [--config FILE] [--key value ...]

commands:
  preprocess --news PATH --behaviors PATH [--dev_behaviors PATH] [--embeddings PATH] --out DIR
  train      --data DIR [--config FILE] [overrides]
  evaluate   --data DIR --checkpoint PATH
  bench      --data DIR --checkpoint PATH [--layouts zero_pad,concat]
  explain    --data DIR --checkpoint PATH --user ID[,ID...] --news ID[,ID...]
"""


def _split_config_flag(argv: list[str]) -> tuple[list[str], str | None]:
    rest, path = [], None
    i = 0
    while i < len(argv):
        if argv[i] == "--config":
            if i + 1 >= len(argv):
                raise UsageError("--config needs a path")
            path = argv[i + 1]
            i += 2
        elif argv[i].startswith("--config="):
            path = argv[i].partition("=")[2]
            i += 1
        else:
            rest.append(argv[i])
            i += 1
    return rest, path


def _fail(command: str, exc: BaseException) -> None:
    record = {"status": "error", "command": command, "error": type(exc).__name__, "message": str(exc).strip("'\"")}
    sys.stderr.write(json.dumps(record, sort_keys=True) + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] in ("-h", "--help"):
        sys.stdout.write(USAGE)
        return 0 if argv else 2
    command, rest = argv[0], argv[1:]
    if command not in HANDLERS:
        _fail(command, UsageError(f"unknown command {command!r}; expected one of {', '.join(COMMANDS)}"))
        return 2
    counter = runlog.setup()
    try:
        flags, config_file = _split_config_flag(rest)
        cfg = parse_config(flags, config_file, aliases={"news": "news_id"} if command == "explain" else None)
        base = cfg["out"] if command == "preprocess" else cfg["data"]
        log_file = cfg["log_file"] or (str(Path(base) / "logs" / f"{command}.log") if base else "")
        counter = runlog.setup(log_file or None)
        log.info("resolved config for %s", command,
                 extra={"payload": {k: [cfg[k], cfg.provenance[k]] for k in sorted(cfg.values)}})
        status = HANDLERS[command](cfg)
    except (ConfigError, UsageError, FileNotFoundError, ValueError, KeyError, OSError, RuntimeError,
            FloatingPointError) as exc:
        log.error("%s failed: %s", command, exc)
        _fail(command, exc)
        return 1
    return 1 if counter.count or status else 0


if __name__ == "__main__":
    raise SystemExit(main())
