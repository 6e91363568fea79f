"""Three-tier settings: built-in defaults < config file < command-line flags.

The config file is INI-style, one section per module::

    [train]
    learning_rate = 1e-3
    epochs = 3

Every key lives in exactly one section and is validated against ``SCHEMA``.
"""

from __future__ import annotations

import configparser
import difflib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class Key:
    section: str
    type: type
    default: Any
    help: str = ""
    choices: tuple = ()

    def parse(self, raw: Any):
        value = (raw if isinstance(raw, bool) else _bool(raw)) if self.type is bool else self.type(raw)
        if self.choices and value not in self.choices:
            raise ValueError(f"{value!r} not in {self.choices}")
        return value


SCHEMA: dict[str, Key] = {
    # data
    "news": Key("data", str, "", "news.tsv path"),
    "behaviors": Key("data", str, "", "behaviors.tsv path (training impressions)"),
    "dev_behaviors": Key("data", str, "", "dev behaviors path; empty splits off dev_fraction"),
    "embeddings": Key("data", str, "", "GloVe-style text file; empty means random init"),
    "out": Key("data", str, "", "preprocess output directory"),
    "data": Key("data", str, "", "processed artifact directory"),
    "title_len": Key("data", int, 30),
    "body_len": Key("data", int, 0),
    "use_body": Key("data", bool, False),
    "min_count": Key("data", int, 1),
    "max_vocab": Key("data", int, 100_000),
    "dev_fraction": Key("data", float, 0.2),
    # batching
    "batch_size": Key("batch", int, 32),
    "negatives": Key("batch", int, 4),
    "max_history": Key("batch", int, 50),
    "shuffle": Key("batch", bool, True),
    "seed": Key("batch", int, 0),
    # model
    "model": Key("model", str, "nrms", "nrms or topic", ("nrms", "topic")),
    "embed_dim": Key("model", int, 300),
    "heads": Key("model", int, 16),
    "head_dim": Key("model", int, 16),
    "attn_dim": Key("model", int, 200),
    "n_topics": Key("model", int, 50),
    "tau": Key("model", float, 1.0),
    "train_embedding": Key("model", bool, True),
    "precision": Key("model", str, "float32", "float32 or float64", ("float32", "float64")),
    # training
    "epochs": Key("train", int, 5),
    "learning_rate": Key("train", float, 1e-4),
    "patience": Key("train", int, 2),
    "layout": Key("train", str, "concat", "zero_pad or concat", ("zero_pad", "concat")),
    "eval_batch_size": Key("train", int, 64),
    "checkpoint_dir": Key("train", str, "", "defaults to <data>/checkpoints"),
    "grid": Key("train", str, "", "e.g. 'learning_rate=1e-4,1e-3; heads=8,16'"),
    "objective": Key("train", str, "auc", "", ("auc", "mrr", "ndcg5", "ndcg10")),
    # evaluation / bench / explain
    "checkpoint": Key("eval", str, ""),
    "warmup_batches": Key("bench", int, 10),
    "measured_batches": Key("bench", int, 20),
    "layouts": Key("bench", str, "zero_pad,concat"),
    "user": Key("explain", str, "", "comma-separated user ids"),
    "news_id": Key("explain", str, "", "comma-separated news ids, paired with --user"),
    "top_t": Key("explain", int, 3),
    "top_m": Key("explain", int, 5),
    "delimiters": Key("explain", str, "[[,]]"),
    # run
    "log_file": Key("run", str, ""),
}


@dataclass
class Config:
    values: dict[str, Any]
    provenance: dict[str, str] = field(default_factory=dict)

    def __getitem__(self, key: str):
        return self.values[key]

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def lines(self) -> list[str]:
        return [f"{k}={self.values[k]!r} ({self.provenance[k]})" for k in sorted(self.values)]

    def as_dict(self) -> dict:
        return {k: self.values[k] for k in sorted(self.values)}


def _unknown(key: str) -> ConfigError:
    close = difflib.get_close_matches(key, SCHEMA, n=1)
    hint = f"; did you mean {close[0]!r}?" if close else ""
    return ConfigError(f"unknown setting {key!r}{hint}")


def _coerce(key: str, raw, source: str):
    try:
        return SCHEMA[key].parse(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {key}={raw!r} is not a valid {SCHEMA[key].type.__name__} ({exc})") from None


def read_config_file(path: str | Path) -> dict[str, Any]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from None
    out = {}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in SCHEMA:
                raise _unknown(key)
            if SCHEMA[key].section != section:
                raise ConfigError(f"{path}: {key!r} belongs in section [{SCHEMA[key].section}], not [{section}]")
            out[key] = _coerce(key, raw, str(path))
    return out


def parse_flags(argv: Sequence[str], aliases: dict[str, str] | None = None) -> dict[str, Any]:
    """Parse ``--key value`` / ``--key=value`` / bare ``--flag`` tokens against the schema.

    ``aliases`` lets a subcommand give a flag its own meaning (``explain
    --news`` names an article id rather than the news file).
    """
    out: dict[str, Any] = {}
    i = 0
    while i < len(argv):
        tok = argv[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        name, eq, raw = tok[2:].partition("=")
        key = name.replace("-", "_")
        key = (aliases or {}).get(key, key)
        if key not in SCHEMA:
            raise _unknown(key)
        if not eq:
            nxt = argv[i + 1] if i + 1 < len(argv) else None
            if SCHEMA[key].type is bool and (nxt is None or nxt.startswith("--")):
                raw = "true"
            elif nxt is None:
                raise ConfigError(f"--{name} needs a value")
            else:
                raw = nxt
                i += 1
        out[key] = _coerce(key, raw, "command line")
        i += 1
    return out


def parse_config(argv: Sequence[str] = (), config_file: str | Path | None = None,
                 aliases: dict[str, str] | None = None) -> Config:
    values = {k: key.default for k, key in SCHEMA.items()}
    provenance = {k: "default" for k in SCHEMA}
    if config_file:
        for k, v in read_config_file(config_file).items():
            values[k], provenance[k] = v, "file"
    for k, v in parse_flags(argv, aliases).items():
        values[k], provenance[k] = v, "flag"
    return Config(values, provenance)


def parse_grid(text: str) -> dict[str, list]:
    """``'learning_rate=1e-4,1e-3; heads=8,16'`` -> typed candidate lists."""
    grid: dict[str, list] = {}
    for part in filter(None, (p.strip() for p in text.split(";"))):
        key, eq, vals = part.partition("=")
        key = key.strip()
        if not eq:
            raise ConfigError(f"grid entry {part!r} lacks '='")
        if key not in SCHEMA:
            raise _unknown(key)
        grid[key] = [_coerce(key, v.strip(), "grid") for v in vals.split(",") if v.strip()]
    return grid
