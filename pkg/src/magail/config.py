"""Run configuration: one JSON file with a versioned schema.

Layout::

    {
      "schema_version": 1,
      "train":  {TrainConfig fields...},
      "track":  {TrackSpec fields...},
      "memory": {"embed_dim": 32, "local_slots": 100, "global_slots": 800},
      "paths":  {"dataset": "demos.jsonl", "run_dir": "runs/full"},
      "eval":   {"episodes": 20, "steps": 100, "seed": 0, "greedy": false}
    }

Every section is optional. Memory slot counts are derived (``k_local = T``,
``k_global = T * B``); when given they must agree. Relative paths are
resolved against the directory holding the config file.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .laneworld import TrackSpec
from .training import ConfigError, TrainConfig

SCHEMA_VERSION = 1
SECTIONS = ("schema_version", "train", "track", "memory", "paths", "eval")
EVAL_DEFAULTS = {"episodes": 20, "steps": None, "seed": 0, "greedy": False}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    track: TrackSpec = field(default_factory=TrackSpec)
    dataset: Path | None = None
    run_dir: Path | None = None
    eval: dict = field(default_factory=lambda: dict(EVAL_DEFAULTS))

    @property
    def k_local(self) -> int:
        return self.train.local_slots

    @property
    def k_global(self) -> int:
        return self.train.global_slots

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "train": self.train.to_dict(),
            "track": {k: v for k, v in self.track.to_dict().items() if k != "total_length"},
            "memory": {"embed_dim": self.train.embed_dim, "local_slots": self.k_local,
                       "global_slots": self.k_global},
            "paths": {"dataset": None if self.dataset is None else str(self.dataset),
                      "run_dir": None if self.run_dir is None else str(self.run_dir)},
            "eval": dict(self.eval),
        }


def _section(data: dict, name: str) -> dict:
    sec = data.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(name, "section must be an object")
    return sec


def parse_config(data: dict, base: Path | None = None) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("schema_version", "config must be a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"expected {SCHEMA_VERSION}, got {version!r}")
    for key in data:
        if key not in SECTIONS:
            raise ConfigError(key, "unknown section")

    train_d = dict(_section(data, "train"))
    memory = _section(data, "memory")
    for key in memory:
        if key not in ("embed_dim", "local_slots", "global_slots"):
            raise ConfigError(f"memory.{key}", "unknown field")
    if "embed_dim" in memory:
        train_d["embed_dim"] = memory["embed_dim"]
    try:
        train = TrainConfig.from_dict(train_d)
    except ConfigError as exc:
        raise ConfigError(f"train.{exc.field}", str(exc).split(": ", 1)[-1]) from None
    except TypeError as exc:
        raise ConfigError("train", str(exc)) from None
    if memory.get("local_slots", train.local_slots) != train.local_slots:
        raise ConfigError("memory.local_slots", f"must equal episode_len ({train.local_slots})")
    if memory.get("global_slots", train.global_slots) != train.global_slots:
        raise ConfigError("memory.global_slots",
                          f"must equal episode_len * batch_size ({train.global_slots})")

    try:
        track = TrackSpec.from_dict(_section(data, "track"))
    except (TypeError, ValueError) as exc:
        raise ConfigError("track", str(exc)) from None

    paths = _section(data, "paths")
    for key in paths:
        if key not in ("dataset", "run_dir"):
            raise ConfigError(f"paths.{key}", "unknown field")

    def resolve(key):
        v = paths.get(key)
        if v is None:
            return None
        if not isinstance(v, str):
            raise ConfigError(f"paths.{key}", "must be a string")
        p = Path(v)
        return p if p.is_absolute() or base is None else base / p

    ev = dict(EVAL_DEFAULTS)
    for key, v in _section(data, "eval").items():
        if key not in EVAL_DEFAULTS:
            raise ConfigError(f"eval.{key}", "unknown field")
        ev[key] = v
    if not isinstance(ev["episodes"], int) or ev["episodes"] < 1:
        raise ConfigError("eval.episodes", "must be a positive integer")
    if ev["steps"] is not None and (not isinstance(ev["steps"], int) or ev["steps"] < 3):
        raise ConfigError("eval.steps", "must be an integer >= 3")
    return RunConfig(train, track, resolve("dataset"), resolve("run_dir"), ev)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("schema_version", f"{path} is not valid JSON ({exc.msg})") from None
    return parse_config(data, path.parent)


def train_fields() -> list[str]:
    return [f.name for f in fields(TrainConfig)]
