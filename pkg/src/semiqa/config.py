"""Run configuration: INI-style file with per-flag overrides; secrets stay in the environment."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional


@dataclass
class GraphSection:
    nodes: str = ""
    edges: str = ""
    embedding_cache: str = ""


@dataclass
class EmbeddingSection:
    provider: str = "hash"  # hash | remote
    dim: int = 64
    model: str = "text-embedding-3-small"
    seed: int = 0


@dataclass
class BackendSection:
    kind: str = "scripted"  # scripted | replay | record | remote
    model: str = "gpt-4"
    script: str = ""
    cassette: str = ""
    max_in_flight: int = 4
    attempts: int = 3
    timeout: float = 30.0


@dataclass
class AgentSection:
    k: int = 5
    t: int = 5
    prune_mode: str = "score"


@dataclass
class PlannerSection:
    source: str = "frequency"  # frequency | llm | none
    model: str = ""
    max_len: int = 3
    n_paths: int = 3
    match_k: int = 5


@dataclass
class EvalSection:
    dataset: str = ""
    parallelism: int = 1
    limit: Optional[int] = None
    seed: int = 0
    out_dir: str = "runs"


@dataclass
class Config:
    graph: GraphSection = field(default_factory=GraphSection)
    embedding: EmbeddingSection = field(default_factory=EmbeddingSection)
    backend: BackendSection = field(default_factory=BackendSection)
    agent: AgentSection = field(default_factory=AgentSection)
    planner: PlannerSection = field(default_factory=PlannerSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> None:
        counts = {
            "agent.k": self.agent.k,
            "agent.t": self.agent.t,
            "planner.max_len": self.planner.max_len,
            "planner.n_paths": self.planner.n_paths,
            "planner.match_k": self.planner.match_k,
            "eval.parallelism": self.eval.parallelism,
            "embedding.dim": self.embedding.dim,
        }
        bad = [k for k, v in counts.items() if v < 1]
        if bad:
            raise ValueError(f"must be >= 1: {', '.join(bad)}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:10]


def _coerce(raw: str, typ: Any) -> Any:
    if typ in (int, "int"):
        return int(raw)
    if typ in (float, "float"):
        return float(raw)
    if typ in ("Optional[int]",):
        return None if raw.strip().lower() in ("", "none") else int(raw)
    return raw


def load_config(path: str | Path | None = None) -> Config:
    """Read ``[section] key = value`` pairs onto the defaults; unknown keys are errors."""
    cfg = Config()
    if path is None:
        return cfg
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(f"config file not found: {path}")
    for section in parser.sections():
        if not hasattr(cfg, section):
            raise ValueError(f"unknown config section [{section}]")
        target = getattr(cfg, section)
        types = {f.name: f.type for f in dataclasses.fields(target)}
        for key, raw in parser.items(section):
            if key not in types:
                raise ValueError(f"unknown config key {section}.{key}")
            setattr(target, key, _coerce(raw, types[key]))
    return cfg
