"""Engine configuration: one JSON document wiring backend, triage, and paths."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .embedding import EmbeddingTable, load_table
from .gateway import Backend, build_backend
from .prompts import ContextExemplar, load_context_set
from .triage import TriageConfig, TriageEngine


class ConfigError(Exception):
    """Invalid or incomplete engine configuration."""


@dataclass
class EngineConfig:
    backend: dict
    triage: TriageConfig
    paths: dict[str, Path]
    base_dir: Path
    raw: dict

    def effective(self) -> dict:
        """Echo of the configuration as applied, for reproducible outputs."""
        return {
            "backend": {k: v for k, v in self.backend.items()},
            "triage": {
                "epsilon": self.triage.epsilon,
                "h": self.triage.h,
                "k": self.triage.k,
                "estimator": self.triage.estimator,
                "max_question_rounds": self.triage.max_question_rounds,
                "seed": self.triage.seed,
                "action_temperature": self.triage.action_temperature,
                "followup_temperature": self.triage.followup_temperature,
                "max_tokens": self.triage.max_tokens,
                "skill_template": self.triage.skill_template,
            },
            "paths": {k: str(v) for k, v in self.paths.items()},
        }


def load_config(path: str | Path) -> EngineConfig:
    """Parse and validate a config file; referenced files must exist."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    base_dir = path.parent

    backend = raw.get("backend")
    if not isinstance(backend, dict) or "kind" not in backend:
        raise ConfigError(f"{path}: missing backend block with a kind")

    triage_raw = dict(raw.get("triage", {}))
    if "epsilon" not in triage_raw:
        raise ConfigError(f"{path}: triage block needs an epsilon")
    feasibility = triage_raw.pop("feasibility_keywords", None)
    if feasibility:
        if "negation" in feasibility:
            triage_raw["negation_keywords"] = tuple(feasibility["negation"])
        if "affirmation" in feasibility:
            triage_raw["affirmation_keywords"] = tuple(feasibility["affirmation"])
    try:
        triage = TriageConfig(**triage_raw)
    except TypeError as exc:
        raise ConfigError(f"{path}: bad triage block ({exc})") from None

    paths: dict[str, Path] = {}
    for key, value in raw.get("paths", {}).items():
        resolved = (base_dir / value).resolve()
        if not resolved.exists():
            raise ConfigError(f"{path}: paths.{key} does not exist: {resolved}")
        paths[key] = resolved
    for required in ("embedding_table", "context_set"):
        if required not in paths:
            raise ConfigError(f"{path}: paths.{required} is required")
    if backend.get("kind") == "mock":
        rules = backend.get("rules_path")
        if not rules or not (base_dir / rules).exists():
            raise ConfigError(f"{path}: backend.rules_path does not exist: {rules}")

    return EngineConfig(
        backend=backend, triage=triage, paths=paths, base_dir=base_dir, raw=raw
    )


def build_engine(config: EngineConfig) -> TriageEngine:
    backend: Backend = build_backend(config.backend, base_dir=config.base_dir)
    table: EmbeddingTable = load_table(
        config.paths["embedding_table"],
        oov_policy=config.raw.get("oov_policy", "zero"),
    )
    context_set: list[ContextExemplar] = load_context_set(config.paths["context_set"])
    return TriageEngine(
        config=config.triage,
        backend=backend,
        context_set=context_set,
        table=table,
    )
