"""Runtime configuration with layered precedence.

Sources, strongest first: explicit overrides (CLI flags), environment
variables (``IOTSEEK_*``), a JSON config file, built-in defaults. Every
knob lives on one dataclass so the server, CLI, and tests construct the
same world from the same inputs.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

ENV_PREFIX = "IOTSEEK_"


@dataclass
class AppConfig:
    # data
    data_dir: str | None = None  # dataset directory (descriptions + documents)
    index_path: str | None = None  # prebuilt vector index snapshot, optional

    # providers
    provider_mode: str = "mock"  # mock | replay | live | record
    fixtures_dir: str | None = None
    routing_url: str | None = None
    routing_api_key: str | None = None
    maps_url: str | None = None
    web_url: str | None = None

    # decision backend
    llm_provider: str = "mock"  # mock | http-openai-compatible
    llm_base_url: str | None = None
    llm_api_key: str | None = None
    llm_model: str = "default"
    templates_dir: str | None = None  # None -> bundled prompt templates

    # retrieval
    embedding_provider: str = "hashed-ngram"
    k_services: int = 3
    k_documents: int = 3
    context_policy: str = "rank1_only"
    hop_budget: int = 3

    # vector index
    hnsw_m: int = 16
    hnsw_ef_construction: int = 200
    hnsw_ef_search: int = 64
    hnsw_seed: int = 2024

    # server
    host: str = "127.0.0.1"
    port: int = 8000
    trace_ring_size: int = 1000
    max_sessions: int = 1000

    def to_json(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


_INT_FIELDS = {
    f.name for f in dataclasses.fields(AppConfig) if f.type in ("int",)
}


def _coerce(name: str, value: Any) -> Any:
    if name in _INT_FIELDS and value is not None:
        return int(value)
    return value


def load_config(
    path: str | Path | None = None,
    env: Mapping[str, str] | None = None,
    overrides: Mapping[str, Any] | None = None,
) -> AppConfig:
    """Merge file, then environment, then explicit overrides onto defaults."""
    env = os.environ if env is None else env
    values: dict[str, Any] = {}

    if path is not None:
        raw = json.loads(Path(path).read_text())
        if not isinstance(raw, dict):
            raise ValueError(f"config file {path} must hold a JSON object")
        unknown = set(raw) - {f.name for f in dataclasses.fields(AppConfig)}
        if unknown:
            raise ValueError(f"unknown config keys in {path}: {sorted(unknown)}")
        values.update(raw)

    known = {f.name for f in dataclasses.fields(AppConfig)}
    for key, value in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        name = key[len(ENV_PREFIX) :].lower()
        if name not in known:
            raise ValueError(f"unknown config variable {key}")
        values[name] = value

    if overrides:
        for k, v in overrides.items():
            if k not in known:
                raise ValueError(f"unknown config override {k!r}")
            if v is not None:
                values[k] = v

    values = {k: _coerce(k, v) for k, v in values.items()}
    return AppConfig(**values)
