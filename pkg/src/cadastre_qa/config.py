"""Application configuration: one YAML document plus flag overrides.

Relative paths inside the config resolve against the config file's
directory so a config can travel with its datasets. Everything referenced
must exist at startup; failures surface as ConfigError before any pipeline
work begins.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Mapping

import yaml

from .entity_search import SearchConfig
from .errors import ConfigError
from .executors import ScriptedExecutor, WireExecutor
from .llm_gateway import (
    CompletionProvider,
    HttpCompletionProvider,
    HttpEmbedder,
    LlmGateway,
    ReplayProvider,
    ScriptedProvider,
    Transcript,
    VectorTableEmbedder,
    CachingEmbedder,
)
from .tabular_store import Dataset, DatasetSpec, load_dataset, load_schema_config


def bundled_data_path(name: str) -> Path:
    """Path of a data file shipped inside the package."""
    return Path(resources.files("cadastre_qa").joinpath("data", name))


@dataclass
class ProviderSettings:
    kind: str = "http"
    endpoint: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key_env: str = "CADASTRE_QA_API_KEY"
    responses_file: Path | None = None  # kind == scripted
    transcript: Path | None = None  # kind == replay


@dataclass
class EmbedderSettings:
    kind: str = "none"
    path: Path | None = None  # kind == table
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "CADASTRE_QA_API_KEY"


@dataclass
class ExecutorSettings:
    kind: str = "scripted"
    command: list[str] = field(default_factory=list)
    script: Path | None = None
    timeout_s: float = 60.0


@dataclass
class AppConfig:
    schema_path: Path
    dataset_paths: dict[int, Path]
    provider: ProviderSettings
    embedder: EmbedderSettings
    executor: ExecutorSettings
    seeds: list[int] = field(default_factory=lambda: [1, 2, 3])
    max_retries: int = 3
    k: int = 4
    shots: int = 0
    shots_file: Path | None = None
    search: SearchConfig = field(default_factory=SearchConfig)
    info_score: bool = True
    transcript_out: Path | None = None

    def validate(self) -> None:
        if len(self.seeds) != 3 or len(set(self.seeds)) != 3:
            raise ConfigError(f"seeds must be 3 distinct integers, got {self.seeds}")
        if self.shots not in (0, 3):
            raise ConfigError(f"shots must be 0 or 3, got {self.shots}")
        for label, path in self._referenced_files():
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{label} file not found: {path}")

    def _referenced_files(self):
        yield "schema", self.schema_path
        for number, path in self.dataset_paths.items():
            yield f"dataset {number}", path
        yield "shots", self.shots_file
        yield "provider responses", self.provider.responses_file
        yield "provider transcript", self.provider.transcript
        yield "embedder vectors", self.embedder.path
        yield "executor script", self.executor.script

    # --- factories -----------------------------------------------------------

    def load_schemas(self) -> dict[int, DatasetSpec]:
        return load_schema_config(self.schema_path)

    def load_datasets(self) -> dict[int, Dataset]:
        specs = self.load_schemas()
        datasets = {}
        for number, path in sorted(self.dataset_paths.items()):
            spec = specs.get(number)
            if spec is None:
                raise ConfigError(f"dataset {number} has a path but no schema entry")
            datasets[number] = load_dataset(path, spec.schema, number, display_name=spec.name)
        return datasets

    def build_provider(self) -> CompletionProvider:
        p = self.provider
        if p.kind == "replay":
            if p.transcript is None:
                raise ConfigError("replay provider needs a transcript path")
            return ReplayProvider(Transcript.load(p.transcript))
        if p.kind == "scripted":
            if p.responses_file is None:
                raise ConfigError("scripted provider needs a responses file")
            import json

            with Path(p.responses_file).open(encoding="utf-8") as fh:
                return ScriptedProvider(json.load(fh))
        if p.kind == "http":
            api_key = os.environ.get(p.api_key_env, "")
            return HttpCompletionProvider(p.endpoint, p.model, api_key=api_key)
        raise ConfigError(f"unknown provider kind {p.kind!r}")

    def build_gateway(self) -> LlmGateway:
        return LlmGateway(self.build_provider())

    def build_embedder(self):
        e = self.embedder
        if e.kind == "none":
            return None
        if e.kind == "table":
            if e.path is None:
                raise ConfigError("table embedder needs a vectors file")
            return CachingEmbedder(VectorTableEmbedder.from_json(e.path))
        if e.kind == "http":
            api_key = os.environ.get(e.api_key_env, "")
            return CachingEmbedder(HttpEmbedder(e.endpoint, e.model, api_key=api_key))
        raise ConfigError(f"unknown embedder kind {e.kind!r}")

    def build_executor(self):
        x = self.executor
        if x.kind == "scripted":
            if x.script is None:
                raise ConfigError("scripted executor needs a script file")
            return ScriptedExecutor.from_json(x.script)
        if x.kind == "wire":
            if not x.command:
                raise ConfigError("wire executor needs a command")
            return WireExecutor(x.command)
        raise ConfigError(f"unknown executor kind {x.kind!r}")

    def load_shots(self) -> list[tuple[str, str]]:
        if self.shots == 0:
            return []
        from .sql_agent import load_shots

        path = self.shots_file or bundled_data_path("sql_shots.json")
        return load_shots(path)


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def load_app_config(path: str | Path, dataset_dir: str | Path | None = None) -> AppConfig:
    """Parse the YAML config; ``dataset_dir`` rebases relative dataset paths.

    Every path is resolved to an absolute one here: dataset paths travel to
    sandbox children whose working directory is never the caller's.
    """
    path = Path(path).resolve()
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with path.open(encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    if not isinstance(doc, Mapping):
        raise ConfigError(f"{path}: config must be a mapping")
    base = path.parent
    data_base = Path(dataset_dir).resolve() if dataset_dir else base

    raw_provider = doc.get("provider", {})
    provider = ProviderSettings(
        kind=raw_provider.get("kind", "http"),
        endpoint=raw_provider.get("endpoint", ProviderSettings.endpoint),
        model=raw_provider.get("model", ProviderSettings.model),
        api_key_env=raw_provider.get("api_key_env", ProviderSettings.api_key_env),
        responses_file=_resolve(base, raw_provider.get("responses_file")),
        transcript=_resolve(base, raw_provider.get("transcript")),
    )
    raw_embedder = doc.get("embedder", {})
    embedder = EmbedderSettings(
        kind=raw_embedder.get("kind", "none"),
        path=_resolve(base, raw_embedder.get("path")),
        endpoint=raw_embedder.get("endpoint", ""),
        model=raw_embedder.get("model", ""),
        api_key_env=raw_embedder.get("api_key_env", EmbedderSettings.api_key_env),
    )
    raw_executor = doc.get("executor", {})
    executor = ExecutorSettings(
        kind=raw_executor.get("kind", "scripted"),
        command=list(raw_executor.get("command", [])),
        script=_resolve(base, raw_executor.get("script")),
        timeout_s=float(raw_executor.get("timeout_s", 60.0)),
    )

    schema_value = doc.get("schema")
    schema_path = (
        _resolve(base, schema_value) if schema_value else bundled_data_path("schemas.yaml")
    )
    dataset_paths = {
        int(number): _resolve(data_base, value)
        for number, value in (doc.get("datasets") or {}).items()
    }

    search = SearchConfig(
        fuzzy_threshold=float(doc.get("fuzzy_threshold", 0.70)),
        semantic_threshold=float(doc.get("semantic_threshold", 0.40)),
        semantic_top_k=int(doc.get("semantic_top_k", doc.get("top_k", 5))),
    )

    return AppConfig(
        schema_path=schema_path,
        dataset_paths=dataset_paths,
        provider=provider,
        embedder=embedder,
        executor=executor,
        seeds=[int(s) for s in doc.get("seeds", [1, 2, 3])],
        max_retries=int(doc.get("max_retries", 3)),
        k=int(doc.get("k", 4)),
        shots=int(doc.get("shots", 0)),
        shots_file=_resolve(base, doc.get("shots_file")),
        search=search,
        info_score=bool(doc.get("info_score", True)),
        transcript_out=_resolve(base, doc.get("transcript_out")),
    )
