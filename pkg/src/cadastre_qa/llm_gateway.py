"""Uniform access to completion and embedding backends.

Ships the deterministic scripted and replay providers the test suite runs
on, an OpenAI-compatible HTTP client for live use, and the parsers for the
strict output grammars the agent prompts demand. Every parser tolerates
reasoning prose around the final structured span: the last span wins.
"""

from __future__ import annotations

import ast
import hashlib
import json
import re
import threading
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import httpx

from .errors import (
    InvalidDatasetNumber,
    MalformedReferenceList,
    MalformedVerdict,
    MissingAnswerMarker,
    NoCodeBlock,
    ProviderTimeout,
    ProviderUnavailable,
)

ROLE_TAGS = (
    "column_extractor",
    "row_extractor",
    "planner",
    "coder",
    "debugger",
    "sql_generator",
    "judge",
)


@dataclass(frozen=True)
class CompletionRequest:
    """One completion call, tagged with the pipeline stage that issued it."""

    system_prompt: str
    user_prompt: str
    seed: int
    role_tag: str

    def __post_init__(self) -> None:
        if not self.system_prompt or not self.user_prompt:
            raise ValueError("prompts must be non-empty")
        if self.role_tag not in ROLE_TAGS:
            raise ValueError(f"unknown role tag {self.role_tag!r}")

    def prompt_hash(self) -> str:
        digest = hashlib.sha256()
        digest.update(self.system_prompt.encode("utf-8"))
        digest.update(b"\x00")
        digest.update(self.user_prompt.encode("utf-8"))
        return digest.hexdigest()


@dataclass(frozen=True)
class TranscriptEntry:
    role_tag: str
    seed: int
    prompt_hash: str
    response: str
    latency_ms: float
    provider_id: str


class Transcript:
    """Append-only record of completion calls, replayable as a provider."""

    def __init__(self, entries: Iterable[TranscriptEntry] = ()) -> None:
        self._entries: list[TranscriptEntry] = list(entries)

    def append(self, entry: TranscriptEntry) -> None:
        self._entries.append(entry)

    @property
    def entries(self) -> tuple[TranscriptEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def save(self, path: str | Path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for e in self._entries:
                fh.write(
                    json.dumps(
                        {
                            "role_tag": e.role_tag,
                            "seed": e.seed,
                            "prompt_hash": e.prompt_hash,
                            "response": e.response,
                            "latency_ms": e.latency_ms,
                            "provider_id": e.provider_id,
                        },
                        ensure_ascii=False,
                    )
                )
                fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "Transcript":
        entries = []
        with Path(path).open(encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                raw = json.loads(line)
                entries.append(
                    TranscriptEntry(
                        role_tag=raw["role_tag"],
                        seed=int(raw["seed"]),
                        prompt_hash=raw["prompt_hash"],
                        response=raw["response"],
                        latency_ms=float(raw.get("latency_ms", 0.0)),
                        provider_id=raw.get("provider_id", "unknown"),
                    )
                )
        return cls(entries)


class CompletionProvider:
    """Backend seam: turn a request into model text."""

    provider_id = "base"

    def complete(self, request: CompletionRequest) -> str:
        raise NotImplementedError


class ScriptedProvider(CompletionProvider):
    """Pops pre-scripted responses in order; empty queue means unavailable."""

    provider_id = "scripted"

    def __init__(self, responses: Iterable[str]) -> None:
        self._queue = deque(responses)

    def complete(self, request: CompletionRequest) -> str:
        if not self._queue:
            raise ProviderUnavailable("scripted provider has no responses left")
        return self._queue.popleft()


class ReplayProvider(CompletionProvider):
    """Serves a recorded transcript back in order.

    In strict mode each request must hash to the recorded prompt and carry
    the recorded role tag, which guarantees the replayed run is byte-for-byte
    the recorded one.
    """

    provider_id = "replay"

    def __init__(self, transcript: Transcript, strict: bool = True) -> None:
        self._entries = deque(transcript.entries)
        self._strict = strict

    def complete(self, request: CompletionRequest) -> str:
        if not self._entries:
            raise ProviderUnavailable("replay transcript exhausted")
        entry = self._entries.popleft()
        if self._strict:
            if entry.role_tag != request.role_tag:
                raise ProviderUnavailable(
                    f"replay mismatch: recorded role {entry.role_tag}, got {request.role_tag}"
                )
            if entry.prompt_hash != request.prompt_hash():
                raise ProviderUnavailable(
                    f"replay mismatch for role {request.role_tag}: prompt differs from recording"
                )
        return entry.response


class HttpCompletionProvider(CompletionProvider):
    """OpenAI-compatible chat-completions client.

    Generation parameters stay at provider defaults; only the request seed is
    forwarded.
    """

    provider_id = "http"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str = "",
        timeout_s: float = 120.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self._endpoint = endpoint.rstrip("/")
        self._model = model
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout_s, headers=headers, transport=transport)

    def complete(self, request: CompletionRequest) -> str:
        payload = {
            "model": self._model,
            "seed": request.seed,
            "messages": [
                {"role": "system", "content": request.system_prompt},
                {"role": "user", "content": request.user_prompt},
            ],
        }
        try:
            response = self._client.post(f"{self._endpoint}/chat/completions", json=payload)
        except httpx.TimeoutException as exc:
            raise ProviderTimeout(f"completion request timed out: {exc}") from exc
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"completion request failed: {exc}") from exc
        if response.status_code != 200:
            raise ProviderUnavailable(
                f"completion endpoint returned {response.status_code}: {response.text[:200]}"
            )
        try:
            return response.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise ProviderUnavailable(f"malformed completion response: {exc}") from exc


class LlmGateway:
    """Owns one provider plus the run's private transcript.

    Retries once on a transport-level timeout, never on malformed content;
    repairing bad content is the debugger agent's job.
    """

    def __init__(self, provider: CompletionProvider, transcript: Transcript | None = None) -> None:
        self.provider = provider
        self.transcript = transcript if transcript is not None else Transcript()

    def complete(self, request: CompletionRequest) -> str:
        started = time.monotonic()
        try:
            response = self.provider.complete(request)
        except ProviderTimeout:
            response = self.provider.complete(request)
        latency_ms = (time.monotonic() - started) * 1000.0
        self.transcript.append(
            TranscriptEntry(
                role_tag=request.role_tag,
                seed=request.seed,
                prompt_hash=request.prompt_hash(),
                response=response,
                latency_ms=latency_ms,
                provider_id=self.provider.provider_id,
            )
        )
        return response


# --- embedders ---------------------------------------------------------------


class VectorTableEmbedder:
    """Deterministic embedder backed by an explicit text-to-vector table."""

    provider_id = "vector-table"

    def __init__(self, vectors: dict[str, Sequence[float]]) -> None:
        if not vectors:
            raise ValueError("vector table must not be empty")
        dims = {len(v) for v in vectors.values()}
        if len(dims) != 1:
            raise ValueError("all vectors must share one dimension")
        self._vectors = {k: tuple(float(x) for x in v) for k, v in vectors.items()}

    @classmethod
    def from_json(cls, path: str | Path) -> "VectorTableEmbedder":
        with Path(path).open(encoding="utf-8") as fh:
            return cls(json.load(fh))

    def embed(self, texts: Sequence[str]) -> list[tuple[float, ...]]:
        if not texts:
            raise ValueError("embed requires at least one text")
        missing = [t for t in texts if t not in self._vectors]
        if missing:
            raise ProviderUnavailable(f"no vector configured for {missing[0]!r}")
        return [self._vectors[t] for t in texts]


class HttpEmbedder:
    """OpenAI-compatible embeddings client."""

    provider_id = "http-embed"

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str = "",
        timeout_s: float = 60.0,
        transport: httpx.BaseTransport | None = None,
    ) -> None:
        self._endpoint = endpoint.rstrip("/")
        self._model = model
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout_s, headers=headers, transport=transport)

    def embed(self, texts: Sequence[str]) -> list[tuple[float, ...]]:
        if not texts:
            raise ValueError("embed requires at least one text")
        try:
            response = self._client.post(
                f"{self._endpoint}/embeddings",
                json={"model": self._model, "input": list(texts)},
            )
        except httpx.TimeoutException as exc:
            raise ProviderTimeout(f"embedding request timed out: {exc}") from exc
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"embedding request failed: {exc}") from exc
        if response.status_code != 200:
            raise ProviderUnavailable(f"embedding endpoint returned {response.status_code}")
        try:
            data = response.json()["data"]
            return [tuple(item["embedding"]) for item in data]
        except (KeyError, ValueError, TypeError) as exc:
            raise ProviderUnavailable(f"malformed embedding response: {exc}") from exc


class CachingEmbedder:
    """Per-text cache in front of an embedder; safe for concurrent use."""

    def __init__(self, inner) -> None:
        self._inner = inner
        self._cache: dict[str, tuple[float, ...]] = {}
        self._lock = threading.Lock()
        self.call_count = 0

    def embed(self, texts: Sequence[str]) -> list[tuple[float, ...]]:
        with self._lock:
            missing = [t for t in texts if t not in self._cache]
        if missing:
            fresh = self._inner.embed(missing)
            with self._lock:
                self._cache.update(zip(missing, fresh))
                self.call_count += 1
        with self._lock:
            return [self._cache[t] for t in texts]


# --- output-grammar parsers ---------------------------------------------------

_BRACKET_SPAN_RE = re.compile(r"\[\[(.*?)\]\]", re.DOTALL)
_CODE_BLOCK_RE = re.compile(r"```[a-zA-Z0-9_+-]*[ \t]*\r?\n(.*?)```", re.DOTALL)
_LIST_SPAN_RE = re.compile(r"\[[^\[\]]*\]", re.DOTALL)


def parse_bracketed_answer(text: str) -> str:
    """Content of the last ``[[...]]`` span, trimmed."""
    spans = _BRACKET_SPAN_RE.findall(text)
    if not spans:
        raise MissingAnswerMarker("no [[...]] span in model output")
    return spans[-1].strip()


def parse_boolean_verdict(text: str) -> bool:
    """Map the last bracketed span, case-insensitively, to True/False."""
    spans = _BRACKET_SPAN_RE.findall(text)
    if not spans:
        raise MalformedVerdict("no [[...]] span in verdict output")
    verdict = spans[-1].strip().lower()
    if verdict == "true":
        return True
    if verdict == "false":
        return False
    raise MalformedVerdict(f"verdict span {spans[-1].strip()!r} is neither True nor False")


def _as_reference(item: object) -> tuple[str, str, int]:
    if not isinstance(item, tuple) or len(item) != 3:
        raise MalformedReferenceList(f"expected a 3-tuple, got {item!r}")
    phrase, column, number = item
    if not isinstance(phrase, str) or not isinstance(column, str):
        raise MalformedReferenceList(f"phrase and column must be strings in {item!r}")
    if isinstance(number, str) and number.isdigit():
        number = int(number)
    if not isinstance(number, int) or isinstance(number, bool):
        raise MalformedReferenceList(f"dataset number must be an integer in {item!r}")
    if number not in (1, 2, 3):
        raise InvalidDatasetNumber(f"dataset number {number} is outside 1..3")
    return phrase, column, number


def parse_reference_list(text: str) -> list[tuple[str, str, int]]:
    """Last well-formed bracketed list of quoted (phrase, column, dataset) tuples.

    A literal ``[]`` yields an empty result. Dataset numbers outside {1,2,3}
    raise even when the rest of the list parses.
    """
    spans = _LIST_SPAN_RE.findall(text)
    last_error: MalformedReferenceList | None = None
    for span in reversed(spans):
        try:
            value = ast.literal_eval(span)
        except (ValueError, SyntaxError):
            continue
        if not isinstance(value, list):
            continue
        try:
            return [_as_reference(item) for item in value]
        except MalformedReferenceList as exc:
            last_error = exc
            continue
    if last_error is not None:
        raise last_error
    raise MalformedReferenceList("no parsable reference list in model output")


def format_reference_list(references: Sequence[tuple[str, str, int]]) -> str:
    """Canonical text form; inverse of :func:`parse_reference_list`."""
    body = ", ".join(f'("{p}", "{c}", {n})' for p, c, n in references)
    return f"[{body}]"


def extract_code_block(text: str) -> str:
    """Source of the first fenced code block."""
    found = _CODE_BLOCK_RE.search(text)
    if not found:
        raise NoCodeBlock("no fenced code block in model output")
    return found.group(1).strip("\n")
