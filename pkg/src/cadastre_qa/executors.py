"""Executor backends for generated analysis programs.

The pipeline only needs the ``run(source, dataset_paths, timeout_s)``
contract. Tests use the scripted stub; deployments point the wire client at
a sandbox runner process speaking line-delimited JSON on stdio:

    request:  {"source": ..., "dataset_paths": {"1": path, ...}, "timeout_s": ...}
    response: {"status": "ok|error|timeout", "stdout": ..., "stderr": ..., "duration_ms": ...}
"""

from __future__ import annotations

import json
import subprocess
from collections import deque
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import ConfigError
from .python_agent import ExecutionOutcome


class ScriptedExecutor:
    """Pops pre-scripted outcomes in order; the primary test stub."""

    def __init__(self, outcomes: Iterable[ExecutionOutcome]) -> None:
        self._queue = deque(outcomes)
        self.calls: list[str] = []

    @classmethod
    def failing_then_ok(cls, failures: int, ok_stdout: str = "The answer is: [[yes]]"):
        """Common retry-test shape: ``failures`` errors, then one success."""
        outcomes = [
            ExecutionOutcome(status="error", stderr=f"boom {i}") for i in range(failures)
        ]
        outcomes.append(ExecutionOutcome(status="ok", stdout=ok_stdout))
        return cls(outcomes)

    @classmethod
    def from_json(cls, path: str | Path) -> "ScriptedExecutor":
        with Path(path).open(encoding="utf-8") as fh:
            doc = json.load(fh)
        outcomes = [
            ExecutionOutcome(
                status=item["status"],
                stdout=item.get("stdout", ""),
                stderr=item.get("stderr", ""),
                duration_ms=int(item.get("duration_ms", 0)),
            )
            for item in doc["outcomes"]
        ]
        return cls(outcomes)

    def run(
        self, source: str, dataset_paths: Mapping[int, str], timeout_s: float
    ) -> ExecutionOutcome:
        self.calls.append(source)
        if not self._queue:
            raise ConfigError("scripted executor has no outcomes left")
        return self._queue.popleft()


class WireExecutor:
    """Client for a sandbox runner child process.

    The runner owns timeout enforcement; the client only maps wire responses
    to outcomes and turns runner death into an error outcome so the debug
    loop stays well-defined.
    """

    def __init__(self, command: Sequence[str]) -> None:
        self._command = list(command)
        self._process: subprocess.Popen | None = None

    def _ensure_process(self) -> subprocess.Popen:
        if self._process is None or self._process.poll() is not None:
            self._process = subprocess.Popen(
                self._command,
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL,
                text=True,
                encoding="utf-8",
            )
        return self._process

    def run(
        self, source: str, dataset_paths: Mapping[int, str], timeout_s: float
    ) -> ExecutionOutcome:
        # The runner's children execute in a scratch directory, so relative
        # dataset paths must be pinned to the client's filesystem view here.
        request = json.dumps(
            {
                "source": source,
                "dataset_paths": {
                    str(k): str(Path(v).resolve()) for k, v in dataset_paths.items()
                },
                "timeout_s": timeout_s,
            },
            ensure_ascii=False,
        )
        process = self._ensure_process()
        try:
            assert process.stdin is not None and process.stdout is not None
            process.stdin.write(request + "\n")
            process.stdin.flush()
            line = process.stdout.readline()
        except (BrokenPipeError, OSError) as exc:
            return ExecutionOutcome(status="error", stderr=f"sandbox runner failed: {exc}")
        if not line:
            return ExecutionOutcome(status="error", stderr="sandbox runner terminated")
        try:
            raw = json.loads(line)
            return ExecutionOutcome(
                status=raw["status"],
                stdout=raw.get("stdout", ""),
                stderr=raw.get("stderr", ""),
                duration_ms=int(raw.get("duration_ms", 0)),
            )
        except (ValueError, KeyError) as exc:
            return ExecutionOutcome(
                status="error", stderr=f"malformed sandbox response: {exc}"
            )

    def close(self) -> None:
        if self._process is not None and self._process.poll() is None:
            if self._process.stdin is not None:
                self._process.stdin.close()
            try:
                self._process.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._process.kill()
        self._process = None

    def __enter__(self) -> "WireExecutor":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
