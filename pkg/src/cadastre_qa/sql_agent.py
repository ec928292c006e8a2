"""Browsing pipeline: prompt a text-to-SQL backend, sample k candidate
queries, elect a winner by execution-result majority, and run it against an
embedded read-only SQLite store."""

from __future__ import annotations

import json
import sqlite3
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import BadShotCountError, SqlError
from .llm_gateway import CompletionRequest, LlmGateway, extract_code_block
from .tabular_store import Dataset, TableSchema, normalize_text
from .errors import NoCodeBlock

SQL_SYSTEM_PROMPT = (
    "You translate natural-language questions about a single database table "
    "into one SQL query. Output only the SQL query."
)

_SQL_TYPE_NAMES = {
    "integer": "integer",
    "real": "real",
    "text": "text",
    "latitude": "real",
    "longitude": "real",
}

_SQLITE_TYPES = {
    "integer": "INTEGER",
    "real": "REAL",
    "text": "TEXT",
    "latitude": "REAL",
    "longitude": "REAL",
}


@dataclass(frozen=True)
class SqlPrompt:
    """Rendered text-to-SQL prompt; block layout is part of the contract."""

    schema_block: str
    column_info_block: str
    primary_key_line: str
    shots: tuple[tuple[str, str], ...]
    question: str

    def render(self) -> str:
        def block(question: str, sql: str | None) -> str:
            lines = [
                "database schema:",
                self.schema_block,
                "column info:",
                self.column_info_block,
                self.primary_key_line,
                "question:",
                question,
            ]
            if sql is not None:
                lines += ["SQL query:", sql]
            return "\n".join(lines)

        parts = [block(q, sql) for q, sql in self.shots]
        parts.append(block(self.question, None))
        return "\n\n".join(parts)


def _schema_block(schema: TableSchema) -> str:
    cols = " , ".join(
        f"{schema.table_name}.{c.name} ( {_SQL_TYPE_NAMES[c.value_kind]} )"
        for c in schema.columns
    )
    return f"table {schema.table_name} , columns = [ {cols} ]"


def _column_info_block(schema: TableSchema) -> str:
    return " ; ".join(f"{c.name} -- {c.description}" for c in schema.columns)


def build_prompt(
    schema: TableSchema, question: str, shots: Sequence[tuple[str, str]] = ()
) -> SqlPrompt:
    """Render the table metadata and question into the prompt layout.

    Shots are full (question, sql) exemplars; the backend sees the schema
    repeated before every exemplar. Only zero-shot and three-shot layouts
    are supported.
    """
    if len(shots) not in (0, 3):
        raise BadShotCountError(f"shot list must have 0 or 3 entries, got {len(shots)}")
    return SqlPrompt(
        schema_block=_schema_block(schema),
        column_info_block=_column_info_block(schema),
        primary_key_line=f"primary key : {schema.table_name}.{schema.primary_key}",
        shots=tuple((q, s) for q, s in shots),
        question=question,
    )


class SqliteStore:
    """One dataset loaded into an in-memory SQLite table, opened read-only.

    Intended use is one store per run; it executes many candidate queries
    without reloading the rows.
    """

    def __init__(self, dataset: Dataset) -> None:
        self.dataset = dataset
        schema = dataset.schema
        self._conn = sqlite3.connect(":memory:")
        columns = ", ".join(
            f'"{c.name}" {_SQLITE_TYPES[c.value_kind]}' for c in schema.columns
        )
        self._conn.execute(f'CREATE TABLE "{schema.table_name}" ({columns})')
        placeholders = ", ".join("?" for _ in schema.columns)
        self._conn.executemany(
            f'INSERT INTO "{schema.table_name}" VALUES ({placeholders})',
            [tuple(row[c] for c in schema.column_names) for row in dataset.rows],
        )
        self._conn.commit()
        # Loading is done; from here on the store only answers queries.
        self._conn.execute("PRAGMA query_only = ON")

    def execute(self, sql: str) -> "ResultTable":
        try:
            cursor = self._conn.execute(sql)
            rows = cursor.fetchall()
        except sqlite3.Error as exc:
            raise SqlError(str(exc)) from exc
        columns = tuple(d[0] for d in cursor.description) if cursor.description else ()
        return ResultTable(columns=columns, rows=tuple(rows))

    def close(self) -> None:
        self._conn.close()

    def __enter__(self) -> "SqliteStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass(frozen=True)
class ResultTable:
    """Rectangular execution result; cells are null, number or text."""

    columns: tuple[str, ...]
    rows: tuple[tuple, ...]


def execute_sql(sql: str, dataset: Dataset) -> ResultTable:
    """Load the dataset into a fresh read-only store and run one query."""
    with SqliteStore(dataset) as store:
        return store.execute(sql)


def _canonical_cell(value) -> tuple[str, str]:
    if value is None:
        return ("null", "")
    if isinstance(value, bool):
        return ("num", format(float(value), ".9g"))
    if isinstance(value, (int, float)):
        number = float(value)
        if number == 0:
            number = 0.0
        return ("num", format(number, ".9g"))
    return ("text", normalize_text(str(value)))


def canonicalize_result(table: ResultTable) -> tuple[tuple[tuple[str, str], ...], ...]:
    """Order-independent comparable form of an execution result.

    Rows are sorted, text is normalized, and numbers are rounded to nine
    significant digits so values within about 1e-9 relative error compare
    equal. Column names are dropped: two queries agree when their result
    rows agree.
    """
    canonical_rows = [tuple(_canonical_cell(v) for v in row) for row in table.rows]
    return tuple(sorted(canonical_rows))


def result_text(table: ResultTable) -> str:
    """Canonical result flattened to text, for lexical-overlap scoring."""
    cells = []
    for row in canonicalize_result(table):
        for kind, value in row:
            if kind != "null":
                cells.append(value)
    return " ".join(cells)


@dataclass(frozen=True)
class VoteGroup:
    """Candidates whose canonical execution results agree."""

    indices: tuple[int, ...]
    is_error: bool

    @property
    def size(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class VoteTally:
    groups: tuple[VoteGroup, ...]
    winner_index: int


def majority_vote(candidates: Sequence[str], dataset: Dataset) -> tuple[str, VoteTally]:
    """Elect the candidate whose execution-result class is largest.

    All erroring candidates form one class. The winner is the first-generated
    member of the largest class; a size tie goes to the class that appeared
    first. An all-error slate elects an erroring candidate and the error
    surfaces when the winner is executed downstream.
    """
    if not candidates:
        raise ValueError("majority_vote needs at least one candidate")
    groups: dict[object, list[int]] = {}
    order: list[object] = []
    with SqliteStore(dataset) as store:
        for index, sql in enumerate(candidates):
            try:
                key: object = ("ok", canonicalize_result(store.execute(sql)))
            except SqlError:
                key = ("error",)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(index)
    best = max(order, key=lambda k: (len(groups[k]), -groups[k][0]))
    winner = groups[best][0]
    tally = VoteTally(
        groups=tuple(
            VoteGroup(indices=tuple(groups[k]), is_error=(k == ("error",))) for k in order
        ),
        winner_index=winner,
    )
    return candidates[winner], tally


def extract_sql(completion: str) -> str:
    """SQL text of a completion; tolerates a fenced code block around it."""
    try:
        return extract_code_block(completion).strip()
    except NoCodeBlock:
        return completion.strip()


@dataclass(frozen=True)
class BrowsingQuestion:
    """One questions-file record; the annotated SQL is optional."""

    id: str
    question: str
    gt_sql: str | None = None


def load_browsing_questions(path: str | Path) -> list[BrowsingQuestion]:
    with Path(path).open(encoding="utf-8") as fh:
        records = json.load(fh)
    return [
        BrowsingQuestion(
            id=str(r["id"]), question=r["question"], gt_sql=r.get("gt_sql")
        )
        for r in records
    ]


def load_shots(path: str | Path) -> list[tuple[str, str]]:
    """In-context (question, sql) exemplars from a config file."""
    with Path(path).open(encoding="utf-8") as fh:
        records = json.load(fh)
    return [(r["question"], r["sql"]) for r in records]


@dataclass(frozen=True)
class BrowseOutcome:
    result: ResultTable
    chosen_sql: str
    candidates: tuple[str, ...]
    tally: VoteTally


def answer_browsing(
    question: str,
    dataset: Dataset,
    gateway: LlmGateway,
    shots: Sequence[tuple[str, str]] = (),
    k: int = 4,
    seed: int = 0,
) -> BrowseOutcome:
    """Sample k candidate queries on derived seeds, vote, execute the winner."""
    if k < 1:
        raise ValueError("k must be at least 1")
    prompt = build_prompt(dataset.schema, question, shots).render()
    candidates = []
    for i in range(k):
        completion = gateway.complete(
            CompletionRequest(
                system_prompt=SQL_SYSTEM_PROMPT,
                user_prompt=prompt,
                seed=seed + i,
                role_tag="sql_generator",
            )
        )
        candidates.append(extract_sql(completion))
    chosen, tally = majority_vote(candidates, dataset)
    result = execute_sql(chosen, dataset)
    return BrowseOutcome(
        result=result, chosen_sql=chosen, candidates=tuple(candidates), tally=tally
    )
