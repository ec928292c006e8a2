"""Text-to-program pipeline for complex questions.

One run walks: reference extraction, specific-value hypothesis, entity
search, planning, code generation, execution, and a bounded debug loop.
Runs that exhaust the retry budget are marked unanswerable; provider
outages abort the run instead, so the two outcomes stay distinguishable.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from . import prompts
from .entity_search import Embedder, EntityMatch, SearchConfig, search_entity
from .errors import (
    MalformedReferenceList,
    MalformedVerdict,
    InvalidDatasetNumber,
    NoCodeBlock,
    ProviderUnavailable,
)
from .llm_gateway import (
    CompletionRequest,
    LlmGateway,
    extract_code_block,
    parse_boolean_verdict,
    parse_bracketed_answer,
    parse_reference_list,
)
from .tabular_store import Dataset, DatasetSpec, normalize_text

logger = logging.getLogger(__name__)

ANSWER_KINDS = ("yes_no", "number", "entity")
QUESTION_CATEGORIES = ("spatial", "function", "personal", "temporal")

DEFAULT_MAX_RETRIES = 3


@dataclass(frozen=True)
class PhraseColumnReference:
    """A question phrase linked to a dataset column."""

    phrase: str
    column: str
    dataset_number: int

    def as_tuple(self) -> tuple[str, str, int]:
        return (self.phrase, self.column, self.dataset_number)


@dataclass(frozen=True)
class QuestionSpec:
    id: str
    question: str
    category: str
    answer_format: str

    def __post_init__(self) -> None:
        if self.category not in QUESTION_CATEGORIES:
            raise ValueError(f"unknown question category {self.category!r}")
        if self.answer_format not in ANSWER_KINDS:
            raise ValueError(f"unknown answer format {self.answer_format!r}")


def load_question_specs(path: str | Path) -> list[QuestionSpec]:
    """Questions file: records with id, question, category and answer_type."""
    with Path(path).open(encoding="utf-8") as fh:
        records = json.load(fh)
    return [
        QuestionSpec(
            id=str(r["id"]),
            question=r["question"],
            category=r["category"],
            answer_format=r["answer_type"],
        )
        for r in records
    ]


@dataclass(frozen=True)
class Plan:
    steps: str

    def __post_init__(self) -> None:
        if not self.steps.strip():
            raise ValueError("plan must be non-empty")


@dataclass(frozen=True)
class GeneratedProgram:
    source: str
    attempt: int = 0


@dataclass(frozen=True)
class ExecutionOutcome:
    """Result of running one generated program."""

    status: str  # ok | error | timeout
    stdout: str = ""
    stderr: str = ""
    duration_ms: int = 0

    @property
    def final_answer(self) -> str | None:
        if self.status != "ok":
            return None
        try:
            return parse_bracketed_answer(self.stdout)
        except Exception:
            return None


class Executor(Protocol):
    """Executor seam: a sandbox backend or a scripted stub."""

    def run(
        self, source: str, dataset_paths: Mapping[int, str], timeout_s: float
    ) -> ExecutionOutcome: ...


@dataclass(frozen=True)
class TypedAnswer:
    """Final answer normalized per its declared format."""

    kind: str
    value: str | float

    def render(self) -> str:
        if self.kind == "number":
            number = float(self.value)
            if number.is_integer():
                return str(int(number))
            return repr(number)
        return str(self.value)


_THOUSANDS_RE = re.compile(r"(?<=\d),(?=\d{3}\b)")


def parse_typed_answer(raw: str, kind: str) -> TypedAnswer | None:
    """Normalize a raw answer string per format; None when it does not fit."""
    text = raw.strip()
    if kind == "yes_no":
        lowered = text.lower()
        if lowered in ("yes", "true"):
            return TypedAnswer("yes_no", "yes")
        if lowered in ("no", "false"):
            return TypedAnswer("yes_no", "no")
        return None
    if kind == "number":
        cleaned = _THOUSANDS_RE.sub("", text).replace(" ", "")
        try:
            return TypedAnswer("number", float(cleaned))
        except ValueError:
            return None
    if kind == "entity":
        return TypedAnswer("entity", text) if text else None
    raise ValueError(f"unknown answer kind {kind!r}")


@dataclass
class RunRecord:
    """One seeded pipeline run; the unit the consistency metrics aggregate."""

    question_id: str
    seed: int
    answer: TypedAnswer | None
    unanswerable: bool
    aborted: bool = False
    abort_reason: str | None = None
    program: GeneratedProgram | None = None
    attempts_used: int = 0
    info_score: int | None = None
    plan: Plan | None = None
    references: tuple[PhraseColumnReference, ...] = ()
    entities: tuple[EntityMatch, ...] = ()

    def __post_init__(self) -> None:
        if self.aborted:
            if self.answer is not None or self.unanswerable:
                raise ValueError("an aborted run carries neither answer nor unanswerable")
        elif (self.answer is None) != self.unanswerable:
            raise ValueError("a completed run has an answer or is unanswerable, never both")
        if self.info_score is not None and self.info_score < 0:
            raise ValueError("info_score must be non-negative")

    @property
    def status(self) -> str:
        if self.aborted:
            return "aborted"
        return "unanswerable" if self.unanswerable else "answered"


# --- agent steps --------------------------------------------------------------


def extract_references(
    question: str,
    specs: Mapping[int, DatasetSpec],
    gateway: LlmGateway,
    seed: int = 0,
) -> list[PhraseColumnReference]:
    """Ask the column extractor which phrases map to which dataset columns.

    Malformed output is re-asked once, then the pipeline proceeds
    reference-free. References naming unknown columns are dropped with a
    warning rather than failing the run.
    """
    request = CompletionRequest(
        system_prompt=prompts.analysis_system_prompt(specs),
        user_prompt=prompts.reference_extraction_prompt(question),
        seed=seed,
        role_tag="column_extractor",
    )
    raw: list[tuple[str, str, int]] | None = None
    for _ in range(2):
        try:
            raw = parse_reference_list(gateway.complete(request))
            break
        except (MalformedReferenceList, InvalidDatasetNumber) as exc:
            last_error = exc
    if raw is None:
        logger.warning("reference extraction failed twice (%s); proceeding without", last_error)
        return []
    references = []
    for phrase, column, number in raw:
        spec = specs.get(number)
        if spec is None or column not in spec.schema.column_names:
            logger.warning(
                "dropping reference (%r, %r, %d): unknown column for that dataset",
                phrase, column, number,
            )
            continue
        references.append(PhraseColumnReference(phrase, column, number))
    return references


def hypothesize_specific_value(
    reference: PhraseColumnReference,
    specs: Mapping[int, DatasetSpec],
    gateway: LlmGateway,
    seed: int = 0,
) -> bool:
    """True when the phrase likely denotes a specific value in its column.

    An unparsable verdict is re-asked once and then falls back to False, the
    safe general-reference reading.
    """
    request = CompletionRequest(
        system_prompt=prompts.analysis_system_prompt(specs),
        user_prompt=prompts.specific_value_prompt(reference.as_tuple()),
        seed=seed,
        role_tag="row_extractor",
    )
    for _ in range(2):
        try:
            return parse_boolean_verdict(gateway.complete(request))
        except MalformedVerdict as exc:
            last_error = exc
    logger.warning("verdict unparsable twice (%s); treating %r as general", last_error, reference.phrase)
    return False


def extract_entities(
    question: str,
    datasets: Mapping[int, Dataset],
    specs: Mapping[int, DatasetSpec],
    gateway: LlmGateway,
    search_config: SearchConfig = SearchConfig(),
    embedder: Embedder | None = None,
    seed: int = 0,
) -> tuple[list[PhraseColumnReference], list[EntityMatch]]:
    """References plus tiered vocabulary matches for the specific ones.

    Only references the row extractor judges to denote specific values go
    through entity search; the rest remain column-level context.
    """
    references = extract_references(question, specs, gateway, seed=seed)
    entities: list[EntityMatch] = []
    for reference in references:
        if not hypothesize_specific_value(reference, specs, gateway, seed=seed):
            continue
        dataset = datasets.get(reference.dataset_number)
        if dataset is None:
            logger.warning("dataset %d not loaded; skipping entity search", reference.dataset_number)
            continue
        entities.append(
            search_entity(
                reference.phrase,
                dataset,
                reference.column,
                config=search_config,
                embedder=embedder,
            )
        )
    return references, entities


def make_plan(
    question: str,
    entities: Sequence[EntityMatch],
    references: Sequence[PhraseColumnReference],
    answer_format: str,
    specs: Mapping[int, DatasetSpec],
    gateway: LlmGateway,
    seed: int = 0,
) -> Plan:
    request = CompletionRequest(
        system_prompt=prompts.analysis_system_prompt(specs),
        user_prompt=prompts.plan_prompt(
            question,
            entities,
            [r.as_tuple() for r in references],
            answer_format,
        ),
        seed=seed,
        role_tag="planner",
    )
    return Plan(steps=gateway.complete(request))


def generate_code(
    question: str,
    plan: Plan,
    answer_format: str,
    specs: Mapping[int, DatasetSpec],
    gateway: LlmGateway,
    seed: int = 0,
) -> GeneratedProgram:
    """First program attempt; a reply without a code block is re-asked once."""
    request = CompletionRequest(
        system_prompt=prompts.python_system_prompt(specs),
        user_prompt=prompts.code_prompt(question, plan.steps, answer_format, sorted(specs)),
        seed=seed,
        role_tag="coder",
    )
    last_error: NoCodeBlock | None = None
    for _ in range(2):
        try:
            return GeneratedProgram(source=extract_code_block(gateway.complete(request)), attempt=0)
        except NoCodeBlock as exc:
            last_error = exc
    raise last_error


def debug_code(
    question: str,
    entities: Sequence[EntityMatch],
    references: Sequence[PhraseColumnReference],
    plan: Plan,
    program: GeneratedProgram,
    error_message: str,
    answer_format: str,
    specs: Mapping[int, DatasetSpec],
    gateway: LlmGateway,
    seed: int = 0,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> GeneratedProgram:
    """One debug round: returns the corrected program with attempt + 1."""
    if program.attempt >= max_retries:
        raise ValueError("debug budget exhausted; caller must not invoke")
    request = CompletionRequest(
        system_prompt=prompts.python_system_prompt(specs),
        user_prompt=prompts.debug_prompt(
            question,
            entities,
            [r.as_tuple() for r in references],
            plan.steps,
            program.source,
            error_message,
            answer_format,
            sorted(specs),
        ),
        seed=seed,
        role_tag="debugger",
    )
    last_error: NoCodeBlock | None = None
    for _ in range(2):
        try:
            return GeneratedProgram(
                source=extract_code_block(gateway.complete(request)),
                attempt=program.attempt + 1,
            )
        except NoCodeBlock as exc:
            last_error = exc
    raise last_error


InfoScorer = Callable[[str, str, int], "object | None"]


def run_pipeline(
    spec: QuestionSpec,
    datasets: Mapping[int, Dataset],
    dataset_specs: Mapping[int, DatasetSpec],
    gateway: LlmGateway,
    executor: Executor,
    seed: int,
    max_retries: int = DEFAULT_MAX_RETRIES,
    search_config: SearchConfig = SearchConfig(),
    embedder: Embedder | None = None,
    dataset_paths: Mapping[int, str] | None = None,
    timeout_s: float = 60.0,
    info_scorer: InfoScorer | None = None,
) -> RunRecord:
    """Full loop over one question with one seed.

    Execution failures consume debug rounds until ``max_retries`` is spent;
    a final answer that fails format parsing gets exactly one debug round.
    ``attempts_used`` is the attempt index of the last program, so a run
    that needed no debugging reports 0 and total executions are always
    ``attempts_used + 1``.
    """
    paths = dict(dataset_paths or {})

    def record(**kwargs) -> RunRecord:
        return RunRecord(question_id=spec.id, seed=seed, **kwargs)

    try:
        references, entities = extract_entities(
            spec.question, datasets, dataset_specs, gateway,
            search_config=search_config, embedder=embedder, seed=seed,
        )
        common = dict(references=tuple(references), entities=tuple(entities))

        plan = make_plan(
            spec.question, entities, references, spec.answer_format,
            dataset_specs, gateway, seed=seed,
        )
        common["plan"] = plan

        try:
            program = generate_code(
                spec.question, plan, spec.answer_format, dataset_specs, gateway, seed=seed
            )
        except NoCodeBlock:
            logger.warning("question %s: coder produced no code block twice", spec.id)
            return record(answer=None, unanswerable=True, attempts_used=0, **common)

        format_round_used = False
        while True:
            outcome = executor.run(program.source, paths, timeout_s)

            if outcome.status == "ok":
                raw = outcome.final_answer
                answer = None if raw is None else parse_typed_answer(raw, spec.answer_format)
                if answer is not None:
                    info_score = None
                    if info_scorer is not None:
                        score = info_scorer(program.source, raw, _primary_dataset(references))
                        info_score = getattr(score, "rows_used", score)
                    return record(
                        answer=answer,
                        unanswerable=False,
                        program=program,
                        attempts_used=program.attempt,
                        info_score=info_score,
                        **common,
                    )
                if format_round_used or program.attempt >= max_retries:
                    return record(
                        answer=None, unanswerable=True,
                        program=program, attempts_used=program.attempt, **common,
                    )
                format_round_used = True
                error_message = (
                    f"The code ran but its final printed answer {raw!r} is not "
                    f"in the expected {spec.answer_format} format, or the "
                    'final print is missing the "[[final_answer]]" marker.'
                )
            else:
                if program.attempt >= max_retries:
                    return record(
                        answer=None, unanswerable=True,
                        program=program, attempts_used=program.attempt, **common,
                    )
                error_message = outcome.stderr or f"execution {outcome.status}"

            try:
                program = debug_code(
                    spec.question, entities, references, plan, program,
                    error_message, spec.answer_format, dataset_specs, gateway,
                    seed=seed, max_retries=max_retries,
                )
            except NoCodeBlock:
                logger.warning("question %s: debugger produced no code block twice", spec.id)
                return record(
                    answer=None, unanswerable=True,
                    program=program, attempts_used=program.attempt, **common,
                )
    except ProviderUnavailable as exc:
        logger.warning("question %s seed %d aborted: %s", spec.id, seed, exc)
        return record(answer=None, unanswerable=False, aborted=True, abort_reason=str(exc))


def _primary_dataset(references: Sequence[PhraseColumnReference]) -> int:
    """Dataset the coverage ratio is computed against: the first referenced one."""
    return references[0].dataset_number if references else 1


def answers_equal(a: RunRecord, b: RunRecord, rel_tol: float = 1e-6) -> bool:
    """Normalized cross-seed answer equality.

    Unanswerable and aborted runs compare unequal to everything, including
    each other; numeric answers compare under relative tolerance.
    """
    if a.status != "answered" or b.status != "answered":
        return False
    assert a.answer is not None and b.answer is not None
    if a.answer.kind != b.answer.kind:
        return False
    if a.answer.kind == "number":
        x, y = float(a.answer.value), float(b.answer.value)
        if x == y:
            return True
        denominator = max(abs(x), abs(y))
        return abs(x - y) <= rel_tol * denominator
    if a.answer.kind == "entity":
        return normalize_text(str(a.answer.value)) == normalize_text(str(b.answer.value))
    return a.answer.value == b.answer.value
