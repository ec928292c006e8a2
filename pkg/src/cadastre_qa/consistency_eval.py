"""Reliability and accuracy measurement.

Covers multi-seed execution, the execution-consistency levels, the
answer-plus-information-score consistency classes, judge-based information
score extraction, exact-match and unigram-overlap scoring, and grouped
reporting. Classification works on normalized answers; raw string equality
would make floating-point outputs never agree across seeds.
"""

from __future__ import annotations

import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Mapping, Sequence

from . import prompts
from .errors import (
    EmptyGroundTruth,
    KindMismatch,
    SeedCountError,
)
from .llm_gateway import CompletionRequest, LlmGateway, parse_bracketed_answer
from .sql_agent import BrowseOutcome, ResultTable, canonicalize_result, result_text
from .errors import MissingAnswerMarker, SqlError
from .python_agent import RunRecord, TypedAnswer, answers_equal
from .tabular_store import normalize_text

if TYPE_CHECKING:
    from .python_agent import QuestionSpec

logger = logging.getLogger(__name__)

EC_LEVELS = ("ec3", "ec2", "none")
CONSISTENCY_CLASSES = ("c33", "c32", "c22", "none")


@dataclass(frozen=True)
class InfoScore:
    """Rows the generated program used, as reported by the judge.

    The coverage ratio is computed against one primary dataset, so a joined
    result can legitimately exceed 1; consumers should treat it as a signal,
    not a bound.
    """

    rows_used: int
    dataset_size: int

    def __post_init__(self) -> None:
        if self.rows_used < 0:
            raise ValueError("rows_used must be non-negative")
        if self.dataset_size < 1:
            raise ValueError("dataset_size must be positive")

    @property
    def coverage_ratio(self) -> float:
        return self.rows_used / self.dataset_size


def extract_information_score(
    source: str,
    answer: str,
    dataset_sizes: Mapping[int, int],
    gateway: LlmGateway,
    primary_dataset: int = 1,
    seed: int = 0,
) -> InfoScore | None:
    """Ask the judge how many rows the program used for its final answer.

    A non-integer verdict is re-asked once; a second failure yields None and
    the run record simply carries no information score.
    """
    request = CompletionRequest(
        system_prompt="You are a meticulous code reviewer for data-analysis programs.",
        user_prompt=prompts.judge_prompt(source, answer),
        seed=seed,
        role_tag="judge",
    )
    for _ in range(2):
        try:
            span = parse_bracketed_answer(gateway.complete(request))
            rows_used = int(span.replace(",", ""))
            if rows_used < 0:
                raise ValueError(span)
        except (MissingAnswerMarker, ValueError) as exc:
            last_error: Exception = exc
            continue
        size = dataset_sizes.get(primary_dataset)
        if size is None or size < 1:
            logger.warning("no size for primary dataset %d; dropping info score", primary_dataset)
            return None
        return InfoScore(rows_used=rows_used, dataset_size=size)
    logger.warning("judge verdict unusable twice (%s); info score absent", last_error)
    return None


# --- multi-seed execution ------------------------------------------------------


def run_multi_seed(
    spec: "QuestionSpec",
    seeds: Sequence[int],
    pipeline: Callable[[int], RunRecord],
) -> list[RunRecord]:
    """Three independent runs; aborted runs are recorded, never dropped."""
    if len(seeds) != 3 or len(set(seeds)) != 3:
        raise SeedCountError(f"need exactly 3 distinct seeds, got {list(seeds)}")
    return [pipeline(seed) for seed in seeds]


def _score_pairs_equal(a: RunRecord, b: RunRecord) -> bool:
    # Absent scores compare unequal, including to each other.
    return a.info_score is not None and a.info_score == b.info_score


def classify_execution_consistency(records: Sequence[RunRecord]) -> str:
    """ec3 when all three answers agree, ec2 when at least one pair does."""
    if len(records) != 3:
        raise SeedCountError(f"need exactly 3 records, got {len(records)}")
    pairs = [(0, 1), (0, 2), (1, 2)]
    equal = [answers_equal(records[i], records[j]) for i, j in pairs]
    if all(equal):
        return "ec3"
    if any(equal):
        return "ec2"
    return "none"


def classify_consistency(records: Sequence[RunRecord]) -> str:
    """Strongest class whose predicate holds.

    c33: all answers agree and all info scores agree.
    c32: all answers agree and at least two info scores agree.
    c22: some pair agrees on both answer and info score.
    """
    if len(records) != 3:
        raise SeedCountError(f"need exactly 3 records, got {len(records)}")
    pairs = [(0, 1), (0, 2), (1, 2)]
    answers_eq = {(i, j): answers_equal(records[i], records[j]) for i, j in pairs}
    scores_eq = {(i, j): _score_pairs_equal(records[i], records[j]) for i, j in pairs}

    all_answers = all(answers_eq.values())
    if all_answers and all(scores_eq.values()):
        return "c33"
    if all_answers and any(scores_eq.values()):
        return "c32"
    if any(answers_eq[p] and scores_eq[p] for p in pairs):
        return "c22"
    return "none"


# --- accuracy metrics ----------------------------------------------------------


def _canonical_scalar(value) -> tuple[str, str]:
    if isinstance(value, TypedAnswer):
        if value.kind == "number":
            return ("num", format(float(value.value), ".9g"))
        return ("text", normalize_text(str(value.value)))
    if isinstance(value, bool):
        return ("text", "yes" if value else "no")
    if isinstance(value, (int, float)):
        return ("num", format(float(value), ".9g"))
    if isinstance(value, str):
        return ("text", normalize_text(value))
    raise KindMismatch(f"cannot compare value of type {type(value).__name__}")


def exact_match(pred, gt) -> bool:
    """Equality of canonical forms: tables against tables, scalars against scalars."""
    pred_is_table = isinstance(pred, ResultTable)
    gt_is_table = isinstance(gt, ResultTable)
    if pred_is_table != gt_is_table:
        raise KindMismatch("cannot compare a result table with a scalar answer")
    if pred_is_table:
        return canonicalize_result(pred) == canonicalize_result(gt)
    return _canonical_scalar(pred) == _canonical_scalar(gt)


_TOKEN_SPLIT_RE = re.compile(r"[^a-z0-9]+")


def _tokens(text: str) -> list[str]:
    return [t for t in _TOKEN_SPLIT_RE.split(normalize_text(text)) if t]


def unigram_overlap(pred: str, gt: str) -> float:
    """Recall of ground-truth tokens in the prediction.

    Extra predicted context is not penalized and token order never matters;
    both texts are normalized before tokenizing.
    """
    gt_tokens = Counter(_tokens(gt))
    if not gt_tokens:
        raise EmptyGroundTruth("ground truth has no tokens after normalization")
    pred_tokens = Counter(_tokens(pred))
    shared = sum((gt_tokens & pred_tokens).values())
    return shared / sum(gt_tokens.values())


@dataclass(frozen=True)
class EvalResult:
    exact_match: bool
    unigram_overlap: float

    def __post_init__(self) -> None:
        if self.exact_match and self.unigram_overlap != 1.0:
            raise ValueError("an exact match must have overlap 1.0")
        if not 0.0 <= self.unigram_overlap <= 1.0:
            raise ValueError("overlap must be within [0, 1]")


@dataclass(frozen=True)
class BrowsingQuestionResult:
    question_id: str
    scores: EvalResult
    sql_error: bool
    chosen_sql: str | None


@dataclass(frozen=True)
class BrowsingSuiteReport:
    shots: int
    results: tuple[BrowsingQuestionResult, ...]

    @property
    def exact_match_rate(self) -> float:
        return sum(r.scores.exact_match for r in self.results) / len(self.results)

    @property
    def mean_overlap(self) -> float:
        return sum(r.scores.unigram_overlap for r in self.results) / len(self.results)

    @property
    def sql_error_count(self) -> int:
        return sum(r.sql_error for r in self.results)

    def to_dict(self) -> dict:
        return {
            "shots": self.shots,
            "exact_match_rate": self.exact_match_rate,
            "mean_overlap": self.mean_overlap,
            "sql_error_count": self.sql_error_count,
            "questions": [
                {
                    "id": r.question_id,
                    "exact_match": r.scores.exact_match,
                    "unigram_overlap": r.scores.unigram_overlap,
                    "sql_error": r.sql_error,
                    "chosen_sql": r.chosen_sql,
                }
                for r in self.results
            ],
        }


def evaluate_browsing_suite(
    questions: Sequence,
    dataset,
    agent: Callable[[str], BrowseOutcome],
    shots: int = 0,
) -> BrowsingSuiteReport:
    """Score an agent against annotated ground-truth SQL, question by question.

    Ground truth is the execution result of the annotated query. An agent
    whose winning candidate errors scores a miss and counts toward the SQL
    error tally instead of crashing the suite.
    """
    from .sql_agent import execute_sql  # local to keep module import light

    results = []
    for question in sorted(questions, key=lambda q: q.id):
        if not question.gt_sql:
            raise ValueError(f"question {question.id} has no annotated SQL")
        gt_table = execute_sql(question.gt_sql, dataset)
        gt_text = result_text(gt_table)
        try:
            outcome = agent(question.question)
            matched = exact_match(outcome.result, gt_table)
            overlap = (
                1.0 if matched else unigram_overlap(result_text(outcome.result), gt_text)
            )
            results.append(
                BrowsingQuestionResult(
                    question_id=question.id,
                    scores=EvalResult(exact_match=matched, unigram_overlap=overlap),
                    sql_error=False,
                    chosen_sql=outcome.chosen_sql,
                )
            )
        except SqlError:
            results.append(
                BrowsingQuestionResult(
                    question_id=question.id,
                    scores=EvalResult(exact_match=False, unigram_overlap=0.0),
                    sql_error=True,
                    chosen_sql=None,
                )
            )
    return BrowsingSuiteReport(shots=shots, results=tuple(results))


# --- grouped consistency reporting ----------------------------------------------


@dataclass(frozen=True)
class QuestionConsistency:
    question_id: str
    category: str
    answer_format: str
    answers: tuple[str | None, ...]
    info_scores: tuple[int | None, ...]
    ec_level: str
    consistency_class: str

    def to_dict(self) -> dict:
        return {
            "id": self.question_id,
            "category": self.category,
            "answer_type": self.answer_format,
            "answers": list(self.answers),
            "info_scores": list(self.info_scores),
            "ec_level": self.ec_level,
            "consistency_class": self.consistency_class,
        }


def summarize_question(spec: "QuestionSpec", records: Sequence[RunRecord]) -> QuestionConsistency:
    return QuestionConsistency(
        question_id=spec.id,
        category=spec.category,
        answer_format=spec.answer_format,
        answers=tuple(
            r.answer.render() if r.status == "answered" and r.answer else r.status
            for r in records
        ),
        info_scores=tuple(r.info_score for r in records),
        ec_level=classify_execution_consistency(records),
        consistency_class=classify_consistency(records),
    )


@dataclass(frozen=True)
class GroupRates:
    group: str
    question_count: int
    ec2_rate: float
    ec3_rate: float
    class_counts: tuple[tuple[str, int], ...]

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "questions": self.question_count,
            "ec2_rate": self.ec2_rate,
            "ec3_rate": self.ec3_rate,
            "class_counts": dict(self.class_counts),
        }


def _group_rates(name: str, members: Sequence[QuestionConsistency]) -> GroupRates:
    total = len(members)
    ec3 = sum(m.ec_level == "ec3" for m in members)
    ec2 = sum(m.ec_level in ("ec3", "ec2") for m in members)
    counts = Counter(m.consistency_class for m in members)
    return GroupRates(
        group=name,
        question_count=total,
        ec2_rate=ec2 / total,
        ec3_rate=ec3 / total,
        class_counts=tuple(sorted(counts.items())),
    )


@dataclass(frozen=True)
class ConsistencyReport:
    questions: tuple[QuestionConsistency, ...]
    by_category: tuple[GroupRates, ...]
    by_answer_type: tuple[GroupRates, ...]

    def to_dict(self) -> dict:
        return {
            "questions": [q.to_dict() for q in self.questions],
            "by_category": [g.to_dict() for g in self.by_category],
            "by_answer_type": [g.to_dict() for g in self.by_answer_type],
        }

    def render_table(self) -> str:
        lines = [
            f"{'question':<12} {'category':<10} {'type':<8} {'ec':<5} {'class':<6} answers",
            "-" * 72,
        ]
        for q in self.questions:
            answers = ", ".join(a if a is not None else "-" for a in q.answers)
            lines.append(
                f"{q.question_id:<12} {q.category:<10} {q.answer_format:<8} "
                f"{q.ec_level:<5} {q.consistency_class:<6} {answers}"
            )
        lines.append("")
        for title, groups in (("category", self.by_category), ("answer type", self.by_answer_type)):
            lines.append(f"by {title}:")
            for g in groups:
                classes = ", ".join(f"{k}={v}" for k, v in g.class_counts)
                lines.append(
                    f"  {g.group:<10} n={g.question_count} "
                    f"ec2={g.ec2_rate:.2f} ec3={g.ec3_rate:.2f} [{classes}]"
                )
        return "\n".join(lines)


def grouped_consistency_report(
    summaries: Sequence[QuestionConsistency],
) -> ConsistencyReport:
    """Per-group EC rates and class distributions over question summaries.

    Groups with no questions are left out of the report with a warning
    rather than reported as zero-rate rows.
    """
    from .python_agent import ANSWER_KINDS, QUESTION_CATEGORIES

    by_category: dict[str, list[QuestionConsistency]] = {}
    by_answer_type: dict[str, list[QuestionConsistency]] = {}
    for summary in summaries:
        by_category.setdefault(summary.category, []).append(summary)
        by_answer_type.setdefault(summary.answer_format, []).append(summary)
    for known, present, label in (
        (QUESTION_CATEGORIES, by_category, "category"),
        (ANSWER_KINDS, by_answer_type, "answer type"),
    ):
        missing = [name for name in known if name not in present]
        if missing:
            logger.warning(
                "no questions in %s group(s) %s; excluded from report",
                label, ", ".join(missing),
            )
    return ConsistencyReport(
        questions=tuple(sorted(summaries, key=lambda s: s.question_id)),
        by_category=tuple(
            _group_rates(name, members) for name, members in sorted(by_category.items())
        ),
        by_answer_type=tuple(
            _group_rates(name, members) for name, members in sorted(by_answer_type.items())
        ),
    )
