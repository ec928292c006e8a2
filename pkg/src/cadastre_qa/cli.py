"""Operator entry point.

Wires config, datasets, providers and pipelines into one-shot commands and
emits every report both as a human-readable table on stdout and, with
``--out``, as a deterministic JSON document.

Exit codes: 0 success, 1 run failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import AppConfig, bundled_data_path, load_app_config
from .consistency_eval import (
    ConsistencyReport,
    extract_information_score,
    evaluate_browsing_suite,
    grouped_consistency_report,
    run_multi_seed,
    summarize_question,
)
from .entity_search import SearchConfig
from .errors import CadastreError, ConfigError, ProviderUnavailable, SqlError
from .python_agent import (
    QuestionSpec,
    RunRecord,
    extract_entities,
    load_question_specs,
    run_pipeline,
)
from .sql_agent import answer_browsing, canonicalize_result, load_browsing_questions

logger = logging.getLogger(__name__)


def _write_json(path: str | Path, payload: dict) -> None:
    text = json.dumps(payload, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def _record_dict(record: RunRecord) -> dict:
    return {
        "question_id": record.question_id,
        "seed": record.seed,
        "status": record.status,
        "answer": None if record.answer is None else record.answer.render(),
        "attempts_used": record.attempts_used,
        "info_score": record.info_score,
        "abort_reason": record.abort_reason,
        "references": [list(r.as_tuple()) for r in record.references],
        "entities": [
            {
                "phrase": e.phrase,
                "dataset": e.dataset_number,
                "column": e.column,
                "tier": e.tier,
                "matches": [[v, s] for v, s in e.matches],
            }
            for e in record.entities
        ],
        "plan": None if record.plan is None else record.plan.steps,
        "program": None if record.program is None else record.program.source,
    }


def _print_record(record: RunRecord) -> None:
    print(f"status: {record.status}")
    if record.answer is not None:
        print(f"answer: {record.answer.render()}")
    if record.abort_reason:
        print(f"abort reason: {record.abort_reason}")
    print(f"attempts used: {record.attempts_used}")
    if record.info_score is not None:
        print(f"info score (rows used): {record.info_score}")
    if record.references:
        print("references:")
        for ref in record.references:
            print(f"  ({ref.phrase!r}, {ref.column!r}, {ref.dataset_number})")
    if record.entities:
        print("entity matches:")
        for match in record.entities:
            pairs = ", ".join(f"{v} ({s:.2f})" for v, s in match.matches) or "none"
            print(
                f"  {match.phrase!r} -> dataset {match.dataset_number} "
                f"column {match.column!r} [{match.tier}]: {pairs}"
            )
    if record.plan is not None:
        print("plan:")
        print(record.plan.steps.strip())
    if record.program is not None:
        print("program:")
        print(record.program.source)


def _apply_overrides(config: AppConfig, args: argparse.Namespace) -> AppConfig:
    if getattr(args, "schema", None):
        config.schema_path = Path(args.schema)
    if getattr(args, "model", None):
        config.provider.model = args.model
    if getattr(args, "seeds", None):
        config.seeds = [int(s) for s in args.seeds.split(",")]
    if getattr(args, "retries", None) is not None:
        config.max_retries = args.retries
    if getattr(args, "shots", None) is not None:
        config.shots = args.shots
    if getattr(args, "k", None) is not None:
        config.k = args.k
    if getattr(args, "timeout", None) is not None:
        config.executor.timeout_s = args.timeout
    search = {
        "fuzzy_threshold": config.search.fuzzy_threshold,
        "semantic_threshold": config.search.semantic_threshold,
        "semantic_top_k": config.search.semantic_top_k,
    }
    if getattr(args, "fuzzy_threshold", None) is not None:
        search["fuzzy_threshold"] = args.fuzzy_threshold
    if getattr(args, "semantic_threshold", None) is not None:
        search["semantic_threshold"] = args.semantic_threshold
    if getattr(args, "top_k", None) is not None:
        search["semantic_top_k"] = args.top_k
    config.search = SearchConfig(**search)
    if getattr(args, "mock_transcript", None):
        config.provider.kind = "replay"
        config.provider.transcript = Path(args.mock_transcript)
    return config


def _load_config(args: argparse.Namespace) -> AppConfig:
    if not args.config:
        raise ConfigError("--config is required")
    config = load_app_config(args.config, dataset_dir=getattr(args, "dataset_dir", None))
    config = _apply_overrides(config, args)
    config.validate()
    return config


def _make_scorer(config: AppConfig, gateway, sizes: dict[int, int], seed: int):
    if not config.info_score:
        return None

    def scorer(source: str, answer: str, primary_dataset: int):
        return extract_information_score(
            source, answer, sizes, gateway, primary_dataset=primary_dataset, seed=seed
        )

    return scorer


def _save_transcript(config: AppConfig, gateway) -> None:
    if config.transcript_out is not None:
        gateway.transcript.save(config.transcript_out)


# --- commands ------------------------------------------------------------------


def cmd_ask(args: argparse.Namespace) -> int:
    config = _load_config(args)
    spec = QuestionSpec(
        id=args.id, question=args.question, category=args.category,
        answer_format=args.answer_type,
    )
    specs = config.load_schemas()
    datasets = config.load_datasets()
    gateway = config.build_gateway()
    executor = config.build_executor()
    embedder = config.build_embedder()
    sizes = {n: d.row_count for n, d in datasets.items()}
    seed = args.seed if args.seed is not None else config.seeds[0]
    record = run_pipeline(
        spec,
        datasets,
        specs,
        gateway,
        executor,
        seed=seed,
        max_retries=config.max_retries,
        search_config=config.search,
        embedder=embedder,
        dataset_paths={n: str(p) for n, p in config.dataset_paths.items()},
        timeout_s=config.executor.timeout_s,
        info_scorer=_make_scorer(config, gateway, sizes, seed),
    )
    _save_transcript(config, gateway)
    _print_record(record)
    if args.out:
        _write_json(args.out, _record_dict(record))
    return 1 if record.aborted else 0


def cmd_browse(args: argparse.Namespace) -> int:
    config = _load_config(args)
    datasets = config.load_datasets()
    if 1 not in datasets:
        raise ConfigError("browse needs dataset 1 configured")
    gateway = config.build_gateway()
    seed = args.seed if args.seed is not None else config.seeds[0]
    outcome = answer_browsing(
        args.question,
        datasets[1],
        gateway,
        shots=config.load_shots(),
        k=config.k,
        seed=seed,
    )
    _save_transcript(config, gateway)
    print(f"chosen SQL: {outcome.chosen_sql}")
    print(f"columns: {list(outcome.result.columns)}")
    for row in canonicalize_result(outcome.result):
        print("  " + " | ".join(value for _, value in row))
    print("tally:")
    for group in outcome.tally.groups:
        label = "error" if group.is_error else "ok"
        print(f"  candidates {list(group.indices)} [{label}] size={group.size}")
    if args.out:
        _write_json(
            args.out,
            {
                "question": args.question,
                "chosen_sql": outcome.chosen_sql,
                "candidates": list(outcome.candidates),
                "columns": list(outcome.result.columns),
                "rows": [list(r) for r in outcome.result.rows],
                "tally": {
                    "winner_index": outcome.tally.winner_index,
                    "groups": [
                        {"indices": list(g.indices), "is_error": g.is_error}
                        for g in outcome.tally.groups
                    ],
                },
            },
        )
    return 0


def cmd_eval_browse(args: argparse.Namespace) -> int:
    config = _load_config(args)
    datasets = config.load_datasets()
    if 1 not in datasets:
        raise ConfigError("eval-browse needs dataset 1 configured")
    dataset = datasets[1]
    questions = load_browsing_questions(args.questions or bundled_data_path("browsing_questions.json"))
    gateway = config.build_gateway()
    shots = config.load_shots()
    seed = args.seed if args.seed is not None else config.seeds[0]

    def agent(question: str):
        return answer_browsing(question, dataset, gateway, shots=shots, k=config.k, seed=seed)

    report = evaluate_browsing_suite(questions, dataset, agent, shots=config.shots)
    _save_transcript(config, gateway)
    print(
        f"shots={report.shots} exact_match={report.exact_match_rate:.2f} "
        f"overlap={report.mean_overlap:.2f} sql_errors={report.sql_error_count}"
    )
    for result in report.results:
        print(
            f"  {result.question_id}: em={int(result.scores.exact_match)} "
            f"overlap={result.scores.unigram_overlap:.2f} sql_error={int(result.sql_error)}"
        )
    if args.out:
        _write_json(args.out, report.to_dict())
    return 0


def cmd_consistency(args: argparse.Namespace) -> int:
    config = _load_config(args)
    questions = load_question_specs(args.questions or bundled_data_path("pipeline_questions.json"))
    report, gateway = _run_consistency(config, questions)
    _save_transcript(config, gateway)
    print(report.render_table())
    if args.out:
        _write_json(args.out, report.to_dict())
    return 0


def _run_consistency(config: AppConfig, questions) -> tuple[ConsistencyReport, object]:
    """Shared core of the consistency command; also used by tests to record."""
    specs = config.load_schemas()
    datasets = config.load_datasets()
    gateway = config.build_gateway()
    executor = config.build_executor()
    embedder = config.build_embedder()
    sizes = {n: d.row_count for n, d in datasets.items()}
    paths = {n: str(p) for n, p in config.dataset_paths.items()}
    summaries = []
    for spec in sorted(questions, key=lambda q: q.id):

        def one_run(seed: int) -> RunRecord:
            return run_pipeline(
                spec,
                datasets,
                specs,
                gateway,
                executor,
                seed=seed,
                max_retries=config.max_retries,
                search_config=config.search,
                embedder=embedder,
                dataset_paths=paths,
                timeout_s=config.executor.timeout_s,
                info_scorer=_make_scorer(config, gateway, sizes, seed),
            )

        records = run_multi_seed(spec, config.seeds, one_run)
        summaries.append(summarize_question(spec, records))
    return grouped_consistency_report(summaries), gateway


def cmd_extract_entities(args: argparse.Namespace) -> int:
    config = _load_config(args)
    specs = config.load_schemas()
    datasets = config.load_datasets()
    gateway = config.build_gateway()
    embedder = config.build_embedder()
    seed = args.seed if args.seed is not None else config.seeds[0]
    references, entities = extract_entities(
        args.question,
        datasets,
        specs,
        gateway,
        search_config=config.search,
        embedder=embedder,
        seed=seed,
    )
    _save_transcript(config, gateway)
    print("references:")
    for ref in references:
        print(f"  ({ref.phrase!r}, {ref.column!r}, {ref.dataset_number})")
    if not references:
        print("  (none)")
    print("entity matches:")
    for match in entities:
        pairs = ", ".join(f"{v} ({s:.2f})" for v, s in match.matches) or "none"
        print(
            f"  {match.phrase!r} -> dataset {match.dataset_number} "
            f"column {match.column!r} [{match.tier}]: {pairs}"
        )
    if not entities:
        print("  (none)")
    if args.out:
        _write_json(
            args.out,
            {
                "question": args.question,
                "references": [list(r.as_tuple()) for r in references],
                "entities": [
                    {
                        "phrase": e.phrase,
                        "dataset": e.dataset_number,
                        "column": e.column,
                        "tier": e.tier,
                        "matches": [[v, s] for v, s in e.matches],
                    }
                    for e in entities
                ],
            },
        )
    return 0


def cmd_plot(args: argparse.Namespace) -> int:
    with Path(args.report).open(encoding="utf-8") as fh:
        report = json.load(fh)
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError as exc:
        raise ConfigError(f"plotting needs matplotlib installed: {exc}") from exc

    figure, axes = plt.subplots(1, 2, figsize=(11, 4))
    for axis, key, title in (
        (axes[0], "by_category", "by category"),
        (axes[1], "by_answer_type", "by answer type"),
    ):
        groups = report.get(key, [])
        names = [g["group"] for g in groups]
        ec2 = [g["ec2_rate"] for g in groups]
        ec3 = [g["ec3_rate"] for g in groups]
        positions = range(len(names))
        axis.bar([p - 0.2 for p in positions], ec2, width=0.4, label="EC-2")
        axis.bar([p + 0.2 for p in positions], ec3, width=0.4, label="EC-3")
        axis.set_xticks(list(positions))
        axis.set_xticklabels(names, rotation=20)
        axis.set_ylim(0, 1)
        axis.set_title(f"execution consistency {title}")
        axis.legend()
    figure.tight_layout()
    figure.savefig(args.out_file)
    print(f"wrote {args.out_file}")
    return 0


def cmd_make_fixtures(args: argparse.Namespace) -> int:
    from .tabular_store import generate_fixture, save_dataset

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    seed = args.seed
    rows = args.rows
    fixtures = {
        "buildings_1740.csv": generate_fixture(seed, rows, "sommarioni", dataset_number=1),
        "buildings_1808.csv": generate_fixture(seed + 1, rows, "sommarioni", dataset_number=2),
        "landmarks.csv": generate_fixture(seed + 2, max(rows // 4, 1), "landmarks"),
        "catastici.csv": generate_fixture(seed, rows, "catastici"),
    }
    for name, dataset in fixtures.items():
        save_dataset(dataset, out_dir / name)
        print(f"wrote {out_dir / name} ({dataset.row_count} rows)")
    return 0


# --- argument parsing ------------------------------------------------------------


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="path to the YAML config file")
    parser.add_argument("--dataset-dir", help="base directory for relative dataset paths")
    parser.add_argument("--schema", help="override the schema config path")
    parser.add_argument("--model", help="override the provider model name")
    parser.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
    parser.add_argument("--seed", type=int, help="seed for single-run commands")
    parser.add_argument("--retries", type=int, help="debug retry budget")
    parser.add_argument("--shots", type=int, choices=(0, 3), help="in-context shot count")
    parser.add_argument("--k", type=int, help="SQL candidate sample count")
    parser.add_argument("--fuzzy-threshold", type=float, dest="fuzzy_threshold")
    parser.add_argument("--semantic-threshold", type=float, dest="semantic_threshold")
    parser.add_argument("--top-k", type=int, dest="top_k")
    parser.add_argument("--timeout", type=float, help="sandbox timeout in seconds")
    parser.add_argument(
        "--mock-transcript",
        dest="mock_transcript",
        help="replay this transcript instead of calling a live provider",
    )
    parser.add_argument("--out", help="write the JSON report here")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cadastre-qa",
        description="Ask natural-language questions over historical cadastre tables.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    ask = commands.add_parser("ask", help="run the analysis pipeline on one question")
    ask.add_argument("question")
    ask.add_argument("--id", default="adhoc")
    ask.add_argument("--category", default="personal",
                     choices=("spatial", "function", "personal", "temporal"))
    ask.add_argument("--answer-type", dest="answer_type", default="entity",
                     choices=("yes_no", "number", "entity"))
    _add_common(ask)
    ask.set_defaults(handler=cmd_ask)

    browse = commands.add_parser("browse", help="answer one browsing question with SQL")
    browse.add_argument("question")
    _add_common(browse)
    browse.set_defaults(handler=cmd_browse)

    eval_browse = commands.add_parser("eval-browse", help="score the SQL agent on a question file")
    eval_browse.add_argument("--questions", help="questions file with annotated SQL")
    _add_common(eval_browse)
    eval_browse.set_defaults(handler=cmd_eval_browse)

    consistency = commands.add_parser("consistency", help="multi-seed consistency report")
    consistency.add_argument("--questions", help="pipeline questions file")
    _add_common(consistency)
    consistency.set_defaults(handler=cmd_consistency)

    extract = commands.add_parser("extract-entities", help="show references and tiered matches")
    extract.add_argument("question")
    _add_common(extract)
    extract.set_defaults(handler=cmd_extract_entities)

    plot = commands.add_parser("plot", help="render grouped consistency rates to an image")
    plot.add_argument("--report", required=True, help="consistency report JSON")
    plot.add_argument("--out-file", dest="out_file", required=True)
    plot.set_defaults(handler=cmd_plot)

    fixtures = commands.add_parser("make-fixtures", help="write synthetic datasets for a demo")
    fixtures.add_argument("--out-dir", dest="out_dir", required=True)
    fixtures.add_argument("--seed", type=int, default=1)
    fixtures.add_argument("--rows", type=int, default=200)
    fixtures.set_defaults(handler=cmd_make_fixtures)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SqlError, ProviderUnavailable) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1
    except CadastreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
