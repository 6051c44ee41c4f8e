"""Command-line entry point: the full pipeline plus each stage on its own.

Exit codes: 0 success (including runs that missed the correctness threshold
but produced artifacts), 2 input error, 3 provider error, 4 validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .analytics import (
    RunReport,
    RunRow,
    agreement_to_dict,
    cohens_kappa,
    load_labels_from_dir,
    render_run_table,
    run_report_to_dict,
)
from .errors import (
    CorruptGraph,
    CorruptTranscript,
    IngestError,
    Manual2KgError,
    MissingUseCase,
    NoOverlap,
    TaskMismatch,
    ValidationFailed,
)
from .extraction.prompts import default_template, save_template
from .extraction.types import Task
from .extraction.wire import parse_wire_json
from .judging import report_to_dict, save_report, suite_for
from .judging import evaluate as judge_evaluate
from .kg import (
    KnowledgeGraph,
    enhance_graph,
    export_ntriples,
    load_graph,
    mapping_to_triples,
    procedure_to_triples,
    roadmap_to_triples,
    save_graph,
    validate_graph,
)
from .ingest import PROCEDURE_SECTION, ROADMAP_SECTION, chunk_to_json_dict
from .pipeline import (
    ALL_TASKS,
    PipelineConfig,
    ProviderFactory,
    chunk_manual,
    config_from_dict,
    loop_sources,
    persist_loop,
    run_manual,
    template_for,
    with_flags,
)
from .refinement import FinalSelection, run_refinement_loop
from .tcs import generate_tcs, save_tcs

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PROVIDER = 3
EXIT_VALIDATION = 4


def exit_code_for(exc: Exception) -> int:
    if isinstance(exc, (ValidationFailed, CorruptGraph, MissingUseCase)):
        return EXIT_VALIDATION
    if isinstance(exc, (IngestError, CorruptTranscript, NoOverlap, TaskMismatch, ValueError)):
        return EXIT_INPUT
    if isinstance(exc, Manual2KgError):
        return EXIT_PROVIDER
    return EXIT_PROVIDER


def _add_pipeline_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file; flags win over it")
    parser.add_argument("--out-dir", type=Path)
    parser.add_argument("--prompts-dir", type=Path)
    parser.add_argument("--provider", choices=("live", "replay", "scripted"))
    parser.add_argument("--transcript", type=Path, help="record target (live/scripted) or replay source")
    parser.add_argument("--script", type=Path, help="scripted-provider responses, JSON tag -> [texts]")
    parser.add_argument("--base-url", help="live endpoint base URL")
    parser.add_argument("--model")
    parser.add_argument("--threshold", type=float)
    parser.add_argument("--max-iters", type=int)
    parser.add_argument("--final-selection", choices=("last", "best"))
    parser.add_argument("--heading-marker")
    parser.add_argument("--noise-pattern", action="append", dest="noise_patterns", metavar="REGEX")
    parser.add_argument("--jobs", type=int)


def build_config(args: argparse.Namespace) -> PipelineConfig:
    if getattr(args, "config", None):
        base = config_from_dict(json.loads(args.config.read_text(encoding="utf-8")))
    else:
        base = PipelineConfig()
    final_selection = (
        FinalSelection(args.final_selection) if getattr(args, "final_selection", None) else None
    )
    noise = tuple(args.noise_patterns) if getattr(args, "noise_patterns", None) else None
    return with_flags(
        base,
        out_dir=getattr(args, "out_dir", None),
        prompts_dir=getattr(args, "prompts_dir", None),
        provider=getattr(args, "provider", None),
        transcript_path=getattr(args, "transcript", None),
        script_path=getattr(args, "script", None),
        base_url=getattr(args, "base_url", None),
        model_name=getattr(args, "model", None),
        threshold=getattr(args, "threshold", None),
        max_iterations=getattr(args, "max_iters", None),
        final_selection=final_selection,
        heading_marker=getattr(args, "heading_marker", None),
        noise_patterns=noise,
        jobs=getattr(args, "jobs", None),
    )


def cmd_run(args: argparse.Namespace) -> int:
    config = build_config(args)
    factory = ProviderFactory(config)
    status = EXIT_OK

    def run_one(manual: Path) -> int:
        try:
            result = run_manual(manual, config, factory.make())
        except Exception as exc:  # noqa: BLE001 - reported per manual
            print(f"error: {manual}: {exc}", file=sys.stderr)
            return exit_code_for(exc)
        note = "" if result.reached_all_thresholds else " (threshold not reached)"
        print(f"ok: {result.manual_id} -> {result.out_dir}{note}")
        return EXIT_OK

    try:
        if config.jobs > 1 and len(args.manuals) > 1:
            with ThreadPoolExecutor(max_workers=config.jobs) as pool:
                codes = list(pool.map(run_one, args.manuals))
        else:
            codes = [run_one(m) for m in args.manuals]
        status = max(codes) if codes else EXIT_OK
    finally:
        factory.close()
    return status


def cmd_chunk(args: argparse.Namespace) -> int:
    config = build_config(args)
    doc, chunks, _sections, steps = chunk_manual(args.manual, config)
    out = Path(config.out_dir) / doc.manual_id / "chunks.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(
            {
                "manual_id": doc.manual_id,
                "title": doc.title,
                "sections": [chunk_to_json_dict(c) for c in chunks],
                "procedure_steps": [{"ordinal": s.ordinal, "text": s.text} for s in steps],
            },
            indent=2,
            ensure_ascii=False,
        )
        + "\n",
        encoding="utf-8",
    )
    print(f"ok: {len(chunks)} sections, {len(steps)} procedure main steps -> {out}")
    return EXIT_OK


def cmd_extract(args: argparse.Namespace) -> int:
    config = build_config(args)
    task = Task(args.task)
    doc, _chunks, sections, steps = chunk_manual(args.manual, config)
    factory = ProviderFactory(config)
    try:
        outcome = run_refinement_loop(
            factory.make(),
            task,
            template_for(config, task),
            loop_sources(task, sections, steps),
            config.loop_config(),
            model=config.model_name,
        )
    finally:
        factory.close()
    manual_dir = Path(config.out_dir) / doc.manual_id
    persist_loop(manual_dir, task, outcome, config)
    print(
        f"ok: {doc.manual_id}/{task.value}: correctness "
        f"{outcome.accepted.report.correctness:.4f} after {len(outcome.history) - 1} "
        f"improvement iterations -> {manual_dir / task.value}"
    )
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    config = build_config(args)
    task = Task(args.task)
    _doc, _chunks, sections, steps = chunk_manual(args.manual, config)
    extraction_text = Path(args.extraction).read_text(encoding="utf-8")
    parse_wire_json(extraction_text, task)  # must be a valid extraction file

    if task is Task.ROADMAP:
        source_inputs = {"roadmap": sections[ROADMAP_SECTION].body}
    elif task is Task.MAPPING:
        source_inputs = {
            "roadmap": sections[ROADMAP_SECTION].body,
            "procedure": sections[PROCEDURE_SECTION].body,
        }
    else:
        source_inputs = {"procedure": sections[PROCEDURE_SECTION].body}
    examples = (
        template_for(config, task).sections.get("examples") if task is Task.PROCEDURE else None
    )
    factory = ProviderFactory(config)
    try:
        report = judge_evaluate(
            factory.make(),
            suite_for(task),
            source_inputs,
            extraction_text,
            examples=examples,
            model=config.model_name,
        )
    finally:
        factory.close()
    if args.out:
        save_report(report, args.out)
    print(json.dumps(report_to_dict(report), indent=2, ensure_ascii=False))
    return EXIT_OK


def _load_accepted_extraction(manual_dir: Path, task: Task):
    loop = json.loads((manual_dir / task.value / "loop.json").read_text(encoding="utf-8"))
    accepted = loop["accepted_index"]
    text = (manual_dir / task.value / f"iter{accepted}.json").read_text(encoding="utf-8")
    return parse_wire_json(text, task)


def cmd_build_kg(args: argparse.Namespace) -> int:
    config = build_config(args)
    doc, _chunks, sections, _steps = chunk_manual(args.manual, config)
    manual_dir = Path(config.out_dir) / doc.manual_id
    triples = (
        roadmap_to_triples(_load_accepted_extraction(manual_dir, Task.ROADMAP))
        + mapping_to_triples(_load_accepted_extraction(manual_dir, Task.MAPPING))
        + procedure_to_triples(_load_accepted_extraction(manual_dir, Task.PROCEDURE))
    )
    kg = enhance_graph(KnowledgeGraph.from_triples(doc.manual_id, triples), sections, doc.title)
    violations = validate_graph(kg)
    if violations:
        raise ValidationFailed(
            "; ".join(f"{v.rule}: {v.message}" for v in violations[:10])
        )
    graph_path = manual_dir / "graph.jsonl"
    save_graph(kg, graph_path)
    if args.ntriples:
        export_ntriples(kg, graph_path.with_suffix(".nt"))
    print(f"ok: {len(kg.triples)} triples -> {graph_path}")
    return EXIT_OK


def cmd_emit_tcs(args: argparse.Namespace) -> int:
    kg = load_graph(args.graph)
    violations = validate_graph(kg)
    if violations:
        raise ValidationFailed("; ".join(f"{v.rule}: {v.message}" for v in violations[:10]))
    out = args.out or Path(args.graph).parent / "tcs.json"
    save_tcs(generate_tcs(kg), out)
    print(f"ok: specification -> {out}")
    return EXIT_OK


def cmd_kappa(args: argparse.Namespace) -> int:
    task = Task(args.task)
    a = load_labels_from_dir(args.rater_a, task, rater_id="rater-a")
    b = load_labels_from_dir(args.rater_b, task, rater_id="rater-b")
    result = cohens_kappa(a, b)
    print(json.dumps(agreement_to_dict(result), indent=2))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    task = Task(args.task)
    rows = []
    max_iters = 0
    for loop_path in sorted(out_dir.glob(f"*/{task.value}/loop.json")):
        loop = json.loads(loop_path.read_text(encoding="utf-8"))
        scores = [it["correctness"] for it in loop["iterations"]]
        max_iters = max(max_iters, loop["max_iterations"])
        rows.append(
            RunRow(
                label=loop_path.parent.parent.name,
                original=scores[0],
                iteration_scores=scores[1:],
                accepted=loop["accepted_correctness"],
                delta=loop["delta_corr"],
                reached_threshold=loop["reached_threshold"],
            )
        )
    if not rows:
        print(f"no {task.value} loop results under {out_dir}", file=sys.stderr)
        return EXIT_INPUT
    report = RunReport(
        rows=rows,
        aggregates={
            "original": _agg([r.original for r in rows]),
            "accepted": _agg([r.accepted for r in rows]),
            "delta": _agg([r.delta for r in rows]),
        },
    )
    if args.json:
        print(json.dumps(run_report_to_dict(report), indent=2))
    else:
        print(render_run_table(report, max_iterations=max_iters or 3))
    return EXIT_OK


def _agg(values: list[float]) -> dict[str, float]:
    import statistics

    return {
        "mean": statistics.fmean(values),
        "median": statistics.median(values),
        "min": min(values),
        "max": max(values),
    }


def cmd_init_prompts(args: argparse.Namespace) -> int:
    for task in ALL_TASKS:
        save_template(default_template(task), args.directory)
    print(f"ok: default prompt templates written under {args.directory}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manual2kg",
        description="Extract validated knowledge graphs and test case "
        "specifications from configuration manuals.",
    )
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="full pipeline for one or more manuals")
    p.add_argument("manuals", nargs="+", type=Path)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("chunk", help="chunk a manual into sections and main steps")
    p.add_argument("manual", type=Path)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_chunk)

    p = sub.add_parser("extract", help="run one task's extraction loop")
    p.add_argument("manual", type=Path)
    p.add_argument("--task", required=True, choices=[t.value for t in ALL_TASKS])
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("evaluate", help="judge an existing extraction file")
    p.add_argument("manual", type=Path)
    p.add_argument("extraction", type=Path)
    p.add_argument("--task", required=True, choices=[t.value for t in ALL_TASKS])
    p.add_argument("--out", type=Path)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("build-kg", help="convert accepted extractions into a graph")
    p.add_argument("manual", type=Path)
    p.add_argument("--ntriples", action="store_true", help="also export graph.nt")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_build_kg)

    p = sub.add_parser("emit-tcs", help="derive the test case specification from a graph")
    p.add_argument("graph", type=Path)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_emit_tcs)

    p = sub.add_parser("kappa", help="judge-vs-human agreement from report files")
    p.add_argument("--rater-a", required=True, type=Path)
    p.add_argument("--rater-b", required=True, type=Path)
    p.add_argument("--task", required=True, choices=[t.value for t in ALL_TASKS])
    p.set_defaults(func=cmd_kappa)

    p = sub.add_parser("report", help="summarize loop results like a results table")
    p.add_argument("--out-dir", required=True, type=Path)
    p.add_argument("--task", required=True, choices=[t.value for t in ALL_TASKS])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("init-prompts", help="write the built-in templates for editing")
    p.add_argument("directory", type=Path)
    p.set_defaults(func=cmd_init_prompts)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
