"""End-to-end orchestration: chunk, three refinement loops, graph, spec.

One manual produces, under ``out_dir/<manual_id>/``: the chunk listing, per
task the extraction and evaluation files for every iteration plus a loop
summary and the prompt versions used, the validated graph, and the test case
specification. All artifact files are deterministic, so a replayed run
overwrites them byte for byte.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import IoError, MissingSection, TransportError, ValidationFailed
from .extraction.prompts import default_template, has_template, load_template, save_template
from .extraction.types import PromptTemplate, Task, canonical_json_for
from .gateway import (
    API_KEY_ENV,
    BASE_URL_ENV,
    ChatProvider,
    LiveBackend,
    RecordingBackend,
    ScriptedBackend,
    TranscriptRecorder,
    open_replay,
)
from .ingest import (
    DEFAULT_NOISE_PATTERNS,
    PROCEDURE_SECTION,
    ROADMAP_SECTION,
    SectionChunk,
    chunk_sections,
    chunk_to_json_dict,
    load_manual,
    sections_by_name,
    split_procedure,
)
from .judging import save_report
from .kg import (
    KnowledgeGraph,
    enhance_graph,
    load_graph,
    mapping_to_triples,
    procedure_to_triples,
    roadmap_to_triples,
    save_graph,
    validate_graph,
)
from .refinement import (
    FinalSelection,
    LoopConfig,
    LoopOutcome,
    outcome_to_dict,
    run_refinement_loop,
)
from .tcs import generate_tcs, save_tcs

logger = logging.getLogger(__name__)

PROVIDER_KINDS = ("live", "replay", "scripted")

REQUIRED_SECTIONS = (ROADMAP_SECTION, PROCEDURE_SECTION)

ALL_TASKS = (Task.ROADMAP, Task.MAPPING, Task.PROCEDURE)


@dataclass(frozen=True)
class PipelineConfig:
    out_dir: Path = Path("out")
    prompts_dir: Path | None = None
    provider: str = "scripted"
    transcript_path: Path | None = None
    script_path: Path | None = None
    base_url: str | None = None
    model_name: str = "default"
    threshold: float = 0.9
    max_iterations: int = 3
    final_selection: FinalSelection = FinalSelection.LAST
    heading_marker: str = "####"
    noise_patterns: tuple[str, ...] = DEFAULT_NOISE_PATTERNS
    jobs: int = 1

    def __post_init__(self):
        if self.provider not in PROVIDER_KINDS:
            raise ValueError(f"provider must be one of {PROVIDER_KINDS}")
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def loop_config(self) -> LoopConfig:
        return LoopConfig(
            threshold=self.threshold,
            max_iterations=self.max_iterations,
            final_selection=self.final_selection,
        )


def config_from_dict(obj: dict) -> PipelineConfig:
    """Build a config from a JSON-compatible dict (the config file format)."""
    kwargs: dict = dict(obj)
    for key in ("out_dir", "prompts_dir", "transcript_path", "script_path"):
        if kwargs.get(key) is not None:
            kwargs[key] = Path(kwargs[key])
    if "final_selection" in kwargs:
        kwargs["final_selection"] = FinalSelection(kwargs["final_selection"])
    if "noise_patterns" in kwargs:
        kwargs["noise_patterns"] = tuple(kwargs["noise_patterns"])
    unknown = set(kwargs) - {f for f in PipelineConfig.__dataclass_fields__}
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    return PipelineConfig(**kwargs)


class ProviderFactory:
    """Builds per-manual providers; recording shares one transcript writer."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.recorder: TranscriptRecorder | None = None
        if config.transcript_path and config.provider in ("live", "scripted"):
            self.recorder = TranscriptRecorder(config.transcript_path)

    def make(self) -> ChatProvider:
        config = self.config
        if config.provider == "scripted":
            if not config.script_path:
                raise IoError("scripted provider needs a script file (script_path)")
            inner: ChatProvider = ScriptedBackend.from_script_file(config.script_path)
        elif config.provider == "replay":
            if not config.transcript_path:
                raise IoError("replay provider needs a transcript file (transcript_path)")
            inner = open_replay(config.transcript_path)
        else:
            base_url = config.base_url or os.environ.get(BASE_URL_ENV)
            api_key = os.environ.get(API_KEY_ENV)
            if not base_url:
                raise TransportError(f"live provider needs a base URL ({BASE_URL_ENV})")
            if not api_key:
                raise TransportError(f"live provider needs an API key ({API_KEY_ENV})")
            inner = LiveBackend(base_url, api_key)
        if self.recorder is not None:
            return RecordingBackend(inner, self.recorder)
        return inner

    def close(self) -> None:
        if self.recorder is not None:
            self.recorder.close()


@dataclass
class ManualRunResult:
    manual_id: str
    out_dir: Path
    outcomes: dict[Task, LoopOutcome] = field(default_factory=dict)
    reached_all_thresholds: bool = True


def _write_json(path: Path, obj) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc


def template_for(config: PipelineConfig, task: Task) -> PromptTemplate:
    if config.prompts_dir and has_template(config.prompts_dir, task, 0):
        return load_template(config.prompts_dir, task, 0)
    return default_template(task)


def chunk_manual(manual_path: str | Path, config: PipelineConfig):
    """Load and chunk one manual, enforcing the hard-required sections."""
    doc = load_manual(manual_path)
    chunks = chunk_sections(doc, config.heading_marker, config.noise_patterns)
    sections = sections_by_name(chunks)
    for name in REQUIRED_SECTIONS:
        if name not in sections:
            raise MissingSection(f"missing required section: {name}")
    steps = split_procedure(sections[PROCEDURE_SECTION])
    return doc, chunks, sections, steps


def loop_sources(task: Task, sections: dict[str, SectionChunk], steps) -> dict:
    if task is Task.ROADMAP:
        return {"roadmap": sections[ROADMAP_SECTION]}
    if task is Task.MAPPING:
        return {"roadmap": sections[ROADMAP_SECTION], "procedure": sections[PROCEDURE_SECTION]}
    return {"procedure_steps": steps, "procedure": sections[PROCEDURE_SECTION]}


def persist_loop(
    manual_dir: Path, task: Task, outcome: LoopOutcome, config: PipelineConfig
) -> None:
    task_dir = manual_dir / task.value
    for record in outcome.history:
        canonical = canonical_json_for(task, record.extraction)
        _write_text(task_dir / f"iter{record.index}.json", canonical + "\n")
        save_report(record.report, task_dir / f"iter{record.index}.eval.json")
    for template in outcome.templates:
        save_template(template, manual_dir / "prompts")
    _write_json(task_dir / "loop.json", outcome_to_dict(outcome, task, config.loop_config()))


def run_manual(
    manual_path: str | Path,
    config: PipelineConfig,
    provider: ChatProvider | None = None,
) -> ManualRunResult:
    """Run the whole pipeline for one manual and write all artifacts.

    Unmet thresholds are recorded, not fatal; graph validation failures are.
    """
    if provider is None:
        factory = ProviderFactory(config)
        try:
            return run_manual(manual_path, config, factory.make())
        finally:
            factory.close()

    doc, chunks, sections, steps = chunk_manual(manual_path, config)
    manual_dir = Path(config.out_dir) / doc.manual_id
    result = ManualRunResult(manual_id=doc.manual_id, out_dir=manual_dir)

    _write_json(
        manual_dir / "chunks.json",
        {
            "manual_id": doc.manual_id,
            "title": doc.title,
            "sections": [chunk_to_json_dict(c) for c in chunks],
            "procedure_steps": [{"ordinal": s.ordinal, "text": s.text} for s in steps],
        },
    )

    for task in ALL_TASKS:
        template = template_for(config, task)
        outcome = run_refinement_loop(
            provider,
            task,
            template,
            loop_sources(task, sections, steps),
            config.loop_config(),
            model=config.model_name,
        )
        persist_loop(manual_dir, task, outcome, config)
        result.outcomes[task] = outcome
        if not outcome.reached_threshold:
            result.reached_all_thresholds = False
            logger.warning(
                "%s/%s: correctness %.4f below threshold %.2f after %d iterations",
                doc.manual_id,
                task.value,
                outcome.accepted.report.correctness,
                config.threshold,
                len(outcome.history) - 1,
            )

    triples = (
        roadmap_to_triples(result.outcomes[Task.ROADMAP].accepted.extraction)
        + mapping_to_triples(result.outcomes[Task.MAPPING].accepted.extraction)
        + procedure_to_triples(result.outcomes[Task.PROCEDURE].accepted.extraction)
    )
    kg = KnowledgeGraph.from_triples(doc.manual_id, triples)
    kg = enhance_graph(kg, sections, doc.title)
    violations = validate_graph(kg)
    if violations:
        raise ValidationFailed(
            f"{doc.manual_id}: graph has {len(violations)} violations: "
            + "; ".join(f"{v.rule}: {v.message}" for v in violations[:5])
        )
    graph_path = manual_dir / "graph.jsonl"
    save_graph(kg, graph_path)
    load_graph(graph_path)  # spot-validate what we just wrote

    save_tcs(generate_tcs(kg), manual_dir / "tcs.json")
    return result


def with_flags(config: PipelineConfig, **overrides) -> PipelineConfig:
    """Apply non-None flag overrides on top of a config (flags win)."""
    changes = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **changes) if changes else config
