"""The three extraction operations: roadmap, mapping, procedure.

Each assembles a prompt, calls the provider, parses the wire JSON (with one
repair retry on parse failure), validates cross-references, and logs verbatim
lint warnings. Procedure extraction runs per main-step chunk and merges the
results in ordinal order.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor

from ..errors import DanglingReference, ParseFailure
from ..gateway import ChatProvider, ChatRequest
from ..ingest import ProcedureMainStepChunk, SectionChunk, count_top_level_steps, normalize_ws
from .prompts import assemble_prompt
from .types import (
    MappingEntry,
    ProcedureExtraction,
    ProcedureStep,
    PromptTemplate,
    RoadmapExtraction,
    RoadmapStep,
    Task,
)
from .wire import parse_wire_json

logger = logging.getLogger(__name__)

REPAIR_INSTRUCTION = "Return only the JSON object, no prose."

# Mapping inputs are passed raw; warn when they approach typical context sizes.
TOKEN_WARN_LIMIT = 32768


def complete_with_repair(
    provider: ChatProvider, prompt: str, tag: str, model: str, parse_fn
):
    """Call the provider and parse; on ParseFailure retry once with a fixup."""
    response = provider.complete(ChatRequest(user_text=prompt, tag=tag, model_name=model))
    try:
        return parse_fn(response.text)
    except ParseFailure as first:
        logger.warning("parse failure for %s, retrying once: %s", tag, first)
        retry = provider.complete(
            ChatRequest(
                user_text=f"{prompt}\n\n{REPAIR_INSTRUCTION}", tag=tag, model_name=model
            )
        )
        return parse_fn(retry.text)


def _walk_roadmap(steps: list[RoadmapStep]):
    for step in steps:
        yield step
        yield from _walk_roadmap(step.sub_steps)


def _walk_procedure(steps: list[ProcedureStep]):
    for step in steps:
        yield step
        yield from _walk_procedure(step.sub_steps)


def _lint(pairs: list[tuple[str, str]], source: str) -> list[str]:
    norm_source = normalize_ws(source)
    return [
        f"{label} not found verbatim in source: {normalize_ws(text)[:80]!r}"
        for label, text in pairs
        if normalize_ws(text) and normalize_ws(text) not in norm_source
    ]


def lint_roadmap(extraction: RoadmapExtraction, source: str) -> list[str]:
    pairs = [(f"step {s.step_no} text", s.step_text) for s in _walk_roadmap(extraction.steps)]
    return _lint(pairs, source)


def lint_mapping(entries: list[MappingEntry], roadmap_src: str, procedure_src: str) -> list[str]:
    warnings = _lint(
        [(f"roadmap step {e.roadmap_step_no} text", e.roadmap_step_text) for e in entries],
        roadmap_src,
    )
    warnings += _lint(
        [
            (f"procedure step {m.procedure_main_step_no} content", m.procedure_main_step_content)
            for e in entries
            for m in e.matches
        ],
        procedure_src,
    )
    return warnings


def lint_procedure(extraction: ProcedureExtraction, source: str) -> list[str]:
    pairs: list[tuple[str, str]] = []
    for step in _walk_procedure(extraction.main_steps):
        pairs.append((f"step {step.step_no} content", step.content))
        pairs.extend((f"step {step.step_no} command", c) for c in step.commands)
    return _lint(pairs, source)


def _log_lint(tag: str, warnings: list[str]) -> None:
    for warning in warnings:
        logger.warning("%s: %s", tag, warning)


def extract_roadmap(
    provider: ChatProvider,
    template: PromptTemplate,
    roadmap_chunk: SectionChunk,
    *,
    model: str = "default",
) -> RoadmapExtraction:
    if template.task is not Task.ROADMAP:
        raise ValueError(f"expected a roadmap template, got {template.task.value}")
    prompt = assemble_prompt(template, {"roadmap": roadmap_chunk.body})
    tag = f"extract:roadmap:iter{template.version}"
    extraction = complete_with_repair(
        provider, prompt, tag, model, lambda t: parse_wire_json(t, Task.ROADMAP)
    )
    _log_lint(tag, lint_roadmap(extraction, roadmap_chunk.body))
    return extraction


def extract_mapping(
    provider: ChatProvider,
    template: PromptTemplate,
    roadmap_chunk: SectionChunk,
    procedure_chunk: SectionChunk,
    *,
    model: str = "default",
) -> list[MappingEntry]:
    if template.task is not Task.MAPPING:
        raise ValueError(f"expected a mapping template, got {template.task.value}")
    estimated_tokens = (len(roadmap_chunk.body) + len(procedure_chunk.body)) // 4
    if estimated_tokens > TOKEN_WARN_LIMIT:
        logger.warning(
            "mapping input is large (~%d tokens); output quality may degrade",
            estimated_tokens,
        )
    prompt = assemble_prompt(
        template, {"roadmap": roadmap_chunk.body, "procedure": procedure_chunk.body}
    )
    tag = f"extract:mapping:iter{template.version}"
    entries = complete_with_repair(
        provider, prompt, tag, model, lambda t: parse_wire_json(t, Task.MAPPING)
    )

    roadmap_count = count_top_level_steps(roadmap_chunk.body)
    procedure_count = count_top_level_steps(procedure_chunk.body)
    mapped: set[int] = set()
    for entry in entries:
        no = int(entry.roadmap_step_no)
        if not 1 <= no <= roadmap_count:
            raise DanglingReference(
                f"mapping references roadmap step {no}, but the roadmap has "
                f"{roadmap_count} main steps"
            )
        mapped.add(no)
        for match in entry.matches:
            target = int(match.procedure_main_step_no)
            if not 1 <= target <= procedure_count:
                raise DanglingReference(
                    f"roadmap step {no} maps to procedure step {target}, but the "
                    f"procedure has {procedure_count} main steps"
                )
    unmapped = set(range(1, roadmap_count + 1)) - mapped
    if unmapped:
        logger.warning("%s: roadmap steps without matches: %s", tag, sorted(unmapped))
    _log_lint(tag, lint_mapping(entries, roadmap_chunk.body, procedure_chunk.body))
    return entries


def extract_procedure(
    provider: ChatProvider,
    template: PromptTemplate,
    chunks: list[ProcedureMainStepChunk],
    *,
    model: str = "default",
    max_workers: int = 1,
) -> ProcedureExtraction:
    if template.task is not Task.PROCEDURE:
        raise ValueError(f"expected a procedure template, got {template.task.value}")
    if not chunks:
        raise ValueError("no procedure main-step chunks given")

    def extract_one(chunk: ProcedureMainStepChunk) -> tuple[int, ProcedureStep]:
        prompt = assemble_prompt(template, {"procedure_main_step": chunk.text})
        tag = f"extract:procedure:iter{template.version}:step{chunk.ordinal}"
        try:
            result = complete_with_repair(
                provider,
                prompt,
                tag,
                model,
                lambda t: parse_wire_json(t, Task.PROCEDURE, main_step_no=chunk.ordinal),
            )
        except ParseFailure as exc:
            raise ParseFailure(f"main step {chunk.ordinal}: {exc}") from exc
        return chunk.ordinal, result.main_steps[0]

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            results = dict(pool.map(extract_one, chunks))
    else:
        results = dict(extract_one(c) for c in chunks)

    # Merge in ordinal order regardless of completion order.
    merged = ProcedureExtraction(
        main_steps=[results[c.ordinal] for c in sorted(chunks, key=lambda c: c.ordinal)]
    )
    source = "".join(c.text for c in sorted(chunks, key=lambda c: c.ordinal))
    _log_lint(f"extract:procedure:iter{template.version}", lint_procedure(merged, source))
    return merged
