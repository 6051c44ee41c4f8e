"""Prompt refinement from judge feedback and the extract-evaluate-improve loop.

When an extraction scores below the threshold, a reviser model rewrites only
the failing guideline rules of the extraction prompt; the task is then re-run
from the original source chunks with the revised prompt. Regenerating from
source avoids dragging earlier mistakes forward. The loop stops at the first
score at or above the threshold or after a fixed number of improvement
iterations.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from enum import Enum

from .errors import Manual2KgError, ParseFailure, RevisionViolation
from .extraction.agents import (
    REPAIR_INSTRUCTION,
    extract_mapping,
    extract_procedure,
    extract_roadmap,
)
from .extraction.prompts import split_guideline_blocks
from .extraction.types import PromptTemplate, Task, canonical_json_for
from .extraction.wire import strip_code_fence
from .gateway import ChatProvider, ChatRequest
from .judging import EvaluationReport, evaluate, report_to_dict, suite_for

logger = logging.getLogger(__name__)


class FinalSelection(str, Enum):
    LAST = "last"
    BEST = "best"


@dataclass(frozen=True)
class LoopConfig:
    threshold: float = 0.9
    max_iterations: int = 3
    final_selection: FinalSelection = FinalSelection.LAST

    def __post_init__(self):
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must be in (0, 1]")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass(frozen=True)
class IterationRecord:
    """One loop iteration: the prompt version used, its output and its report."""

    index: int
    prompt_version: int
    extraction: object
    report: EvaluationReport

    def __post_init__(self):
        if self.index != self.prompt_version:
            raise ValueError("iteration k must use prompt version k")


@dataclass(frozen=True)
class LoopOutcome:
    history: list[IterationRecord]
    accepted_index: int
    delta_corr: float
    reached_threshold: bool
    templates: list[PromptTemplate] = field(default_factory=list)

    def __post_init__(self):
        if not self.history:
            raise ValueError("history must be non-empty")
        if not 0 <= self.accepted_index < len(self.history):
            raise ValueError("accepted_index out of range")
        expected = (
            self.history[self.accepted_index].report.correctness
            - self.history[0].report.correctness
        )
        if abs(self.delta_corr - expected) > 1e-12:
            raise ValueError("delta_corr does not match the history")

    @property
    def accepted(self) -> IterationRecord:
        return self.history[self.accepted_index]


# -- prompt revision -----------------------------------------------------------

_IMPROVE_OVERVIEW = (
    "You are a prompt-optimization assistant. Revise an extraction prompt so "
    "that the next extraction run avoids the failures described in the "
    "evaluation feedback."
)

_IMPROVE_INPUTS = (
    "You are given: the sections of the current extraction prompt, the source "
    "text it was applied to, the extraction output it produced, and the "
    "evaluation feedback for that output."
)

_IMPROVE_TASK = (
    "Analyze the evaluation feedback, identify which guideline rules allowed "
    "the reported failures, and rewrite only those rules so the failures "
    "cannot recur. Keep the rewritten rules precise and actionable."
)

_IMPROVE_RULES = """\
- Change only the guidelines section; return every other section unchanged.
- Do not change guideline rules whose evaluation score is 1.
- Keep every guideline rule's key and order; rewrite only the text of failing
  rules. You may add concrete sub-rules inside a failing rule.
- Avoid vague instructions; state exactly what to include or exclude."""


def _improve_response_text(section_names: list[str]) -> str:
    names = ", ".join(f'"{n}"' for n in section_names)
    return (
        "Return one JSON object, no prose, whose keys are exactly the section "
        f"names of the current prompt ({names}) and whose values are the full "
        "revised text of each section."
    )


def assemble_improve_prompt(
    template: PromptTemplate,
    source_inputs: dict[str, str],
    extraction_output: str,
    report: EvaluationReport,
) -> str:
    input_blocks = [
        "[Current Prompt Sections]\n"
        + json.dumps(template.sections, indent=2, ensure_ascii=False)
    ]
    for name in sorted(source_inputs):
        input_blocks.append(f"[Source: {name}]\n{source_inputs[name]}")
    input_blocks.append(f"[Extraction Output]\n{extraction_output}")
    input_blocks.append(
        "[Evaluation Feedback]\n"
        + json.dumps(report_to_dict(report), indent=2, ensure_ascii=False)
    )
    blocks = [
        f"<Overview>\n{_IMPROVE_OVERVIEW}",
        f"<Inputs>\n{_IMPROVE_INPUTS}",
        f"<Your Task>\n{_IMPROVE_TASK}",
        f"<Revision Rules>\n{_IMPROVE_RULES}",
        "<Input>\n" + "\n\n".join(input_blocks),
        f"<Response>\n{_improve_response_text(list(template.sections))}",
    ]
    return "\n\n".join(blocks)


def _parse_revision(text: str) -> dict[str, str]:
    try:
        payload = json.loads(strip_code_fence(text))
    except json.JSONDecodeError as exc:
        raise ParseFailure(f"invalid JSON: {exc.msg}", position=exc.pos) from exc
    if not isinstance(payload, dict) or not all(
        isinstance(v, str) for v in payload.values()
    ):
        raise ParseFailure("revision must be a JSON object of section texts")
    return payload


def validate_revision(
    parent: PromptTemplate, revised_sections: dict[str, str], report: EvaluationReport
) -> None:
    """Reject revisions that touch anything besides failing guideline rules."""
    if set(revised_sections) != set(parent.sections):
        raise RevisionViolation(
            f"revision changed the section set: expected {sorted(parent.sections)}, "
            f"got {sorted(revised_sections)}"
        )
    for name, text in parent.sections.items():
        if name == "guidelines":
            continue
        if revised_sections[name] != text:
            raise RevisionViolation(f"{name} section was altered")

    _, parent_blocks = split_guideline_blocks(parent.sections["guidelines"])
    try:
        _, revised_blocks = split_guideline_blocks(revised_sections["guidelines"])
    except ValueError as exc:
        raise RevisionViolation(str(exc)) from exc
    if list(revised_blocks) != list(parent_blocks):
        raise RevisionViolation(
            f"guideline keys changed: expected {list(parent_blocks)}, "
            f"got {list(revised_blocks)}"
        )
    passing = {r.key for r in report.results if r.score == 1}
    for key in parent_blocks:
        if key in passing and revised_blocks[key] != parent_blocks[key]:
            raise RevisionViolation(f"passing guideline {key!r} was altered")


def _summarize_feedback(report: EvaluationReport) -> str:
    failing = ", ".join(report.failing_keys()) or "none"
    summary = f"correctness {report.correctness:.4f}; failing: {failing}"
    if report.overall_comment:
        summary += f"; {report.overall_comment}"
    return summary


def improve_prompt(
    provider: ChatProvider,
    template: PromptTemplate,
    source_inputs: dict[str, str],
    extraction_output: str,
    report: EvaluationReport,
    *,
    tag: str | None = None,
    model: str = "default",
) -> PromptTemplate:
    """Produce the next prompt version by revising failing guideline rules.

    Only the guidelines section may change, and rules whose score was 1 must
    come back byte-identical; anything else raises RevisionViolation. A
    revision identical to the parent is accepted as a no-op (the version
    still increments).
    """
    if report.task is not template.task:
        raise ValueError("report task does not match template task")
    prompt = assemble_improve_prompt(template, source_inputs, extraction_output, report)
    tag = tag or f"improve:{template.task.value}:iter{template.version + 1}"
    response = provider.complete(ChatRequest(user_text=prompt, tag=tag, model_name=model))
    try:
        revised = _parse_revision(response.text)
    except ParseFailure as first:
        logger.warning("revision parse failure for %s, retrying once: %s", tag, first)
        retry = provider.complete(
            ChatRequest(
                user_text=f"{prompt}\n\n{REPAIR_INSTRUCTION}", tag=tag, model_name=model
            )
        )
        revised = _parse_revision(retry.text)

    validate_revision(template, revised, report)
    if revised == template.sections:
        logger.info("%s: revision is identical to the parent prompt", tag)
    return PromptTemplate(
        task=template.task,
        sections={name: revised[name] for name in template.sections},
        input_slots=template.input_slots,
        version=template.version + 1,
        parent_version=template.version,
        provenance=_summarize_feedback(report),
    )


# -- the loop --------------------------------------------------------------

def _judge_inputs(task: Task, sources: dict) -> dict[str, str]:
    if task is Task.ROADMAP:
        return {"roadmap": sources["roadmap"].body}
    if task is Task.MAPPING:
        return {"roadmap": sources["roadmap"].body, "procedure": sources["procedure"].body}
    if "procedure" in sources:
        return {"procedure": sources["procedure"].body}
    return {"procedure": "".join(c.text for c in sources["procedure_steps"])}


def _extract(provider, task: Task, template: PromptTemplate, sources: dict, model: str):
    if task is Task.ROADMAP:
        return extract_roadmap(provider, template, sources["roadmap"], model=model)
    if task is Task.MAPPING:
        return extract_mapping(
            provider, template, sources["roadmap"], sources["procedure"], model=model
        )
    return extract_procedure(provider, template, sources["procedure_steps"], model=model)


def run_refinement_loop(
    provider: ChatProvider,
    task: Task,
    template: PromptTemplate,
    sources: dict,
    config: LoopConfig = LoopConfig(),
    *,
    model: str = "default",
) -> LoopOutcome:
    """Extract, evaluate, and refine the prompt until good enough or capped.

    ``sources`` holds the task's original chunks: {"roadmap": SectionChunk}
    for roadmap extraction, {"roadmap", "procedure"} for mapping, and
    {"procedure_steps": [ProcedureMainStepChunk], "procedure"?: SectionChunk}
    for procedure extraction. Every iteration re-extracts from these same
    chunks; previous outputs are never repaired in place.
    """
    if template.version != 0:
        raise ValueError("the loop must start from a version-0 template")
    suite = suite_for(task)
    judge_inputs = _judge_inputs(task, sources)

    def run_iteration(index: int, current: PromptTemplate) -> IterationRecord:
        try:
            extraction = _extract(provider, task, current, sources, model)
            canonical = canonical_json_for(task, extraction)
            examples = current.sections.get("examples") if task is Task.PROCEDURE else None
            report = evaluate(
                provider,
                suite,
                judge_inputs,
                canonical,
                examples=examples,
                tag=f"judge:{task.value}:iter{index}",
                model=model,
            )
        except Manual2KgError as exc:
            raise type(exc)(f"iteration {index}: {exc}") from exc
        return IterationRecord(index, current.version, extraction, report)

    current = template
    templates = [template]
    history = [run_iteration(0, current)]
    while (
        history[-1].report.correctness < config.threshold
        and len(history) - 1 < config.max_iterations
    ):
        index = len(history)
        previous = history[-1]
        try:
            current = improve_prompt(
                provider,
                current,
                judge_inputs,
                canonical_json_for(task, previous.extraction),
                previous.report,
                tag=f"improve:{task.value}:iter{index}",
                model=model,
            )
        except Manual2KgError as exc:
            raise type(exc)(f"iteration {index}: {exc}") from exc
        templates.append(current)
        history.append(run_iteration(index, current))

    scores = [r.report.correctness for r in history]
    if config.final_selection is FinalSelection.BEST:
        accepted_index = max(range(len(scores)), key=lambda i: (scores[i], -i))
    else:
        accepted_index = len(history) - 1
    return LoopOutcome(
        history=history,
        accepted_index=accepted_index,
        delta_corr=scores[accepted_index] - scores[0],
        reached_threshold=scores[accepted_index] >= config.threshold,
        templates=templates,
    )


def outcome_to_dict(outcome: LoopOutcome, task: Task, config: LoopConfig) -> dict:
    """Machine-readable loop summary, one row of a results table."""
    return {
        "task": task.value,
        "threshold": config.threshold,
        "max_iterations": config.max_iterations,
        "final_selection": config.final_selection.value,
        "iterations": [
            {
                "index": r.index,
                "prompt_version": r.prompt_version,
                "correctness": r.report.correctness,
            }
            for r in outcome.history
        ],
        "accepted_index": outcome.accepted_index,
        "accepted_correctness": outcome.accepted.report.correctness,
        "delta_corr": outcome.delta_corr,
        "reached_threshold": outcome.reached_threshold,
    }
