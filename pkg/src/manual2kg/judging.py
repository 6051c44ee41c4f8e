"""Guideline-scored evaluation of extraction outputs.

A judge model receives the source text, the extraction output and a suite of
seven named guidelines, and returns per-guideline entry counts. The overall
correctness score is the fraction of correct entries over checked entries
summed across all guidelines.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import (
    EmptyEvaluation,
    IoError,
    MissingGuideline,
    MissingInput,
    ParseFailure,
)
from .extraction.agents import REPAIR_INSTRUCTION
from .extraction.types import Task
from .extraction.wire import strip_code_fence
from .gateway import ChatProvider, ChatRequest

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GuidelineSuite:
    task: Task
    guidelines: tuple[tuple[str, str], ...]

    @property
    def keys(self) -> tuple[str, ...]:
        return tuple(key for key, _ in self.guidelines)


ROADMAP_SUITE = GuidelineSuite(
    task=Task.ROADMAP,
    guidelines=(
        (
            "step_splitting",
            "Check every extracted step and sub-step: it must correspond to an "
            "explicitly marked step in the source roadmap, with no invented splits "
            "or merged steps. Count one entry per extracted step at any level.",
        ),
        (
            "context_identification",
            "Check that the context field holds exactly the introductory text "
            "before the first step and nothing else. Count one entry for the "
            "context field.",
        ),
        (
            "goal_extraction",
            "Check each step's goal list: every explicitly stated purpose must be "
            "captured and nothing that is not a stated purpose may appear. Count "
            "one entry per step, including steps with empty goal lists.",
        ),
        (
            "note_extraction",
            "Check each step's note list: clarifications, conditions and "
            "background remarks must be captured, and main actions must not be "
            "filed as notes. Count one entry per step, including steps with empty "
            "note lists.",
        ),
        (
            "numbering",
            "Check that step numbers are sequential, hierarchical and consistent "
            "with source order. Count one entry per extracted step at any level.",
        ),
        (
            "verbatim_copying",
            "Check that every extracted string is copied verbatim from the source "
            "roadmap. Count one entry per extracted string.",
        ),
        (
            "format_compliance",
            "Check that the output follows the required JSON structure exactly, "
            "with all fields present and absent values as empty lists. Count one "
            "entry per extracted step at any level.",
        ),
    ),
)

MAPPING_SUITE = GuidelineSuite(
    task=Task.MAPPING,
    guidelines=(
        (
            "main_step_boundary",
            "Check that every roadmap and procedure step in the output is a "
            "complete top-level numbered block, not a fragment or sub-step. Count "
            "one entry per step reference in the output.",
        ),
        (
            "step_numbering",
            "Check that roadmap and procedure step numbers are sequential and "
            "match the source numbering. Count one entry per step reference.",
        ),
        (
            "relevant_step_match",
            "Check each matched pair: the procedure main step must implement or "
            "verify the roadmap main step it is matched to. Count one entry per "
            "matched pair.",
        ),
        (
            "multiple_match_inclusion",
            "Check each roadmap main step: every procedure main step that "
            "implements or verifies it, including verification steps, must appear "
            "among its matches. Count one entry per roadmap main step.",
        ),
        (
            "device_identifier_consistency",
            "Check that matched procedure steps reference the same device and "
            "interface identifiers as the roadmap step. Count one entry per "
            "matched pair.",
        ),
        (
            "text_completeness",
            "Check that roadmap and procedure step texts are preserved completely "
            "and unmodified. Count one entry per step reference.",
        ),
        (
            "structural_format",
            "Check that the output follows the required JSON schema exactly. "
            "Count one entry per mapping entry.",
        ),
    ),
)

PROCEDURE_SUITE = GuidelineSuite(
    task=Task.PROCEDURE,
    guidelines=(
        (
            "step_coverage",
            "Check that every step, sub-step and deeper-level step in the source "
            "appears in the output, with none omitted or merged. Count one entry "
            "per source step at any level.",
        ),
        (
            "step_numbering",
            "Check that extracted steps are numbered hierarchically and "
            "sequentially. Count one entry per extracted step.",
        ),
        (
            "command_extraction",
            "Check each step's command field: all command lines and interactive "
            "inputs belonging to that step must be captured, including commands "
            "named inside step sentences. Count one entry per step, including "
            "steps with empty command lists.",
        ),
        (
            "expected_output_extraction",
            "Check each step's expected-output field: execution outputs and their "
            "explanatory text must be captured where present. Count one entry per "
            "step, including steps with empty output lists.",
        ),
        (
            "note_classification_attachment",
            "Check that notes are identified correctly and attached to the step "
            "they follow, and that main actions are not filed as notes. Count one "
            "entry per step.",
        ),
        (
            "text_completeness_verbatim",
            "Check that every extracted string is copied verbatim from the source "
            "procedure text. Count one entry per extracted string.",
        ),
        (
            "structural_format_schema",
            "Check that the output strictly conforms to the required hierarchical "
            "JSON schema. Count one entry per extracted step.",
        ),
    ),
)

_SUITES = {s.task: s for s in (ROADMAP_SUITE, MAPPING_SUITE, PROCEDURE_SUITE)}

_REQUIRED_INPUTS = {
    Task.ROADMAP: ("roadmap",),
    Task.MAPPING: ("roadmap", "procedure"),
    Task.PROCEDURE: ("procedure",),
}


def suite_for(task: Task) -> GuidelineSuite:
    return _SUITES[task]


@dataclass(frozen=True)
class GuidelineResult:
    """One guideline's verdict: binary score backed by entry counts."""

    key: str
    score: int
    num_checked: int
    num_correct: int
    reasons: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.num_checked < 0 or self.num_correct < 0:
            raise ValueError("counts must be non-negative")
        if self.num_correct > self.num_checked:
            raise ValueError("num_correct cannot exceed num_checked")
        if self.score not in (0, 1):
            raise ValueError("score must be 0 or 1")
        if bool(self.score) != (self.num_correct == self.num_checked):
            raise ValueError("score is inconsistent with counts")


def correctness_score(results: list[GuidelineResult]) -> float:
    """Fraction of correct entries over checked entries, across guidelines."""
    total_checked = sum(r.num_checked for r in results)
    if total_checked == 0:
        raise EmptyEvaluation("no checked entries across any guideline")
    return sum(r.num_correct for r in results) / total_checked


@dataclass(frozen=True)
class EvaluationReport:
    task: Task
    results: list[GuidelineResult]
    overall_comment: str
    correctness: float

    def __post_init__(self):
        expected = suite_for(self.task).keys
        got = tuple(r.key for r in self.results)
        if got != expected:
            raise ValueError(f"results must cover suite keys {expected}, got {got}")
        if abs(self.correctness - correctness_score(self.results)) > 1e-12:
            raise ValueError("correctness does not match the guideline counts")

    def failing_keys(self) -> list[str]:
        return [r.key for r in self.results if r.score == 0]


def render_guidelines(suite: GuidelineSuite) -> str:
    lines = [
        "Score each guideline below over the entries it applies to. A guideline",
        "scores 1 only when every checked entry satisfies it.",
    ]
    lines += [f"- {key}: {description}" for key, description in suite.guidelines]
    return "\n".join(lines)


_EVAL_OVERVIEW = (
    "You are a networking configuration assistant and evaluation expert. Assess "
    "whether the extraction output below complies with each evaluation guideline, "
    "counting the entries you checked and how many of them are correct."
)

_EVAL_RESPONSE = """\
Return one JSON object, no prose, with one key per guideline name listed above
plus "overall_comment":
{
  "<guideline name>": {
    "score": <1 when every checked entry satisfies the guideline, else 0>,
    "num_checked": <number of entries checked, including empty cases>,
    "num_correct": <number of checked entries that satisfy the guideline>,
    "reason": ["<explanation of each violation>"]
  },
  "overall_comment": "<summary of the main issues and suggested prompt improvements>"
}"""

_INPUT_LABELS = {"roadmap": "Roadmap", "procedure": "Procedure"}


def assemble_eval_prompt(
    suite: GuidelineSuite,
    source_inputs: dict[str, str],
    extraction_output: str,
    examples: str | None = None,
) -> str:
    """Build the judge prompt for one task's extraction output."""
    for name in _REQUIRED_INPUTS[suite.task]:
        if name not in source_inputs:
            raise MissingInput(name)
    if examples is not None and suite.task is not Task.PROCEDURE:
        raise ValueError("examples are only used for procedure evaluation")

    input_blocks = [
        f"[{_INPUT_LABELS[name]}]\n{source_inputs[name]}"
        for name in _REQUIRED_INPUTS[suite.task]
    ]
    input_blocks.append(f"[Extraction Output]\n{extraction_output}")

    blocks = [
        f"<Overview>\n{_EVAL_OVERVIEW}",
        f"<Evaluation Guidelines>\n{render_guidelines(suite)}",
    ]
    if examples is not None:
        blocks.append(f"<Examples>\n{examples}")
    blocks.append("<Inputs>\n" + "\n\n".join(input_blocks))
    blocks.append(f"<Response>\n{_EVAL_RESPONSE}")
    return "\n\n".join(blocks)


def _parse_result(key: str, obj, path: str) -> GuidelineResult:
    if not isinstance(obj, dict):
        raise ParseFailure("guideline verdict must be a JSON object", path=path)
    for name in ("num_checked", "num_correct"):
        if name not in obj or not isinstance(obj[name], int) or isinstance(obj[name], bool):
            raise ParseFailure(f"missing or non-integer {name!r}", path=path)
    checked, correct = obj["num_checked"], obj["num_correct"]
    if checked < 0 or correct < 0 or correct > checked:
        raise ParseFailure("invalid entry counts", path=path)

    derived = 1 if correct == checked else 0
    score = obj.get("score", derived)
    if score not in (0, 1):
        raise ParseFailure("score must be 0 or 1", path=path)
    if score != derived:
        # Counts are authoritative for the correctness score; recompute.
        logger.warning(
            "%s: score %s inconsistent with counts %d/%d, using counts",
            path, score, correct, checked,
        )
        score = derived

    reasons = obj.get("reason", [])
    if isinstance(reasons, str):
        reasons = [reasons]
    if not isinstance(reasons, list) or not all(isinstance(r, str) for r in reasons):
        raise ParseFailure("reason must be a string or list of strings", path=path)
    return GuidelineResult(key, score, checked, correct, reasons)


def parse_judge_response(text: str, suite: GuidelineSuite) -> tuple[list[GuidelineResult], str]:
    try:
        payload = json.loads(strip_code_fence(text))
    except json.JSONDecodeError as exc:
        raise ParseFailure(f"invalid JSON: {exc.msg}", position=exc.pos) from exc
    if not isinstance(payload, dict):
        raise ParseFailure("judge output must be a JSON object")

    unknown = set(payload) - set(suite.keys) - {"overall_comment"}
    if unknown:
        raise ParseFailure(f"unexpected keys in judge output: {sorted(unknown)}")
    results = []
    for key in suite.keys:
        if key not in payload:
            raise MissingGuideline(key)
        results.append(_parse_result(key, payload[key], key))
    comment = payload.get("overall_comment", "")
    if not isinstance(comment, str):
        raise ParseFailure("overall_comment must be a string", path="overall_comment")
    return results, comment


def evaluate(
    provider: ChatProvider,
    suite: GuidelineSuite,
    source_inputs: dict[str, str],
    extraction_output: str,
    *,
    examples: str | None = None,
    tag: str | None = None,
    model: str = "default",
) -> EvaluationReport:
    """Run the judge over one extraction output and compute its score."""
    prompt = assemble_eval_prompt(suite, source_inputs, extraction_output, examples)
    tag = tag or f"judge:{suite.task.value}"
    response = provider.complete(ChatRequest(user_text=prompt, tag=tag, model_name=model))
    try:
        results, comment = parse_judge_response(response.text, suite)
    except ParseFailure as first:
        logger.warning("judge parse failure for %s, retrying once: %s", tag, first)
        retry = provider.complete(
            ChatRequest(
                user_text=f"{prompt}\n\n{REPAIR_INSTRUCTION}", tag=tag, model_name=model
            )
        )
        results, comment = parse_judge_response(retry.text, suite)
    return EvaluationReport(
        task=suite.task,
        results=results,
        overall_comment=comment,
        correctness=correctness_score(results),
    )


# -- persistence ---------------------------------------------------------------

def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "task": report.task.value,
        "results": [
            {
                "key": r.key,
                "score": r.score,
                "num_checked": r.num_checked,
                "num_correct": r.num_correct,
                "reason": list(r.reasons),
            }
            for r in report.results
        ],
        "overall_comment": report.overall_comment,
        "correctness": report.correctness,
    }


def report_from_dict(obj: dict) -> EvaluationReport:
    try:
        results = [
            GuidelineResult(
                key=r["key"],
                score=r["score"],
                num_checked=r["num_checked"],
                num_correct=r["num_correct"],
                reasons=list(r.get("reason", [])),
            )
            for r in obj["results"]
        ]
        return EvaluationReport(
            task=Task(obj["task"]),
            results=results,
            overall_comment=obj.get("overall_comment", ""),
            correctness=obj["correctness"],
        )
    except (KeyError, TypeError) as exc:
        raise ParseFailure(f"invalid evaluation report: {exc}") from exc


def save_report(report: EvaluationReport, path: str | Path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(report_to_dict(report), indent=2, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise IoError(f"cannot write report {path}: {exc}") from exc


def load_report(path: str | Path) -> EvaluationReport:
    path = Path(path)
    try:
        obj = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(f"cannot read report {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseFailure(f"invalid report JSON in {path}: {exc.msg}") from exc
    return report_from_dict(obj)
