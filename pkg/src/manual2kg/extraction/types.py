"""Domain types for the three extraction tasks and their wire serialization.

Canonical values use snake_case fields and lists everywhere; ``to_wire``
reproduces the model-facing JSON field names, which differ per task and
nesting level. Treat all values as immutable after construction.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum

_DOTTED_RE = re.compile(r"\d+(\.\d+)*")
_SINGLE_RE = re.compile(r"\d+")


class Task(str, Enum):
    ROADMAP = "roadmap"
    MAPPING = "mapping"
    PROCEDURE = "procedure"


@dataclass(frozen=True)
class PromptTemplate:
    """A versioned extraction prompt, stored as named sections.

    Version 0 is the original prompt; every later version records its parent
    and the evaluation feedback that produced it.
    """

    task: Task
    sections: dict[str, str]
    input_slots: tuple[str, ...]
    version: int = 0
    parent_version: int | None = None
    provenance: str | None = None

    _REQUIRED = ("overview", "guidelines", "response")
    _KNOWN = ("overview", "guidelines", "examples", "response")

    def __post_init__(self):
        if self.version < 0:
            raise ValueError("version must be >= 0")
        if self.version == 0 and self.parent_version is not None:
            raise ValueError("version 0 cannot have a parent")
        if self.version > 0 and self.parent_version != self.version - 1:
            raise ValueError("version v must have parent_version v-1")
        unknown = set(self.sections) - set(self._KNOWN)
        if unknown:
            raise ValueError(f"unknown prompt sections: {sorted(unknown)}")
        for name in self._REQUIRED:
            if not self.sections.get(name, "").strip():
                raise ValueError(f"prompt section {name!r} must be non-empty")
        if self.task is Task.PROCEDURE and not self.sections.get("examples", "").strip():
            raise ValueError("procedure templates must carry an examples section")


@dataclass(frozen=True)
class RoadmapStep:
    """One roadmap step: verbatim text plus extracted goals and notes."""

    step_text: str
    step_no: str
    goals: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    sub_steps: list["RoadmapStep"] = field(default_factory=list)

    def __post_init__(self):
        if not _DOTTED_RE.fullmatch(self.step_no):
            raise ValueError(f"invalid step number: {self.step_no!r}")

    def to_wire(self) -> dict:
        return {
            "step": self.step_text,
            "step No": self.step_no,
            "goal": list(self.goals),
            "note": list(self.notes),
            "sub_steps": [s.to_wire() for s in self.sub_steps],
        }


@dataclass(frozen=True)
class RoadmapExtraction:
    """Parsed output of the roadmap extraction task."""

    context: str
    steps: list[RoadmapStep]

    def to_wire(self) -> dict:
        return {"context": self.context, "steps": [s.to_wire() for s in self.steps]}

    def to_canonical_json(self) -> str:
        return json.dumps(self.to_wire(), indent=2, ensure_ascii=False)


@dataclass(frozen=True)
class MappingMatch:
    procedure_main_step_no: str
    procedure_main_step_content: str

    def __post_init__(self):
        if not _SINGLE_RE.fullmatch(self.procedure_main_step_no):
            raise ValueError(
                f"procedure main step number must be a single component: "
                f"{self.procedure_main_step_no!r}"
            )


@dataclass(frozen=True)
class MappingEntry:
    """One roadmap main step and the procedure main steps it maps to."""

    roadmap_step_no: str
    roadmap_step_text: str
    matches: list[MappingMatch]

    def __post_init__(self):
        if not _SINGLE_RE.fullmatch(self.roadmap_step_no):
            raise ValueError(
                f"roadmap main step number must be a single component: "
                f"{self.roadmap_step_no!r}"
            )
        if not self.matches:
            raise ValueError(
                f"roadmap step {self.roadmap_step_no} must map to at least one "
                f"procedure main step"
            )

    def to_wire(self) -> dict:
        return {
            "STEP in Roadmap": self.roadmap_step_text,
            "STEP No": self.roadmap_step_no,
            "Matching STEPs in Procedures": [
                {
                    "Procedure Main STEP No": m.procedure_main_step_no,
                    "Procedure Main STEP Content": m.procedure_main_step_content,
                }
                for m in self.matches
            ],
        }


def mapping_to_canonical_json(entries: list[MappingEntry]) -> str:
    return json.dumps([e.to_wire() for e in entries], indent=2, ensure_ascii=False)


@dataclass(frozen=True)
class ProcedureStep:
    """One procedure step with commands, expected outputs, notes and children.

    Nesting is limited to three levels: main step, sub-step, sub-sub-step.
    """

    content: str
    step_no: str
    commands: list[str] = field(default_factory=list)
    expected_outputs: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    sub_steps: list["ProcedureStep"] = field(default_factory=list)

    def __post_init__(self):
        if not _DOTTED_RE.fullmatch(self.step_no):
            raise ValueError(f"invalid step number: {self.step_no!r}")
        if self.depth() > 3:
            raise ValueError("procedure steps nest at most three levels deep")

    def depth(self) -> int:
        return 1 + max((s.depth() for s in self.sub_steps), default=0)

    def to_wire(self, level: int = 1) -> dict:
        if level == 1:
            text_key, no_key, out_key, child_key = (
                "main_step", None, "expectedOutput", "sub_steps",
            )
        elif level == 2:
            text_key, no_key, out_key, child_key = (
                "sub_step", "sub_step_No", "expected_Output", "sub_sub_steps",
            )
        else:
            text_key, no_key, out_key, child_key = (
                "sub_sub_step", "sub_sub_step_No", "expected_Output", None,
            )
        wire: dict = {}
        if no_key:
            wire[no_key] = self.step_no
        wire[text_key] = self.content
        wire["command"] = list(self.commands)
        wire[out_key] = list(self.expected_outputs)
        wire["note"] = list(self.notes)
        if child_key:
            wire[child_key] = [s.to_wire(level + 1) for s in self.sub_steps]
        return wire


@dataclass(frozen=True)
class ProcedureExtraction:
    """Merged output of the procedure extraction task, one root per main step."""

    main_steps: list[ProcedureStep]

    def __post_init__(self):
        for step in self.main_steps:
            if "." in step.step_no:
                raise ValueError(f"main step number must be a single component: {step.step_no!r}")

    def to_wire(self) -> list[dict]:
        return [s.to_wire(level=1) for s in self.main_steps]

    def to_canonical_json(self) -> str:
        return json.dumps(self.to_wire(), indent=2, ensure_ascii=False)


def canonical_json_for(task: Task, value) -> str:
    """Serialize any task's extraction value to its canonical JSON text."""
    if task is Task.MAPPING:
        return mapping_to_canonical_json(value)
    return value.to_canonical_json()
