"""Parsing of model output into validated extraction values.

The model-facing JSON uses different field names per task and nesting level
(and historically inconsistent casing); this parser accepts those variants,
normalizes string-or-list values to lists, validates hierarchical step
numbers against tree positions, and synthesizes positional numbers where the
output omits them.
"""

from __future__ import annotations

import json
import re

from ..errors import ParseFailure
from .types import (
    MappingEntry,
    MappingMatch,
    ProcedureExtraction,
    ProcedureStep,
    RoadmapExtraction,
    RoadmapStep,
    Task,
)

_FENCE_RE = re.compile(
    r"\A\s*```[A-Za-z0-9_-]*[ \t]*\r?\n(.*)\r?\n\s*```\s*\Z", re.DOTALL
)


def strip_code_fence(text: str) -> str:
    """Remove a single Markdown code fence wrapping the whole payload."""
    m = _FENCE_RE.match(text)
    return m.group(1) if m else text


def _norm_key(key: str) -> str:
    norm = re.sub(r"[\s_]+", " ", key).strip().lower()
    return {"expectedoutput": "expected output", "expectedoutputs": "expected output"}.get(
        norm, norm
    )


def _normalized(obj: dict, path: str) -> dict:
    out: dict = {}
    for key, value in obj.items():
        norm = _norm_key(str(key))
        if norm in out:
            raise ParseFailure(f"duplicate field {key!r}", path=path)
        out[norm] = value
    return out


def _get_text(fields: dict, names: tuple[str, ...], path: str, label: str) -> str:
    for name in names:
        if name in fields:
            value = fields[name]
            if not isinstance(value, str):
                raise ParseFailure(f"{label} must be a string", path=path)
            return value
    raise ParseFailure(f"missing required field {label!r}", path=path)


def _get_str_list(fields: dict, names: tuple[str, ...], path: str) -> list[str]:
    """Accept a bare string or a list of strings; absent means empty."""
    for name in names:
        if name not in fields:
            continue
        value = fields[name]
        if value is None:
            return []
        if isinstance(value, str):
            return [value]
        if isinstance(value, list) and all(isinstance(v, str) for v in value):
            return list(value)
        raise ParseFailure(
            f"field {name!r} must be a string or a list of strings", path=path
        )
    return []


def _get_list(fields: dict, names: tuple[str, ...], path: str) -> list:
    for name in names:
        if name not in fields:
            continue
        value = fields[name]
        if value is None:
            return []
        if not isinstance(value, list):
            raise ParseFailure(f"field {name!r} must be a list", path=path)
        return value
    return []


def _check_number(
    fields: dict, names: tuple[str, ...], expected: str, path: str
) -> None:
    """Validate a provided step number against the tree-derived one."""
    for name in names:
        if name in fields and fields[name] not in (None, ""):
            provided = str(fields[name]).strip()
            if provided != expected:
                raise ParseFailure(
                    f"step number {provided!r} does not match position-derived "
                    f"{expected!r}",
                    path=path,
                )
            return


def _load_payload(text: str):
    stripped = strip_code_fence(text)
    try:
        return json.loads(stripped)
    except json.JSONDecodeError as exc:
        raise ParseFailure(f"invalid JSON: {exc.msg}", position=exc.pos) from exc


# -- roadmap -----------------------------------------------------------------

def _parse_roadmap_step(obj, expected_no: str, path: str) -> RoadmapStep:
    if not isinstance(obj, dict):
        raise ParseFailure("step entry must be a JSON object", path=path)
    fields = _normalized(obj, path)
    text = _get_text(fields, ("step",), path, "step")
    _check_number(fields, ("step no",), expected_no, path)
    subs = _get_list(fields, ("sub steps", "substeps"), path)
    sub_steps = [
        _parse_roadmap_step(s, f"{expected_no}.{i + 1}", f"{path}.sub_steps[{i}]")
        for i, s in enumerate(subs)
    ]
    return RoadmapStep(
        step_text=text,
        step_no=expected_no,
        goals=_get_str_list(fields, ("goal", "goals"), path),
        notes=_get_str_list(fields, ("note", "notes"), path),
        sub_steps=sub_steps,
    )


def _parse_roadmap(payload) -> RoadmapExtraction:
    if not isinstance(payload, dict):
        raise ParseFailure("roadmap output must be a JSON object")
    fields = _normalized(payload, "$")
    unknown = set(fields) - {"context", "steps"}
    if unknown:
        raise ParseFailure(f"unexpected top-level keys: {sorted(unknown)}")
    context = fields.get("context", "")
    if not isinstance(context, str):
        raise ParseFailure("context must be a string", path="context")
    if "steps" not in fields or not isinstance(fields["steps"], list):
        raise ParseFailure("missing required field 'steps' (list)")
    steps = [
        _parse_roadmap_step(s, str(i + 1), f"steps[{i}]")
        for i, s in enumerate(fields["steps"])
    ]
    return RoadmapExtraction(context=context, steps=steps)


# -- mapping -----------------------------------------------------------------

def _parse_mapping_match(obj, path: str) -> MappingMatch:
    if not isinstance(obj, dict):
        raise ParseFailure("match entry must be a JSON object", path=path)
    fields = _normalized(obj, path)
    no = _get_text(fields, ("procedure main step no",), path, "Procedure Main STEP No")
    content = _get_text(
        fields, ("procedure main step content",), path, "Procedure Main STEP Content"
    )
    try:
        return MappingMatch(no.strip(), content)
    except ValueError as exc:
        raise ParseFailure(str(exc), path=path) from exc


def _parse_mapping(payload) -> list[MappingEntry]:
    if not isinstance(payload, list):
        raise ParseFailure("mapping output must be a JSON array")
    entries = []
    for i, obj in enumerate(payload):
        path = f"[{i}]"
        if not isinstance(obj, dict):
            raise ParseFailure("mapping entry must be a JSON object", path=path)
        fields = _normalized(obj, path)
        text = _get_text(fields, ("step in roadmap",), path, "STEP in Roadmap")
        no = _get_text(fields, ("step no",), path, "STEP No")
        matches = [
            _parse_mapping_match(m, f"{path}.matches[{j}]")
            for j, m in enumerate(
                _get_list(fields, ("matching steps in procedures",), path)
            )
        ]
        try:
            entries.append(MappingEntry(no.strip(), text, matches))
        except ValueError as exc:
            raise ParseFailure(str(exc), path=path) from exc
    return entries


# -- procedure ---------------------------------------------------------------

_PROC_TEXT_KEYS = {
    1: ("main step",),
    2: ("sub step", "substep"),
    3: ("sub sub step", "sub step", "substep"),
}
_PROC_NO_KEYS = {
    1: ("step no",),
    2: ("sub step no", "substep no"),
    3: ("sub sub step no", "sub step no", "substep no"),
}
_PROC_CHILD_KEYS = {
    1: ("sub steps", "substeps"),
    2: ("sub sub steps", "subsubsteps", "sub substeps"),
}


def _parse_procedure_step(obj, expected_no: str, level: int, path: str) -> ProcedureStep:
    if not isinstance(obj, dict):
        raise ParseFailure("procedure step must be a JSON object", path=path)
    fields = _normalized(obj, path)
    text = _get_text(fields, _PROC_TEXT_KEYS[level], path, _PROC_TEXT_KEYS[level][0])
    _check_number(fields, _PROC_NO_KEYS[level], expected_no, path)
    if level < 3:
        children = _get_list(fields, _PROC_CHILD_KEYS[level], path)
    else:
        if _get_list(fields, ("sub sub steps", "sub steps", "substeps"), path):
            raise ParseFailure("steps nest at most three levels deep", path=path)
        children = []
    sub_steps = [
        _parse_procedure_step(
            c, f"{expected_no}.{i + 1}", level + 1, f"{path}.sub_steps[{i}]"
        )
        for i, c in enumerate(children)
    ]
    return ProcedureStep(
        content=text,
        step_no=expected_no,
        commands=_get_str_list(fields, ("command", "commands"), path),
        expected_outputs=_get_str_list(fields, ("expected output",), path),
        notes=_get_str_list(fields, ("note", "notes"), path),
        sub_steps=sub_steps,
    )


def _infer_root_no(obj: dict) -> str:
    """Derive the main step number from the first numbered sub-step, if any."""
    if isinstance(obj, dict):
        fields = _normalized(obj, "$")
        for child in _get_list(fields, _PROC_CHILD_KEYS[1], "$"):
            if not isinstance(child, dict):
                continue
            sub = _normalized(child, "$")
            for name in _PROC_NO_KEYS[2]:
                value = sub.get(name)
                if isinstance(value, str) and "." in value:
                    prefix = value.split(".", 1)[0].strip()
                    if prefix.isdigit():
                        return prefix
    return "1"


def _parse_procedure(payload, main_step_no: int | None) -> ProcedureExtraction:
    if isinstance(payload, list):
        steps = [
            _parse_procedure_step(obj, str(i + 1), 1, f"[{i}]")
            for i, obj in enumerate(payload)
        ]
        return ProcedureExtraction(main_steps=steps)
    if isinstance(payload, dict):
        root_no = str(main_step_no) if main_step_no is not None else _infer_root_no(payload)
        step = _parse_procedure_step(payload, root_no, 1, "$")
        return ProcedureExtraction(main_steps=[step])
    raise ParseFailure("procedure output must be a JSON object or array")


def parse_wire_json(text: str, task: Task, *, main_step_no: int | None = None):
    """Parse model output text for the given task into a validated value.

    Returns RoadmapExtraction, list[MappingEntry] or ProcedureExtraction. A
    single Markdown code fence around the JSON is tolerated. For the
    procedure task, a JSON object is one main step (numbered by
    ``main_step_no`` when given, else inferred) and a JSON array is a full
    merged extraction.
    """
    payload = _load_payload(text)
    if task is Task.ROADMAP:
        return _parse_roadmap(payload)
    if task is Task.MAPPING:
        return _parse_mapping(payload)
    return _parse_procedure(payload, main_step_no)
