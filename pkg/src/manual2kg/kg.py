"""Typed triple graphs: schema, conversion, validation and persistence.

Accepted extraction values convert deterministically into triples over a
closed relation set. Step nodes carry hierarchical ids derived from their
tree path (roadmap step 1.2 -> R_1_2, procedure sub-sub-step 4.1.1 ->
P_4_1_1); goals, notes, commands, outputs and contents are stored as plain
literals. Graph enhancement links the section-level entities to the use-case
scenario node. The conversion is lossless: the step hierarchy can be rebuilt
from the triples.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from urllib.parse import quote

from .errors import CorruptGraph, IoError
from .extraction.types import (
    MappingEntry,
    ProcedureExtraction,
    ProcedureStep,
    RoadmapExtraction,
    RoadmapStep,
)
from .ingest import CONFIG_FILES_SECTION, NETWORKING_SECTION, SectionChunk

logger = logging.getLogger(__name__)

GRAPH_FORMAT = "manual2kg-triples"
GRAPH_FORMAT_VERSION = 1


class Relation(str, Enum):
    HAS_ROADMAP = "hasRoadmap"
    HAS_PROCEDURE = "hasProcedure"
    HAS_CONFIGURATION_FILE = "hasConfigurationFile"
    HAS_NETWORKING_REQUIREMENTS = "hasNetworkingRequirements"
    HAS_CONTEXT = "hasContext"
    HAS_CONTENT = "hasContent"
    HAS_STEP = "hasStep"
    HAS_SUB_STEP = "hasSubStep"
    HAS_GOAL = "hasGoal"
    HAS_NOTE = "hasNote"
    HAS_COMMAND = "hasCommand"
    HAS_EXPECTED_OUTPUT = "hasExpectedOutput"
    MAPS_TO = "mapsTo"


# Accepted on load and normalized to the canonical singular form.
_RELATION_ALIASES = {"hasConfigurationFiles": Relation.HAS_CONFIGURATION_FILE}


class NodeKind(str, Enum):
    USE_CASE_SCENARIO = "UseCaseScenario"
    ROADMAP = "Roadmap"
    PROCEDURE = "Procedure"
    ROADMAP_STEP = "RoadmapStep"
    PROCEDURE_STEP = "ProcedureStep"
    NETWORKING_REQUIREMENTS = "NetworkingRequirements"
    CONFIGURATION_FILES = "ConfigurationFiles"
    LITERAL = "Literal"


_STEP_ID_RES = {
    NodeKind.ROADMAP_STEP: re.compile(r"R(_[0-9]+)+"),
    NodeKind.PROCEDURE_STEP: re.compile(r"P(_[0-9]+)+"),
}


@dataclass(frozen=True)
class NodeId:
    kind: NodeKind
    id: str

    def depth(self) -> int:
        """Number of numeric path components for step nodes, else 0."""
        if self.kind in _STEP_ID_RES:
            return len(self.id.split("_")) - 1
        return 0


ROADMAP_NODE = NodeId(NodeKind.ROADMAP, "Roadmap")
PROCEDURE_NODE = NodeId(NodeKind.PROCEDURE, "Procedure")
NETWORKING_NODE = NodeId(NodeKind.NETWORKING_REQUIREMENTS, "NetworkingRequirements")
CONFIG_FILES_NODE = NodeId(NodeKind.CONFIGURATION_FILES, "ConfigurationFiles")


def roadmap_step_node(step_no: str) -> NodeId:
    return NodeId(NodeKind.ROADMAP_STEP, "R_" + step_no.replace(".", "_"))


def procedure_step_node(step_no: str) -> NodeId:
    return NodeId(NodeKind.PROCEDURE_STEP, "P_" + step_no.replace(".", "_"))


def use_case_node(title: str) -> NodeId:
    return NodeId(NodeKind.USE_CASE_SCENARIO, title)


@dataclass(frozen=True)
class Triple:
    """Subject-relation-object; the object is a node or a literal string."""

    subject: NodeId
    relation: Relation
    obj: NodeId | str

    def __post_init__(self):
        if self.subject.kind is NodeKind.LITERAL:
            raise ValueError("a literal cannot be a triple subject")


@dataclass(frozen=True)
class KnowledgeGraph:
    """Insertion-ordered, duplicate-free triple set for one manual."""

    manual_id: str
    triples: tuple[Triple, ...]

    @classmethod
    def from_triples(cls, manual_id: str, triples) -> KnowledgeGraph:
        seen: set[Triple] = set()
        unique = []
        for t in triples:
            if t not in seen:
                seen.add(t)
                unique.append(t)
        return cls(manual_id=manual_id, triples=tuple(unique))

    def with_triples(self, extra) -> KnowledgeGraph:
        return KnowledgeGraph.from_triples(self.manual_id, list(self.triples) + list(extra))

    def nodes(self) -> list[NodeId]:
        seen: dict[NodeId, None] = {}
        for t in self.triples:
            seen.setdefault(t.subject)
            if isinstance(t.obj, NodeId):
                seen.setdefault(t.obj)
        return list(seen)

    def objects_of(self, subject: NodeId, relation: Relation) -> list[NodeId | str]:
        return [t.obj for t in self.triples if t.subject == subject and t.relation == relation]

    def literal_of(self, subject: NodeId, relation: Relation) -> str | None:
        for obj in self.objects_of(subject, relation):
            if isinstance(obj, str):
                return obj
        return None


# -- conversion --------------------------------------------------------------

def _step_subtree_triples(
    node: NodeId,
    content: str,
    goals: list[str],
    notes: list[str],
    commands: list[str],
    outputs: list[str],
    children: list[tuple[NodeId, object]],
) -> list[Triple]:
    triples = [Triple(node, Relation.HAS_CONTENT, content)]
    triples += [Triple(node, Relation.HAS_GOAL, g) for g in goals]
    triples += [Triple(node, Relation.HAS_NOTE, n) for n in notes]
    triples += [Triple(node, Relation.HAS_COMMAND, c) for c in commands]
    triples += [Triple(node, Relation.HAS_EXPECTED_OUTPUT, o) for o in outputs]
    for child_node, child_triples in children:
        triples.append(Triple(node, Relation.HAS_SUB_STEP, child_node))
        triples += child_triples
    return triples


def _roadmap_step_triples(step: RoadmapStep) -> list[Triple]:
    node = roadmap_step_node(step.step_no)
    children = [
        (roadmap_step_node(s.step_no), _roadmap_step_triples(s)) for s in step.sub_steps
    ]
    return _step_subtree_triples(node, step.step_text, step.goals, step.notes, [], [], children)


def roadmap_to_triples(extraction: RoadmapExtraction) -> list[Triple]:
    """Deterministic conversion of a roadmap extraction into triples."""
    triples: list[Triple] = []
    if extraction.context:
        triples.append(Triple(ROADMAP_NODE, Relation.HAS_CONTEXT, extraction.context))
    for step in extraction.steps:
        triples.append(Triple(ROADMAP_NODE, Relation.HAS_STEP, roadmap_step_node(step.step_no)))
        triples += _roadmap_step_triples(step)
    return triples


def mapping_to_triples(entries: list[MappingEntry]) -> list[Triple]:
    """One mapsTo triple per (roadmap step, procedure step) pair, deduplicated."""
    pairs = sorted(
        {
            (int(e.roadmap_step_no), int(m.procedure_main_step_no))
            for e in entries
            for m in e.matches
        }
    )
    return [
        Triple(roadmap_step_node(str(r)), Relation.MAPS_TO, procedure_step_node(str(p)))
        for r, p in pairs
    ]


def _procedure_step_triples(step: ProcedureStep) -> list[Triple]:
    node = procedure_step_node(step.step_no)
    children = [
        (procedure_step_node(s.step_no), _procedure_step_triples(s)) for s in step.sub_steps
    ]
    return _step_subtree_triples(
        node, step.content, [], step.notes, step.commands, step.expected_outputs, children
    )


def procedure_to_triples(extraction: ProcedureExtraction) -> list[Triple]:
    triples: list[Triple] = []
    for step in extraction.main_steps:
        triples.append(
            Triple(PROCEDURE_NODE, Relation.HAS_STEP, procedure_step_node(step.step_no))
        )
        triples += _procedure_step_triples(step)
    return triples


def enhance_graph(
    kg: KnowledgeGraph, sections: dict[str, SectionChunk], title: str
) -> KnowledgeGraph:
    """Link the use-case scenario node to the graph and supplementary sections.

    Adds the scenario node (named by the manual title) with edges to the
    roadmap and procedure, and, when the sections exist, to literal-bearing
    networking-requirements and configuration-files nodes. Idempotent.
    """
    scenario = use_case_node(title)
    extra = [
        Triple(scenario, Relation.HAS_ROADMAP, ROADMAP_NODE),
        Triple(scenario, Relation.HAS_PROCEDURE, PROCEDURE_NODE),
    ]
    for section_name, relation, node in (
        (NETWORKING_SECTION, Relation.HAS_NETWORKING_REQUIREMENTS, NETWORKING_NODE),
        (CONFIG_FILES_SECTION, Relation.HAS_CONFIGURATION_FILE, CONFIG_FILES_NODE),
    ):
        chunk = sections.get(section_name)
        if chunk is None:
            logger.warning("%s: no %r section; edge skipped", kg.manual_id, section_name)
            continue
        extra.append(Triple(scenario, relation, node))
        extra.append(Triple(node, Relation.HAS_CONTENT, chunk.body))
    return kg.with_triples(extra)


# -- reconstruction ----------------------------------------------------------

def _numeric_path(node: NodeId) -> tuple[int, ...]:
    return tuple(int(p) for p in node.id.split("_")[1:])


def _literals(kg: KnowledgeGraph, subject: NodeId, relation: Relation) -> list[str]:
    return [o for o in kg.objects_of(subject, relation) if isinstance(o, str)]


def _children(kg: KnowledgeGraph, subject: NodeId) -> list[NodeId]:
    kids = [o for o in kg.objects_of(subject, Relation.HAS_SUB_STEP) if isinstance(o, NodeId)]
    return sorted(kids, key=_numeric_path)


def _rebuild_roadmap_step(kg: KnowledgeGraph, node: NodeId) -> RoadmapStep:
    return RoadmapStep(
        step_text=kg.literal_of(node, Relation.HAS_CONTENT) or "",
        step_no=".".join(str(p) for p in _numeric_path(node)),
        goals=_literals(kg, node, Relation.HAS_GOAL),
        notes=_literals(kg, node, Relation.HAS_NOTE),
        sub_steps=[_rebuild_roadmap_step(kg, c) for c in _children(kg, node)],
    )


def roadmap_from_triples(kg: KnowledgeGraph) -> RoadmapExtraction:
    """Inverse of roadmap_to_triples for graphs produced by this pipeline."""
    tops = sorted(
        (o for o in kg.objects_of(ROADMAP_NODE, Relation.HAS_STEP) if isinstance(o, NodeId)),
        key=_numeric_path,
    )
    return RoadmapExtraction(
        context=kg.literal_of(ROADMAP_NODE, Relation.HAS_CONTEXT) or "",
        steps=[_rebuild_roadmap_step(kg, t) for t in tops],
    )


def _rebuild_procedure_step(kg: KnowledgeGraph, node: NodeId) -> ProcedureStep:
    return ProcedureStep(
        content=kg.literal_of(node, Relation.HAS_CONTENT) or "",
        step_no=".".join(str(p) for p in _numeric_path(node)),
        commands=_literals(kg, node, Relation.HAS_COMMAND),
        expected_outputs=_literals(kg, node, Relation.HAS_EXPECTED_OUTPUT),
        notes=_literals(kg, node, Relation.HAS_NOTE),
        sub_steps=[_rebuild_procedure_step(kg, c) for c in _children(kg, node)],
    )


def procedure_from_triples(kg: KnowledgeGraph) -> ProcedureExtraction:
    tops = sorted(
        (o for o in kg.objects_of(PROCEDURE_NODE, Relation.HAS_STEP) if isinstance(o, NodeId)),
        key=_numeric_path,
    )
    return ProcedureExtraction(main_steps=[_rebuild_procedure_step(kg, t) for t in tops])


# -- validation ----------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    rule: str
    message: str


_LITERAL = "literal"

# relation -> (allowed subject kinds, allowed object kinds or literal)
_SCHEMA: dict[Relation, tuple[set[NodeKind], set[NodeKind] | str]] = {
    Relation.HAS_ROADMAP: ({NodeKind.USE_CASE_SCENARIO}, {NodeKind.ROADMAP}),
    Relation.HAS_PROCEDURE: ({NodeKind.USE_CASE_SCENARIO}, {NodeKind.PROCEDURE}),
    Relation.HAS_CONFIGURATION_FILE: (
        {NodeKind.USE_CASE_SCENARIO},
        {NodeKind.CONFIGURATION_FILES},
    ),
    Relation.HAS_NETWORKING_REQUIREMENTS: (
        {NodeKind.USE_CASE_SCENARIO},
        {NodeKind.NETWORKING_REQUIREMENTS},
    ),
    Relation.HAS_CONTEXT: ({NodeKind.ROADMAP}, _LITERAL),
    Relation.HAS_CONTENT: (
        {
            NodeKind.ROADMAP_STEP,
            NodeKind.PROCEDURE_STEP,
            NodeKind.NETWORKING_REQUIREMENTS,
            NodeKind.CONFIGURATION_FILES,
        },
        _LITERAL,
    ),
    Relation.HAS_STEP: (
        {NodeKind.ROADMAP, NodeKind.PROCEDURE},
        {NodeKind.ROADMAP_STEP, NodeKind.PROCEDURE_STEP},
    ),
    Relation.HAS_SUB_STEP: (
        {NodeKind.ROADMAP_STEP, NodeKind.PROCEDURE_STEP},
        {NodeKind.ROADMAP_STEP, NodeKind.PROCEDURE_STEP},
    ),
    Relation.HAS_GOAL: ({NodeKind.ROADMAP_STEP}, _LITERAL),
    Relation.HAS_NOTE: ({NodeKind.ROADMAP_STEP, NodeKind.PROCEDURE_STEP}, _LITERAL),
    Relation.HAS_COMMAND: ({NodeKind.PROCEDURE_STEP}, _LITERAL),
    Relation.HAS_EXPECTED_OUTPUT: ({NodeKind.PROCEDURE_STEP}, _LITERAL),
    Relation.MAPS_TO: ({NodeKind.ROADMAP_STEP}, {NodeKind.PROCEDURE_STEP}),
}

_STEP_FAMILY = {NodeKind.ROADMAP: NodeKind.ROADMAP_STEP, NodeKind.PROCEDURE: NodeKind.PROCEDURE_STEP}

_FIXED_ID_KINDS = {
    NodeKind.ROADMAP: "Roadmap",
    NodeKind.PROCEDURE: "Procedure",
    NodeKind.NETWORKING_REQUIREMENTS: "NetworkingRequirements",
    NodeKind.CONFIGURATION_FILES: "ConfigurationFiles",
}

_SINGLETON_KINDS = (NodeKind.USE_CASE_SCENARIO, NodeKind.ROADMAP, NodeKind.PROCEDURE)


def _check_node(node: NodeId, out: list[Violation]) -> None:
    pattern = _STEP_ID_RES.get(node.kind)
    if pattern and not pattern.fullmatch(node.id):
        out.append(Violation("id_grammar", f"invalid {node.kind.value} id {node.id!r}"))
    fixed = _FIXED_ID_KINDS.get(node.kind)
    if fixed and node.id != fixed:
        out.append(
            Violation("id_grammar", f"{node.kind.value} node must be named {fixed!r}, got {node.id!r}")
        )
    if node.kind is NodeKind.USE_CASE_SCENARIO and not node.id:
        out.append(Violation("id_grammar", "use-case scenario node has an empty id"))


def validate_graph(kg: KnowledgeGraph) -> list[Violation]:
    """Check the graph against the schema; an empty list means valid."""
    out: list[Violation] = []
    for node in kg.nodes():
        _check_node(node, out)

    parents: dict[NodeId, list[NodeId]] = {}
    sub_edges: dict[NodeId, list[NodeId]] = {}
    for t in kg.triples:
        subjects, objects = _SCHEMA[t.relation]
        if t.subject.kind not in subjects:
            out.append(
                Violation(
                    "endpoint_type",
                    f"{t.relation.value} subject must be one of "
                    f"{sorted(k.value for k in subjects)}, got {t.subject.kind.value}",
                )
            )
        if objects == _LITERAL:
            if not isinstance(t.obj, str):
                out.append(
                    Violation("endpoint_type", f"{t.relation.value} object must be a literal")
                )
            continue
        if not isinstance(t.obj, NodeId) or t.obj.kind not in objects:
            got = t.obj.kind.value if isinstance(t.obj, NodeId) else "literal"
            out.append(
                Violation(
                    "endpoint_type",
                    f"{t.relation.value} object must be one of "
                    f"{sorted(k.value for k in objects)}, got {got}",
                )
            )
            continue

        if t.relation is Relation.HAS_STEP:
            family = _STEP_FAMILY.get(t.subject.kind)
            if family and t.obj.kind is not family:
                out.append(
                    Violation(
                        "step_family",
                        f"{t.subject.kind.value} hasStep must point at {family.value}",
                    )
                )
            if t.obj.depth() != 1:
                out.append(
                    Violation("step_depth", f"hasStep object {t.obj.id} must be a main step")
                )
            parents.setdefault(t.obj, []).append(t.subject)
        elif t.relation is Relation.HAS_SUB_STEP:
            if t.obj.kind is not t.subject.kind:
                out.append(
                    Violation(
                        "step_family",
                        f"hasSubStep must stay within one step family "
                        f"({t.subject.id} -> {t.obj.id})",
                    )
                )
            elif not t.obj.id.startswith(t.subject.id + "_") or t.obj.depth() != t.subject.depth() + 1:
                out.append(
                    Violation(
                        "id_extension",
                        f"hasSubStep child {t.obj.id} must extend parent {t.subject.id} "
                        f"by one component",
                    )
                )
            parents.setdefault(t.obj, []).append(t.subject)
            sub_edges.setdefault(t.subject, []).append(t.obj)
        elif t.relation is Relation.MAPS_TO:
            if t.subject.depth() != 1:
                out.append(
                    Violation("maps_to", f"mapsTo subject {t.subject.id} must be a main step")
                )
            if t.obj.depth() != 1:
                out.append(
                    Violation("maps_to", f"mapsTo object {t.obj.id} must be a main step")
                )

    for child, parent_list in parents.items():
        distinct = sorted({p.id for p in parent_list})
        if len(distinct) > 1:
            out.append(
                Violation(
                    "forest", f"step {child.id} has multiple parents: {distinct}"
                )
            )

    # Cycle detection over the sub-step edges.
    WHITE, GRAY, BLACK = 0, 1, 2
    color: dict[NodeId, int] = {}

    def visit(node: NodeId) -> bool:
        color[node] = GRAY
        for child in sub_edges.get(node, ()):
            state = color.get(child, WHITE)
            if state == GRAY:
                return True
            if state == WHITE and visit(child):
                return True
        color[node] = BLACK
        return False

    for node in list(sub_edges):
        if color.get(node, WHITE) == WHITE and visit(node):
            out.append(Violation("forest", f"sub-step cycle reachable from {node.id}"))

    for kind in _SINGLETON_KINDS:
        ids = sorted({n.id for n in kg.nodes() if n.kind is kind})
        if len(ids) > 1:
            out.append(
                Violation("singleton", f"multiple {kind.value} nodes: {ids}")
            )
    return out


# -- persistence ---------------------------------------------------------------

def _node_to_obj(node: NodeId) -> dict:
    return {"kind": node.kind.value, "id": node.id}


def _obj_to_json(obj: NodeId | str) -> dict:
    if isinstance(obj, str):
        return {"kind": NodeKind.LITERAL.value, "text": obj}
    return _node_to_obj(obj)


def _parse_relation(name, lineno: int) -> Relation:
    if name in _RELATION_ALIASES:
        return _RELATION_ALIASES[name]
    try:
        return Relation(name)
    except ValueError:
        raise CorruptGraph(f"line {lineno}: unknown relation {name!r}") from None


def _parse_node(obj, lineno: int, *, allow_literal: bool) -> NodeId | str:
    if not isinstance(obj, dict) or "kind" not in obj:
        raise CorruptGraph(f"line {lineno}: malformed node object")
    try:
        kind = NodeKind(obj["kind"])
    except ValueError:
        raise CorruptGraph(f"line {lineno}: unknown node kind {obj['kind']!r}") from None
    if kind is NodeKind.LITERAL:
        if not allow_literal:
            raise CorruptGraph(f"line {lineno}: literal in subject position")
        if not isinstance(obj.get("text"), str):
            raise CorruptGraph(f"line {lineno}: literal missing text")
        return obj["text"]
    if not isinstance(obj.get("id"), str):
        raise CorruptGraph(f"line {lineno}: node missing id")
    return NodeId(kind, obj["id"])


def save_graph(kg: KnowledgeGraph, path: str | Path) -> None:
    """Write the graph as JSON lines: a header then one triple per line."""
    path = Path(path)
    lines = [
        json.dumps(
            {"manual_id": kg.manual_id, "format": GRAPH_FORMAT, "version": GRAPH_FORMAT_VERSION},
            ensure_ascii=False,
        )
    ]
    for t in kg.triples:
        lines.append(
            json.dumps(
                {"s": _node_to_obj(t.subject), "r": t.relation.value, "o": _obj_to_json(t.obj)},
                ensure_ascii=False,
            )
        )
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write graph {path}: {exc}") from exc


def load_graph(path: str | Path) -> KnowledgeGraph:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read graph {path}: {exc}") from exc
    lines = [line for line in text.splitlines() if line.strip()]
    if not lines:
        raise CorruptGraph(f"{path}: empty graph file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptGraph(f"line 1: invalid JSON: {exc.msg}") from exc
    if (
        not isinstance(header, dict)
        or header.get("format") != GRAPH_FORMAT
        or header.get("version") != GRAPH_FORMAT_VERSION
        or not isinstance(header.get("manual_id"), str)
    ):
        raise CorruptGraph(f"{path}: missing or unrecognized header")

    triples = []
    for lineno, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorruptGraph(f"line {lineno}: invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict) or set(obj) != {"s", "r", "o"}:
            raise CorruptGraph(f"line {lineno}: triple must have keys s, r, o")
        subject = _parse_node(obj["s"], lineno, allow_literal=False)
        relation = _parse_relation(obj["r"], lineno)
        o = _parse_node(obj["o"], lineno, allow_literal=True)
        triples.append(Triple(subject, relation, o))
    return KnowledgeGraph.from_triples(header["manual_id"], triples)


_NT_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}


def escape_ntriples_literal(text: str) -> str:
    return "".join(_NT_ESCAPES.get(ch, ch) for ch in text)


def _node_iri(kg: KnowledgeGraph, node: NodeId) -> str:
    return (
        f"<urn:x-manual2kg:{quote(kg.manual_id, safe='')}"
        f":{node.kind.value}:{quote(node.id, safe='')}>"
    )


def export_ntriples(kg: KnowledgeGraph, path: str | Path) -> None:
    """Optional N-Triples export with literal escaping per that format."""
    lines = []
    for t in kg.triples:
        subject = _node_iri(kg, t.subject)
        predicate = f"<urn:x-manual2kg:relation:{t.relation.value}>"
        if isinstance(t.obj, str):
            obj = f'"{escape_ntriples_literal(t.obj)}"'
        else:
            obj = _node_iri(kg, t.obj)
        lines.append(f"{subject} {predicate} {obj} .")
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
