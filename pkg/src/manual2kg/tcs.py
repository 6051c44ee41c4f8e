"""Test case specification generation by traversing a validated graph.

The specification has four fields: the use case (scenario title), the
preconditions (networking requirements), the configuration steps (roadmap
hierarchy with each main step's mapped procedure subtrees inlined), and the
configuration file. Procedure steps mapped to several roadmap steps are
embedded under each of them, preserving the many-to-many mapping.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IoError, MissingUseCase
from .kg import (
    CONFIG_FILES_NODE,
    NETWORKING_NODE,
    ROADMAP_NODE,
    KnowledgeGraph,
    NodeId,
    NodeKind,
    Relation,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ProcedureStepView:
    id: str
    content: str
    commands: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    expected_outputs: list[str] = field(default_factory=list)
    sub_steps: list["ProcedureStepView"] = field(default_factory=list)


@dataclass(frozen=True)
class RoadmapStepView:
    roadmap_id: str
    content: str
    goals: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    sub_steps: list["RoadmapStepView"] = field(default_factory=list)
    mapped_procedure_steps: list[ProcedureStepView] = field(default_factory=list)


@dataclass(frozen=True)
class TestCaseSpecification:
    use_case: str
    preconditions: str
    configuration_steps: list[RoadmapStepView]
    configuration_file: str


def _numeric_path(node: NodeId) -> tuple[int, ...]:
    return tuple(int(p) for p in node.id.split("_")[1:])


def _literals(kg: KnowledgeGraph, node: NodeId, relation: Relation) -> list[str]:
    return [o for o in kg.objects_of(node, relation) if isinstance(o, str)]


def _node_children(kg: KnowledgeGraph, node: NodeId) -> list[NodeId]:
    kids = [o for o in kg.objects_of(node, Relation.HAS_SUB_STEP) if isinstance(o, NodeId)]
    return sorted(kids, key=_numeric_path)


def _procedure_view(kg: KnowledgeGraph, node: NodeId) -> ProcedureStepView:
    return ProcedureStepView(
        id=node.id,
        content=kg.literal_of(node, Relation.HAS_CONTENT) or "",
        commands=_literals(kg, node, Relation.HAS_COMMAND),
        notes=_literals(kg, node, Relation.HAS_NOTE),
        expected_outputs=_literals(kg, node, Relation.HAS_EXPECTED_OUTPUT),
        sub_steps=[_procedure_view(kg, c) for c in _node_children(kg, node)],
    )


def _roadmap_view(kg: KnowledgeGraph, node: NodeId, manual_id: str) -> RoadmapStepView:
    mapped = sorted(
        (o for o in kg.objects_of(node, Relation.MAPS_TO) if isinstance(o, NodeId)),
        key=_numeric_path,
    )
    if not mapped and node.depth() == 1:
        logger.warning("%s: roadmap step %s has no mapped procedure steps", manual_id, node.id)
    return RoadmapStepView(
        roadmap_id=node.id,
        content=kg.literal_of(node, Relation.HAS_CONTENT) or "",
        goals=_literals(kg, node, Relation.HAS_GOAL),
        notes=_literals(kg, node, Relation.HAS_NOTE),
        sub_steps=[_roadmap_view(kg, c, manual_id) for c in _node_children(kg, node)],
        mapped_procedure_steps=[_procedure_view(kg, p) for p in mapped],
    )


def generate_tcs(kg: KnowledgeGraph) -> TestCaseSpecification:
    """Traverse a validated graph into a four-field test case specification.

    Missing networking-requirements or configuration-files entities yield
    empty strings with a warning; a missing use-case scenario node is an
    error.
    """
    scenario = next(
        (n for n in kg.nodes() if n.kind is NodeKind.USE_CASE_SCENARIO), None
    )
    if scenario is None:
        raise MissingUseCase(f"{kg.manual_id}: graph has no use-case scenario node")

    preconditions = kg.literal_of(NETWORKING_NODE, Relation.HAS_CONTENT)
    if preconditions is None:
        logger.warning("%s: no networking requirements; preconditions empty", kg.manual_id)
        preconditions = ""
    configuration_file = kg.literal_of(CONFIG_FILES_NODE, Relation.HAS_CONTENT)
    if configuration_file is None:
        logger.warning("%s: no configuration files; configuration_file empty", kg.manual_id)
        configuration_file = ""

    tops = sorted(
        (o for o in kg.objects_of(ROADMAP_NODE, Relation.HAS_STEP) if isinstance(o, NodeId)),
        key=_numeric_path,
    )
    return TestCaseSpecification(
        use_case=scenario.id,
        preconditions=preconditions,
        configuration_steps=[_roadmap_view(kg, t, kg.manual_id) for t in tops],
        configuration_file=configuration_file,
    )


def _procedure_view_to_dict(view: ProcedureStepView) -> dict:
    return {
        "id": view.id,
        "content": view.content,
        "commands": list(view.commands),
        "notes": list(view.notes),
        "expected_outputs": list(view.expected_outputs),
        "sub_steps": [_procedure_view_to_dict(s) for s in view.sub_steps],
    }


def _roadmap_view_to_dict(view: RoadmapStepView) -> dict:
    return {
        "roadmap_id": view.roadmap_id,
        "content": view.content,
        "goals": list(view.goals),
        "notes": list(view.notes),
        "sub_steps": [_roadmap_view_to_dict(s) for s in view.sub_steps],
        "mapped_procedure_steps": [
            _procedure_view_to_dict(p) for p in view.mapped_procedure_steps
        ],
    }


def tcs_to_dict(tcs: TestCaseSpecification) -> dict:
    return {
        "use_case": tcs.use_case,
        "preconditions": tcs.preconditions,
        "configuration_steps": [_roadmap_view_to_dict(s) for s in tcs.configuration_steps],
        "configuration_file": tcs.configuration_file,
    }


def tcs_to_json(tcs: TestCaseSpecification) -> str:
    """Pretty-printed specification with stable key order."""
    return json.dumps(tcs_to_dict(tcs), indent=2, ensure_ascii=False) + "\n"


def save_tcs(tcs: TestCaseSpecification, path: str | Path) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(tcs_to_json(tcs), encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
