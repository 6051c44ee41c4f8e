"""Knowledge-graph extraction from configuration manuals.

Pipeline: chunk a Markdown manual into sections, run three model-backed
extraction tasks (roadmap, roadmap-procedure mapping, procedure) under a
judge-scored refinement loop, convert the accepted outputs into a validated
triple graph, and derive a test case specification from the graph.
"""

from . import analytics, errors, gateway, ingest, judging, kg, pipeline, refinement, tcs
from .extraction import (
    MappingEntry,
    MappingMatch,
    ProcedureExtraction,
    ProcedureStep,
    PromptTemplate,
    RoadmapExtraction,
    RoadmapStep,
    Task,
    parse_wire_json,
)
from .gateway import ChatRequest, ChatResponse, LiveBackend, ReplayBackend, ScriptedBackend
from .ingest import ManualDocument, ProcedureMainStepChunk, SectionChunk, load_manual
from .judging import EvaluationReport, GuidelineResult, correctness_score, evaluate, suite_for
from .kg import KnowledgeGraph, Relation, Triple, validate_graph
from .pipeline import PipelineConfig, run_manual
from .refinement import LoopConfig, LoopOutcome, improve_prompt, run_refinement_loop
from .tcs import TestCaseSpecification, generate_tcs

__version__ = "0.1.0"

__all__ = [
    "analytics",
    "errors",
    "gateway",
    "ingest",
    "judging",
    "kg",
    "pipeline",
    "refinement",
    "tcs",
    "MappingEntry",
    "MappingMatch",
    "ProcedureExtraction",
    "ProcedureStep",
    "PromptTemplate",
    "RoadmapExtraction",
    "RoadmapStep",
    "Task",
    "parse_wire_json",
    "ChatRequest",
    "ChatResponse",
    "LiveBackend",
    "ReplayBackend",
    "ScriptedBackend",
    "ManualDocument",
    "ProcedureMainStepChunk",
    "SectionChunk",
    "load_manual",
    "EvaluationReport",
    "GuidelineResult",
    "correctness_score",
    "evaluate",
    "suite_for",
    "KnowledgeGraph",
    "Relation",
    "Triple",
    "validate_graph",
    "PipelineConfig",
    "run_manual",
    "LoopConfig",
    "LoopOutcome",
    "improve_prompt",
    "run_refinement_loop",
    "TestCaseSpecification",
    "generate_tcs",
]
