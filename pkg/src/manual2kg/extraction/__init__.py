from .types import (
    MappingEntry,
    MappingMatch,
    ProcedureExtraction,
    ProcedureStep,
    PromptTemplate,
    RoadmapExtraction,
    RoadmapStep,
    Task,
    mapping_to_canonical_json,
)
from .wire import parse_wire_json
from .prompts import (
    assemble_prompt,
    default_template,
    load_template,
    save_template,
    split_guideline_blocks,
)
from .agents import (
    extract_mapping,
    extract_procedure,
    extract_roadmap,
    lint_mapping,
    lint_procedure,
    lint_roadmap,
)

__all__ = [
    "MappingEntry",
    "MappingMatch",
    "ProcedureExtraction",
    "ProcedureStep",
    "PromptTemplate",
    "RoadmapExtraction",
    "RoadmapStep",
    "Task",
    "mapping_to_canonical_json",
    "parse_wire_json",
    "assemble_prompt",
    "default_template",
    "load_template",
    "save_template",
    "split_guideline_blocks",
    "extract_mapping",
    "extract_procedure",
    "extract_roadmap",
    "lint_mapping",
    "lint_procedure",
    "lint_roadmap",
]
