"""Prompt assembly and the versioned template store.

Templates are ordered sections (overview, guidelines, optional examples,
response) plus named input slots that get filled at call time. Guideline
sections are written as keyed rule blocks ("- rule_name: ...") so the
refinement step can diff them rule by rule. On disk a template version is a
directory of one plain-text file per section plus a JSON manifest.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from ..errors import IoError, MissingSlot, UnknownSlot
from .types import PromptTemplate, Task

_GUIDELINE_BLOCK_RE = re.compile(r"^- ([a-z_]+):", re.MULTILINE)


def slot_label(slot: str) -> str:
    return slot.replace("_", " ").title()


def assemble_prompt(template: PromptTemplate, inputs: dict[str, str]) -> str:
    """Concatenate template sections and labeled input blocks, in order."""
    missing = [s for s in template.input_slots if s not in inputs]
    if missing:
        raise MissingSlot(missing[0])
    unknown = [s for s in inputs if s not in template.input_slots]
    if unknown:
        raise UnknownSlot(unknown[0])

    blocks = []
    for name in ("overview", "guidelines", "examples"):
        if name in template.sections:
            blocks.append(f"<{name.title()}>\n{template.sections[name]}")
    for slot in template.input_slots:
        blocks.append(f"<{slot_label(slot)}>\n{inputs[slot]}")
    blocks.append(f"<Response>\n{template.sections['response']}")
    return "\n\n".join(blocks)


def split_guideline_blocks(text: str) -> tuple[str, dict[str, str]]:
    """Split a guidelines section into its preamble and keyed rule blocks."""
    matches = list(_GUIDELINE_BLOCK_RE.finditer(text))
    preamble = text[: matches[0].start()] if matches else text
    blocks: dict[str, str] = {}
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        key = m.group(1)
        if key in blocks:
            raise ValueError(f"duplicate guideline key {key!r}")
        blocks[key] = text[m.start() : end]
    return preamble, blocks


# -- on-disk store -----------------------------------------------------------

def save_template(template: PromptTemplate, prompts_dir: str | Path) -> Path:
    """Write one version directory: section files plus manifest.json."""
    version_dir = Path(prompts_dir) / template.task.value / f"v{template.version}"
    try:
        version_dir.mkdir(parents=True, exist_ok=True)
        for name, text in template.sections.items():
            (version_dir / f"{name}.txt").write_text(text, encoding="utf-8")
        manifest = {
            "task": template.task.value,
            "version": template.version,
            "parent_version": template.parent_version,
            "slots": list(template.input_slots),
            "sections": list(template.sections),
            "provenance": template.provenance,
        }
        (version_dir / "manifest.json").write_text(
            json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
        )
    except OSError as exc:
        raise IoError(f"cannot write template to {version_dir}: {exc}") from exc
    return version_dir


def load_template(prompts_dir: str | Path, task: Task, version: int = 0) -> PromptTemplate:
    version_dir = Path(prompts_dir) / task.value / f"v{version}"
    manifest_path = version_dir / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        sections = {
            name: (version_dir / f"{name}.txt").read_text(encoding="utf-8")
            for name in manifest["sections"]
        }
    except OSError as exc:
        raise IoError(f"cannot read template from {version_dir}: {exc}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise IoError(f"invalid manifest {manifest_path}: {exc}") from exc
    return PromptTemplate(
        task=Task(manifest["task"]),
        sections=sections,
        input_slots=tuple(manifest["slots"]),
        version=manifest["version"],
        parent_version=manifest.get("parent_version"),
        provenance=manifest.get("provenance"),
    )


def has_template(prompts_dir: str | Path, task: Task, version: int = 0) -> bool:
    return (Path(prompts_dir) / task.value / f"v{version}" / "manifest.json").is_file()


# -- default templates -------------------------------------------------------

_ROADMAP_OVERVIEW = """\
You are a networking configuration assistant. Read the Configuration Roadmap
section of an Ethernet switch configuration manual and extract its structure:
the introductory context, the hierarchical configuration steps, and each
step's explicitly stated goals and notes."""

_ROADMAP_GUIDELINES = """\
Follow every rule below. Rules are keyed by name:
- step_splitting: Split the roadmap into steps and sub-steps only where the source text marks them explicitly with numbers, letters, or bullet markers. Never merge two marked steps and never invent a split inside an unmarked sentence.
- context_identification: Put the introductory descriptive text that appears before the first step into "context". Do not place step content in the context and do not repeat the context inside any step.
- goal_extraction: Extract a goal only when a step states its purpose explicitly, for example in phrases introduced by "to ..." or "in order to ...". Copy each goal phrase into the step's "goal" list and leave the list empty when no purpose is stated.
- note_extraction: Extract clarifications, conditions, and background remarks attached to a step into its "note" list. A note is never the main action of the step; leave the list empty when there is none.
- numbering: Number main steps "1", "2", ... in source order and number sub-steps by extending the parent number with a dot ("1.1", "1.2", ...). Assign positional numbers to unnumbered bullet items.
- verbatim_copying: Copy all extracted text verbatim from the source roadmap. Do not paraphrase, translate, correct, or reorder words.
- format_compliance: Return exactly the JSON structure shown in the response section, with every field present and absent values given as empty lists."""

_ROADMAP_RESPONSE = """\
Return one JSON object, no prose, following exactly this schema:
{
  "context": "<introductory text before the first step, or an empty string>",
  "steps": [
    {
      "step": "<verbatim step text>",
      "step No": "<hierarchical number, e.g. 1>",
      "goal": ["<verbatim goal phrase>"],
      "note": ["<verbatim note text>"],
      "sub_steps": [<objects with the same fields, numbered e.g. 1.1>]
    }
  ]
}"""

_MAPPING_OVERVIEW = """\
You are a networking configuration assistant. Map each main step of the
Configuration Roadmap section to the Procedure main steps that implement or
verify it. A main step is one complete top-level numbered block including all
of its nested content."""

_MAPPING_GUIDELINES = """\
Follow every rule below. Rules are keyed by name:
- main_step_boundary: Treat each top-level numbered step, together with all of its nested content, as one atomic unit. Never match at sub-step granularity.
- step_numbering: Use the top-level step numbers exactly as they appear in each section, sequential and without renumbering.
- relevant_step_match: Match a procedure main step to a roadmap main step only when it implements or verifies that roadmap step's configuration intent.
- multiple_match_inclusion: When several procedure main steps implement or verify one roadmap main step, include all of them. Verification steps that confirm a roadmap step's outcome count as matches.
- device_identifier_consistency: Matched procedure steps must operate on the same device and interface identifiers that the roadmap step names.
- text_completeness: Copy the full text of each roadmap main step and each matched procedure main step, complete and unmodified.
- structural_format: Return exactly the JSON structure shown in the response section, one entry per roadmap main step."""

_MAPPING_RESPONSE = """\
Return one JSON array, no prose, following exactly this schema:
[
  {
    "STEP in Roadmap": "<verbatim roadmap main step text>",
    "STEP No": "<roadmap main step number, e.g. 1>",
    "Matching STEPs in Procedures": [
      {
        "Procedure Main STEP No": "<procedure main step number, e.g. 1>",
        "Procedure Main STEP Content": "<verbatim procedure main step text>"
      }
    ]
  }
]"""

_PROCEDURE_OVERVIEW = """\
You are a networking configuration assistant. Read one main step of the
Procedure section of an Ethernet switch configuration manual and extract its
hierarchical structure: the step and any sub-steps, and for each level the
commands, expected outputs, and notes when present."""

_PROCEDURE_GUIDELINES = """\
Follow every rule below. Rules are keyed by name:
- step_coverage: Preserve every step, sub-step, and deeper-level step that the source marks. Never omit or merge steps.
- step_numbering: Number the main step with its top-level number and number each sub-step by extending the parent number with a dot ("4.1", "4.1.1"). Assign positional numbers to unnumbered items.
- command_extraction: Put device command lines and interactive inputs in the "command" field of the step where they appear, including prompt prefixes such as [Switch]. Commands mentioned inside a step sentence also count.
- expected_output_extraction: Put command or action output in the expected-output field of the step it belongs to, including subsequent text that explains or summarizes the output.
- note_classification_attachment: Put background remarks, suggestions, and clarifications in the "note" field of the step they follow. Never file the step's main action as a note.
- text_completeness_verbatim: Copy all extracted text verbatim from the source, preserving wording, casing, and markers.
- structural_format_schema: Return exactly the JSON structure shown in the response section, with absent values given as empty lists."""

_PROCEDURE_EXAMPLES = """\
Example 1 (commands directly under a step):
Input main step:
1. Create VLAN 20 on the switch.
       [Switch] **vlan 20**
       [Switch-vlan20] **quit**
Output:
{
  "main_step": "1. Create VLAN 20 on the switch.",
  "command": ["[Switch] **vlan 20**", "[Switch-vlan20] **quit**"],
  "expectedOutput": [],
  "note": [],
  "sub_steps": []
}

Example 2 (nested sub-steps with a note):
Input main step:
3. Configure the uplink interfaces.
   1. Add GE0/0/1 to VLAN 20.
          [Switch] **interface gigabitethernet 0/0/1**
          [Switch-GigabitEthernet0/0/1] **port default vlan 20**
      By default, interfaces belong to VLAN 1.
   2. Add GE0/0/2 to VLAN 20.
          [Switch] **interface gigabitethernet 0/0/2**
          [Switch-GigabitEthernet0/0/2] **port default vlan 20**
Output:
{
  "main_step": "3. Configure the uplink interfaces.",
  "command": [],
  "expectedOutput": [],
  "note": [],
  "sub_steps": [
    {
      "sub_step_No": "3.1",
      "sub_step": "1. Add GE0/0/1 to VLAN 20.",
      "command": ["[Switch] **interface gigabitethernet 0/0/1**", "[Switch-GigabitEthernet0/0/1] **port default vlan 20**"],
      "expected_Output": [],
      "note": ["By default, interfaces belong to VLAN 1."],
      "sub_sub_steps": []
    },
    {
      "sub_step_No": "3.2",
      "sub_step": "2. Add GE0/0/2 to VLAN 20.",
      "command": ["[Switch] **interface gigabitethernet 0/0/2**", "[Switch-GigabitEthernet0/0/2] **port default vlan 20**"],
      "expected_Output": [],
      "note": [],
      "sub_sub_steps": []
    }
  ]
}

Example 3 (command named inside the step sentence, output with summary text):
Input main step:
2. Run the **display vlan** command to verify that VLAN 20 exists.
       [Switch] **display vlan**
       VID  Type    Ports
       20   common  GE0/0/1(U) GE0/0/2(U)
   The command output shows that VLAN 20 has been created.
Output:
{
  "main_step": "2. Run the **display vlan** command to verify that VLAN 20 exists.",
  "command": ["[Switch] **display vlan**"],
  "expectedOutput": ["VID  Type    Ports\\n20   common  GE0/0/1(U) GE0/0/2(U)\\nThe command output shows that VLAN 20 has been created."],
  "note": [],
  "sub_steps": []
}"""

_PROCEDURE_RESPONSE = """\
Return one JSON object, no prose, following exactly this schema:
{
  "main_step": "<verbatim main step text>",
  "command": ["<command line>"],
  "expectedOutput": ["<output text>"],
  "note": ["<note text>"],
  "sub_steps": [
    {
      "sub_step_No": "<number, e.g. 4.1>",
      "sub_step": "<verbatim sub-step text>",
      "command": ["<command line>"],
      "expected_Output": ["<output text>"],
      "note": ["<note text>"],
      "sub_sub_steps": [
        {
          "sub_sub_step_No": "<number, e.g. 4.1.1>",
          "sub_sub_step": "<verbatim text>",
          "command": ["<command line>"],
          "expected_Output": ["<output text>"],
          "note": ["<note text>"]
        }
      ]
    }
  ]
}"""

_DEFAULTS: dict[Task, tuple[dict[str, str], tuple[str, ...]]] = {
    Task.ROADMAP: (
        {
            "overview": _ROADMAP_OVERVIEW,
            "guidelines": _ROADMAP_GUIDELINES,
            "response": _ROADMAP_RESPONSE,
        },
        ("roadmap",),
    ),
    Task.MAPPING: (
        {
            "overview": _MAPPING_OVERVIEW,
            "guidelines": _MAPPING_GUIDELINES,
            "response": _MAPPING_RESPONSE,
        },
        ("roadmap", "procedure"),
    ),
    Task.PROCEDURE: (
        {
            "overview": _PROCEDURE_OVERVIEW,
            "guidelines": _PROCEDURE_GUIDELINES,
            "examples": _PROCEDURE_EXAMPLES,
            "response": _PROCEDURE_RESPONSE,
        },
        ("procedure_main_step",),
    ),
}


def default_template(task: Task) -> PromptTemplate:
    """The built-in version-0 template for a task."""
    sections, slots = _DEFAULTS[task]
    return PromptTemplate(task=task, sections=dict(sections), input_slots=slots)
