"""Shared fixtures: the example manual, scripted wire responses, judges."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from manual2kg.extraction import Task, default_template
from manual2kg.ingest import chunk_sections, load_manual, sections_by_name, split_procedure
from manual2kg.judging import suite_for

DATA_DIR = Path(__file__).parent / "data"
LISTING_PATH = DATA_DIR / "lbdt-example.md"

LISTING_TITLE = "Example for Configuring LBDT to Detect Loops on the Local Network"
LISTING_ID = "example-for-configuring-lbdt-to-detect-loops-on-the-local-network"
LISTING_SECTIONS = [
    "Overview",
    "Configuration Notes",
    "Networking Requirements",
    "Configuration Roadmap",
    "Procedure",
    "Configuration Files",
]

ROADMAP_CONTEXT = (
    "To detect loops on the network where the Switch is deployed, configure LBDT "
    "on GE1/0/1 and GE1/0/2 of the Switch. In this example, untagged LBDT packets "
    "sent by the Switch will be discarded by other switches on the network. As a "
    "result, the packets cannot be sent back to the Switch, and LBDT fails. "
    "Therefore, LBDT is configured in a specified VLAN."
)
R1_TEXT = (
    "Enable LBDT on interfaces and configure the Switch to detect loops in "
    "VLAN 100 to implement LBDT on the network where the Switch is located."
)
R1_GOALS = [
    "detect loops in VLAN 100",
    "implement LBDT on the network where the Switch is located.",
]
R2_TEXT = (
    "Configure an action to be taken after a loop is detected and set the "
    "recovery time. After a loop is detected, the Switch blocks the interface "
    "to reduce the impact of the loop on the network."
)
R2_NOTE = (
    "After a loop is detected, the Switch blocks the interface to reduce the "
    "impact of the loop on the network."
)

ROADMAP_WIRE = {
    "context": ROADMAP_CONTEXT,
    "steps": [
        {"step": R1_TEXT, "step No": "1", "goal": R1_GOALS, "note": [], "sub_steps": []},
        {"step": R2_TEXT, "step No": "2", "goal": [], "note": [R2_NOTE], "sub_steps": []},
    ],
}

P1_TEXT = "1. Enable LBDT on interfaces."
P2_TEXT = "2. Specify the VLAN ID of LBDT packets."
P3_TEXT = "3. Configure an action to be taken after a loop is detected and set the recovery time."
P4_TEXT = "4. Verify the configuration."

MAPPING_WIRE = [
    {
        "STEP in Roadmap": R1_TEXT,
        "STEP No": "1",
        "Matching STEPs in Procedures": [
            {"Procedure Main STEP No": "1", "Procedure Main STEP Content": P1_TEXT},
            {"Procedure Main STEP No": "2", "Procedure Main STEP Content": P2_TEXT},
            {"Procedure Main STEP No": "4", "Procedure Main STEP Content": P4_TEXT},
        ],
    },
    {
        "STEP in Roadmap": R2_TEXT,
        "STEP No": "2",
        "Matching STEPs in Procedures": [
            {"Procedure Main STEP No": "3", "Procedure Main STEP Content": P3_TEXT},
            {"Procedure Main STEP No": "4", "Procedure Main STEP Content": P4_TEXT},
        ],
    },
]

P4_OUTPUT_1 = """\
Loopback-detect sending-packet interval:  5
--------------------------------------------------------------------------
Interface                     RecoverTime  Action     Status
--------------------------------------------------------------------------
GigabitEthernet1/0/1          30           block      NORMAL
GigabitEthernet1/0/2          30           block      NORMAL
--------------------------------------------------------------------------
The preceding command output shows that the LBDT configuration is successful."""

P4_OUTPUT_2 = """\
Loopback-detect sending-packet interval:  5
--------------------------------------------------------------------------
Interface                     RecoverTime  Action     Status
--------------------------------------------------------------------------
GigabitEthernet1/0/1          30           block      NORMAL
GigabitEthernet1/0/2          30           block      **BLOCK(Loopback detected)**
--------------------------------------------------------------------------
The preceding command output shows that GE1/0/2 is blocked."""

PROCEDURE_WIRES = {
    1: {
        "main_step": P1_TEXT,
        "command": [
            "<HUAWEI> **system-view**",
            "[HUAWEI] **sysname Switch**",
            "[Switch] **interface gigabitethernet 1/0/1**",
            "[Switch-GigabitEthernet1/0/1] **loopback-detect enable**  //Enable LBDT on GE1/0/1.",
            "[Switch-GigabitEthernet1/0/1] **quit**",
            "[Switch] **interface gigabitethernet 1/0/2**",
            "[Switch-GigabitEthernet1/0/2] **loopback-detect enable**  //Enable LBDT on GE1/0/2.",
            "[Switch-GigabitEthernet1/0/2] **quit**",
        ],
        "expectedOutput": [],
        "note": [],
        "sub_steps": [],
    },
    2: {
        "main_step": P2_TEXT,
        "command": [
            "[Switch] **vlan 100**",
            "[Switch-vlan100] **quit**",
            "[Switch] **interface gigabitethernet 1/0/1**",
            "[Switch-GigabitEthernet1/0/1] **port link-type hybrid**  //In V200R005C00 and later versions, set the link type of the interface.",
            "[Switch-GigabitEthernet1/0/1] **loopback-detect packet vlan 100**",
            "[Switch-GigabitEthernet1/0/1] **quit**",
        ],
        "expectedOutput": [],
        "note": [],
        "sub_steps": [],
    },
    3: {
        "main_step": P3_TEXT,
        "command": [
            "[Switch] **interface gigabitethernet 1/0/1**",
            "[Switch-GigabitEthernet1/0/1] **loopback-detect action block**  //Configure the action taken after a loop is detected.",
            "[Switch-GigabitEthernet1/0/1] **loopback-detect recovery-time 30**  //Set the recovery time.",
            "[Switch-GigabitEthernet1/0/1] **quit**",
        ],
        "expectedOutput": [],
        "note": [],
        "sub_steps": [],
    },
    4: {
        "main_step": P4_TEXT,
        "command": [],
        "expectedOutput": [],
        "note": [],
        "sub_steps": [
            {
                "sub_step_No": "4.1",
                "sub_step": "1. Run the **display loopback-detect** command to check the LBDT configuration.",
                "command": "[Switch] **display loopback-detect**",
                "expected_Output": P4_OUTPUT_1,
                "note": [],
                "sub_sub_steps": [],
            },
            {
                "sub_step_No": "4.2",
                "sub_step": "2. After about 5s, run the **display loopback-detect** command to check whether GE1/0/2 is blocked.",
                "command": "[Switch] **display loopback-detect**",
                "expected_Output": P4_OUTPUT_2,
                "note": [],
                "sub_sub_steps": [],
            },
        ],
    },
}

# Plausible all-pass entry counts per task (entries checked per guideline).
_ALL_PASS_CHECKED = {
    Task.ROADMAP: [2, 1, 2, 2, 2, 6, 2],
    Task.MAPPING: [7, 7, 5, 2, 5, 7, 2],
    Task.PROCEDURE: [6, 6, 6, 6, 6, 24, 6],
}


def judge_response(task: Task, counts: list[tuple[int, int]], comment: str = "") -> str:
    """Judge wire JSON for the task's suite from (correct, checked) pairs."""
    suite = suite_for(task)
    assert len(counts) == len(suite.keys)
    payload: dict = {}
    for key, (correct, checked) in zip(suite.keys, counts):
        score = 1 if correct == checked else 0
        reasons = [] if score == 1 else [f"{checked - correct} entries violate {key}"]
        payload[key] = {
            "score": score,
            "num_checked": checked,
            "num_correct": correct,
            "reason": reasons,
        }
    payload["overall_comment"] = comment
    return json.dumps(payload, indent=2)


def all_pass_judge(task: Task) -> str:
    return judge_response(task, [(n, n) for n in _ALL_PASS_CHECKED[task]])


def counts_for_total(total_correct: int) -> list[tuple[int, int]]:
    """Seven guideline counts with 100 checked entries and the given correct sum."""
    checked = [20, 20, 15, 15, 10, 10, 10]
    remaining = total_correct
    counts = []
    for n in checked:
        c = min(n, remaining)
        counts.append((c, n))
        remaining -= c
    assert remaining == 0
    return counts


def identity_revision(task: Task) -> str:
    """An improver response that returns the default template unchanged."""
    return json.dumps(default_template(task).sections)


def golden_script() -> dict[str, list[str]]:
    """Scripted responses for one full pipeline run over the example manual."""
    return {
        "extract:roadmap:iter0": [json.dumps(ROADMAP_WIRE)],
        "judge:roadmap:iter0": [all_pass_judge(Task.ROADMAP)],
        "extract:mapping:iter0": [json.dumps(MAPPING_WIRE)],
        "judge:mapping:iter0": [all_pass_judge(Task.MAPPING)],
        "extract:procedure:iter0:step1": [json.dumps(PROCEDURE_WIRES[1])],
        "extract:procedure:iter0:step2": [json.dumps(PROCEDURE_WIRES[2])],
        "extract:procedure:iter0:step3": [json.dumps(PROCEDURE_WIRES[3])],
        "extract:procedure:iter0:step4": [json.dumps(PROCEDURE_WIRES[4])],
        "judge:procedure:iter0": [all_pass_judge(Task.PROCEDURE)],
    }


def build_listing_graph(listing_sections):
    """The full example-manual graph exactly as the pipeline would build it."""
    from manual2kg.extraction import ProcedureExtraction, parse_wire_json
    from manual2kg.kg import (
        KnowledgeGraph,
        enhance_graph,
        mapping_to_triples,
        procedure_to_triples,
        roadmap_to_triples,
    )

    roadmap = parse_wire_json(json.dumps(ROADMAP_WIRE), Task.ROADMAP)
    mapping = parse_wire_json(json.dumps(MAPPING_WIRE), Task.MAPPING)
    procedure = ProcedureExtraction(
        main_steps=[
            parse_wire_json(
                json.dumps(PROCEDURE_WIRES[i]), Task.PROCEDURE, main_step_no=i
            ).main_steps[0]
            for i in range(1, 5)
        ]
    )
    triples = (
        roadmap_to_triples(roadmap)
        + mapping_to_triples(mapping)
        + procedure_to_triples(procedure)
    )
    kg = KnowledgeGraph.from_triples(LISTING_ID, triples)
    return enhance_graph(kg, listing_sections, LISTING_TITLE)


def random_roadmap_extraction(rng, max_nodes: int = 50):
    """Random hierarchy (depth <= 3, <= max_nodes steps) with unique strings."""
    from manual2kg.extraction import RoadmapExtraction, RoadmapStep

    uid = iter(range(10_000))

    def make_step(no: str, depth: int, budget: list[int]):
        i = next(uid)
        children = []
        if depth < 3 and budget[0] > 0:
            for j in range(min(rng.randrange(0, 3), budget[0])):
                budget[0] -= 1
                children.append(make_step(f"{no}.{len(children) + 1}", depth + 1, budget))
        return RoadmapStep(
            step_text=f"step text {i}",
            step_no=no,
            goals=[f"goal {i}.{j}" for j in range(rng.randrange(0, 3))],
            notes=[f"note {i}.{j}" for j in range(rng.randrange(0, 2))],
            sub_steps=children,
        )

    n_top = rng.randrange(1, 5)
    budget = [max_nodes - n_top]
    steps = [make_step(str(i + 1), 1, budget) for i in range(n_top)]
    context = rng.choice(["", f"context {next(uid)}"])
    return RoadmapExtraction(context=context, steps=steps)


def random_procedure_extraction(rng, max_nodes: int = 50):
    from manual2kg.extraction import ProcedureExtraction, ProcedureStep

    uid = iter(range(10_000))

    def make_step(no: str, depth: int, budget: list[int]):
        i = next(uid)
        children = []
        if depth < 3 and budget[0] > 0:
            for j in range(min(rng.randrange(0, 3), budget[0])):
                budget[0] -= 1
                children.append(make_step(f"{no}.{len(children) + 1}", depth + 1, budget))
        return ProcedureStep(
            content=f"step content {i}",
            step_no=no,
            commands=[f"command {i}.{j}" for j in range(rng.randrange(0, 3))],
            expected_outputs=[f"output {i}.{j}" for j in range(rng.randrange(0, 2))],
            notes=[f"note {i}.{j}" for j in range(rng.randrange(0, 2))],
            sub_steps=children,
        )

    n_top = rng.randrange(1, 5)
    budget = [max_nodes - n_top]
    return ProcedureExtraction(
        main_steps=[make_step(str(i + 1), 1, budget) for i in range(n_top)]
    )


@pytest.fixture(scope="session")
def listing_doc():
    return load_manual(LISTING_PATH)


@pytest.fixture(scope="session")
def listing_chunks(listing_doc):
    return chunk_sections(listing_doc)


@pytest.fixture(scope="session")
def listing_sections(listing_chunks):
    return sections_by_name(listing_chunks)


@pytest.fixture(scope="session")
def listing_steps(listing_sections):
    return split_procedure(listing_sections["Procedure"])
