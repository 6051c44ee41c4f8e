"""Manual loading, section chunking, noise removal and procedure splitting.

Manuals are UTF-8 Markdown files whose major sections sit under a fixed
heading level (``####`` by default). The chunker emits one cleaned chunk per
section and can further split the Procedure section into its top-level
numbered steps.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import (
    DuplicateSection,
    EmptyDocument,
    EncodingError,
    IoError,
    NoSections,
    NoTopLevelSteps,
)

logger = logging.getLogger(__name__)

# Lines matching any of these are dropped by remove_noise. Ordered and
# user-extensible; matched with re.search against each line.
DEFAULT_NOISE_PATTERNS: tuple[str, ...] = (
    r"^\s*Parent\s+Topic\s*:",
    r"^\s*Previous\s+topic\b",
    r"^\s*Next\s+topic\b",
    r"^\s*Copyright\b|©\s*\d{4}",
)

ROADMAP_SECTION = "Configuration Roadmap"
PROCEDURE_SECTION = "Procedure"
NETWORKING_SECTION = "Networking Requirements"
CONFIG_FILES_SECTION = "Configuration Files"

_TITLE_RE = re.compile(r"^#[ \t]+(.+?)[ \t]*\r?$", re.MULTILINE)
_STEP_MARKER_RE = re.compile(r"^([ \t]*)(\d+)\.(?:\s|$)")


def normalize_ws(text: str) -> str:
    """Collapse all whitespace runs to single spaces and strip the ends."""
    return " ".join(text.split())


def slugify(text: str) -> str:
    """Lowercase and collapse non-alphanumeric runs to single hyphens."""
    slug = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return slug


@dataclass(frozen=True)
class ManualDocument:
    """One loaded manual: identity plus the raw bytes it was read from."""

    manual_id: str
    title: str
    raw_text: str

    def __post_init__(self):
        if not re.fullmatch(r"[a-z0-9][a-z0-9_-]*", self.manual_id):
            raise ValueError(f"invalid manual_id slug: {self.manual_id!r}")


@dataclass(frozen=True)
class SectionChunk:
    """A named section with cleaned body and its raw-text character span."""

    section_name: str
    body: str
    source_span: tuple[int, int]


@dataclass(frozen=True)
class ProcedureMainStepChunk:
    """One top-level procedure step, including all of its nested content."""

    ordinal: int
    text: str

    def __post_init__(self):
        if self.ordinal < 1:
            raise ValueError("ordinal must be a positive integer")


def load_manual(path: str | Path) -> ManualDocument:
    """Read a manual file and derive its title and manual_id.

    The title is the first top-level ``# `` heading; when the document has
    none, the filename stem is used instead. The manual_id is the slugified
    title either way.
    """
    path = Path(path)
    try:
        raw_bytes = path.read_bytes()
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    try:
        raw_text = raw_bytes.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise EncodingError(f"{path} is not valid UTF-8: {exc}") from exc
    if not raw_text.strip():
        raise EmptyDocument(f"{path} contains no content")

    match = _TITLE_RE.search(raw_text)
    title = match.group(1) if match else path.stem
    manual_id = slugify(title)
    if not manual_id:
        raise EmptyDocument(f"{path}: cannot derive a manual id from {title!r}")
    return ManualDocument(manual_id=manual_id, title=title, raw_text=raw_text)


def remove_noise(text: str, patterns: tuple[str, ...] | list[str] = DEFAULT_NOISE_PATTERNS) -> str:
    """Delete lines matching any noise pattern; leave every other byte alone."""
    compiled = [re.compile(p) for p in patterns]
    kept = [
        line
        for line in text.split("\n")
        if not any(c.search(line) for c in compiled)
    ]
    return "\n".join(kept)


def chunk_sections(
    doc: ManualDocument,
    heading_marker: str = "####",
    noise_patterns: tuple[str, ...] | list[str] = DEFAULT_NOISE_PATTERNS,
) -> list[SectionChunk]:
    """Split a manual into one cleaned chunk per heading at the given level.

    Raises NoSections when no heading at the configured level exists, and
    DuplicateSection when two headings share a name.
    """
    heading_re = re.compile(
        r"^" + re.escape(heading_marker) + r"[ \t]+(.+?)[ \t]*\r?$", re.MULTILINE
    )
    matches = list(heading_re.finditer(doc.raw_text))
    if not matches:
        raise NoSections(
            f"{doc.manual_id}: no {heading_marker!r} headings found"
        )

    chunks: list[SectionChunk] = []
    seen: set[str] = set()
    for i, m in enumerate(matches):
        name = m.group(1)
        if name in seen:
            raise DuplicateSection(f"{doc.manual_id}: duplicate section {name!r}")
        seen.add(name)
        body_start = m.end()
        if doc.raw_text[body_start : body_start + 1] == "\n":
            body_start += 1
        body_end = matches[i + 1].start() if i + 1 < len(matches) else len(doc.raw_text)
        raw_body = doc.raw_text[body_start:body_end]
        chunks.append(
            SectionChunk(
                section_name=name,
                body=remove_noise(raw_body, noise_patterns),
                source_span=(body_start, body_end),
            )
        )
    return chunks


def sections_by_name(chunks: list[SectionChunk]) -> dict[str, SectionChunk]:
    return {c.section_name: c for c in chunks}


def split_procedure(
    procedure: SectionChunk, expected_name: str = PROCEDURE_SECTION
) -> list[ProcedureMainStepChunk]:
    """Split a Procedure section at its top-level numbered step markers.

    Top level means the minimal indentation at which numbered markers
    ("1.", "2.", ...) occur; nested numbering at deeper indentation stays
    inside the enclosing step. Concatenating the returned chunk texts
    reproduces the section body exactly.
    """
    if procedure.section_name != expected_name:
        raise ValueError(
            f"expected section {expected_name!r}, got {procedure.section_name!r}"
        )
    body = procedure.body
    marker_offsets: list[tuple[int, int]] = []  # (line offset, indent width)
    offset = 0
    for line in body.split("\n"):
        m = _STEP_MARKER_RE.match(line)
        if m:
            marker_offsets.append((offset, len(m.group(1).expandtabs())))
        offset += len(line) + 1

    if not marker_offsets:
        raise NoTopLevelSteps(
            f"no top-level numbered steps in {procedure.section_name!r}"
        )
    min_indent = min(indent for _, indent in marker_offsets)
    starts = [off for off, indent in marker_offsets if indent == min_indent]

    # Any preamble before the first marker stays with the first step so the
    # chunks tile the whole body.
    starts[0] = 0
    bounds = starts + [len(body)]
    return [
        ProcedureMainStepChunk(ordinal=i + 1, text=body[bounds[i] : bounds[i + 1]])
        for i in range(len(starts))
    ]


def count_top_level_steps(text: str) -> int:
    """Count top-level numbered markers in a section body (0 when none)."""
    indents = [
        len(m.group(1).expandtabs())
        for line in text.split("\n")
        if (m := _STEP_MARKER_RE.match(line))
    ]
    if not indents:
        return 0
    min_indent = min(indents)
    return sum(1 for i in indents if i == min_indent)


def chunk_to_json_dict(chunk: SectionChunk) -> dict:
    return {
        "section_name": chunk.section_name,
        "body": chunk.body,
        "start": chunk.source_span[0],
        "end": chunk.source_span[1],
    }
