"""Exception types shared across the pipeline, grouped by stage."""

from __future__ import annotations


class Manual2KgError(Exception):
    """Base class for every error raised by this package."""


# -- ingest ----------------------------------------------------------------

class IngestError(Manual2KgError):
    pass


class IoError(IngestError):
    """File could not be read or written."""


class EncodingError(IngestError):
    """Input file is not valid UTF-8."""


class EmptyDocument(IngestError):
    """Manual file contains no content."""


class NoSections(IngestError):
    """No headings found at the configured level."""


class DuplicateSection(IngestError):
    """The same section name appears more than once in a manual."""


class NoTopLevelSteps(IngestError):
    """Procedure section has no top-level numbered steps."""


class MissingSection(IngestError):
    """A section the pipeline hard-requires is absent from the manual."""


# -- gateway ---------------------------------------------------------------

class ProviderError(Manual2KgError):
    """Base class for chat-completion backend failures."""


class TransportError(ProviderError):
    """Network or HTTP-level failure while calling the live endpoint."""


class RateLimited(ProviderError):
    """Endpoint responded with a rate-limit status; retryable."""


class ReplayMiss(ProviderError):
    """Request digest not present in the replay transcript."""


class ScriptExhausted(ProviderError):
    """Scripted backend has no queued response for the request tag."""


class CorruptTranscript(Manual2KgError):
    """Transcript line failed schema validation."""


# -- extraction / judging --------------------------------------------------

class MissingSlot(Manual2KgError):
    """Prompt assembly input missing for a declared slot."""


class UnknownSlot(Manual2KgError):
    """Prompt assembly input given for a slot the template does not declare."""


class ParseFailure(Manual2KgError):
    """Model output could not be parsed into the expected wire schema."""

    def __init__(self, message: str, *, position: int | None = None, path: str | None = None):
        detail = message
        if path is not None:
            detail = f"{detail} (at {path})"
        if position is not None:
            detail = f"{detail} (char {position})"
        super().__init__(detail)
        self.position = position
        self.path = path


class DanglingReference(Manual2KgError):
    """Mapping output references a step that does not exist in the source."""


class MissingInput(Manual2KgError):
    """Evaluation prompt assembly is missing a required source input."""


class MissingGuideline(Manual2KgError):
    """Judge response omitted one of the suite's guideline keys."""


class EmptyEvaluation(Manual2KgError):
    """Every guideline reported zero checked entries."""


class RevisionViolation(Manual2KgError):
    """Prompt revision altered a section or passing guideline it must not touch."""


# -- kg / tcs / analytics --------------------------------------------------

class CorruptGraph(Manual2KgError):
    """Graph file failed schema validation on load."""


class ValidationFailed(Manual2KgError):
    """A produced graph has schema violations."""


class MissingUseCase(Manual2KgError):
    """Graph has no use-case scenario node to derive a specification from."""


class NoOverlap(Manual2KgError):
    """Two label vectors share no (manual, guideline) pairs."""


class TaskMismatch(Manual2KgError):
    """Two label vectors belong to different extraction tasks."""
