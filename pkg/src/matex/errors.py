"""Exception types shared across the package."""

from __future__ import annotations


class MatexError(Exception):
    """Base class for all package errors."""


class ParseError(MatexError):
    """Input text could not be parsed; carries the offending span."""

    def __init__(self, message: str, span: tuple[int, int] | None = None):
        super().__init__(message)
        self.span = span


class UnknownElement(MatexError):
    """Element symbol missing from the atomic-mass table."""


class NotQuantifiable(MatexError):
    """Text carries no number and no recognized qualifier pattern."""


class EmptyInput(MatexError):
    """Degenerate empty input where content is required."""


class SchemaViolation(MatexError):
    """Structured response failed its stage contract.

    The message is phrased so it can be appended verbatim to a repair prompt.
    """

    def __init__(self, path: str, reason: str):
        super().__init__(f"at {path}: {reason}")
        self.path = path
        self.reason = reason


class StageFailure(MatexError):
    """A pipeline stage gave up on a paper (or one material within it)."""

    def __init__(self, stage: int, paper_id: str, material_id: str | None = None,
                 reason: str = ""):
        detail = f"stage {stage} failed for paper {paper_id!r}"
        if material_id is not None:
            detail += f", material {material_id!r}"
        if reason:
            detail += f": {reason}"
        super().__init__(detail)
        self.stage = stage
        self.paper_id = paper_id
        self.material_id = material_id
        self.reason = reason


class CompletionTimeout(MatexError):
    """Completion request exceeded its timeout after retries."""


class RateLimited(MatexError):
    """Provider kept rate-limiting past the retry budget."""


class ReplayMiss(MatexError):
    """No recorded response for this request hash; the fixture has drifted."""

    def __init__(self, request_hash: str):
        super().__init__(f"no recorded response for request hash {request_hash}")
        self.request_hash = request_hash


class CredentialMissing(MatexError):
    """Live backend selected but the credential env var is not set."""


class FormatError(MatexError):
    """A persisted file is malformed; names the line and path."""

    def __init__(self, line: int, reason: str, path: str = ""):
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {reason}")
        self.line = line
        self.reason = reason
        self.path = path


class VersionMismatch(MatexError):
    """Persisted file declares a format version this loader cannot read."""


class PaperSetMismatch(MatexError):
    """Databases under comparison do not cover the same papers."""
