"""Typed errors shared across the package.

Every failure a caller is expected to branch on gets its own class; anything
else propagates as a plain exception.
"""

from __future__ import annotations


class CadastreError(Exception):
    """Base class for all package errors."""


class ConfigError(CadastreError):
    """Invalid or incomplete application configuration."""


# --- tabular store ---------------------------------------------------------


class EmptyFileError(CadastreError):
    """Dataset file has no header row."""


class MissingColumnError(CadastreError):
    """Dataset header does not match the declared schema columns."""


class CellTypeError(CadastreError):
    """A cell could not be coerced to its declared column kind."""

    def __init__(self, message: str, row: int, column: str) -> None:
        super().__init__(message)
        self.row = row
        self.column = column


class UnknownColumnError(CadastreError):
    """Referenced column does not exist in the schema."""


# --- providers and parsers -------------------------------------------------


class ProviderUnavailable(CadastreError):
    """Completion or embedding backend could not serve the request."""


class ProviderTimeout(ProviderUnavailable):
    """Transport-level timeout talking to a backend."""


class MissingAnswerMarker(CadastreError):
    """Model output contains no ``[[...]]`` answer span."""


class MalformedVerdict(CadastreError):
    """Model output has no bracketed span mapping to True/False."""


class MalformedReferenceList(CadastreError):
    """Model output contains no parsable list of phrase/column references."""


class InvalidDatasetNumber(CadastreError):
    """A reference names a dataset number outside {1, 2, 3}."""


class NoCodeBlock(CadastreError):
    """Model output contains no fenced code block."""


# --- SQL agent -------------------------------------------------------------


class BadShotCountError(CadastreError):
    """In-context shot list must contain exactly 0 or 3 exemplars."""


class SqlError(CadastreError):
    """SQL syntax or runtime error, with the engine message."""


# --- evaluation ------------------------------------------------------------


class SeedCountError(CadastreError):
    """Consistency runs require exactly 3 distinct seeds."""


class KindMismatch(CadastreError):
    """Prediction and ground truth are not comparable kinds."""


class EmptyGroundTruth(CadastreError):
    """Ground-truth answer has no tokens after normalization."""
