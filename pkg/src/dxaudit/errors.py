"""Exception types shared across the package."""


class DxAuditError(Exception):
    """Base class for all dxaudit errors."""


class EmptyName(DxAuditError):
    """A disease name normalized to the empty string."""


class ParseError(DxAuditError):
    """A corpus or table line could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DuplicateRecordId(DxAuditError):
    """Two corpus records share a record_id."""


class BadCode(DxAuditError):
    """An ICD code does not match the 3/4/6-digit grammar."""


class DuplicateCode(DxAuditError):
    """An ICD table contains the same code twice."""


class EmptyLexicon(DxAuditError):
    """A matcher was requested for a lexicon with no entries."""


class WindowOverflow(DxAuditError):
    """A single disease surface is longer than the context budget."""


class BadPattern(DxAuditError):
    """An enumerator pattern failed to compile."""


class EmptyContext(DxAuditError):
    """Feature assembly was asked to mark an empty context."""


class ShapeMismatch(DxAuditError):
    """Model and sample dimensions disagree."""


class EmptyPool(DxAuditError):
    """The replacement disease pool is empty after exclusions."""


class DegenerateData(DxAuditError):
    """A training set is missing at least one class."""


class UnknownCode(DxAuditError):
    """A coded record references an ICD code absent from the table."""


class InsufficientCodes(DxAuditError):
    """The ICD table is too small to sample the requested pairs."""


class DegenerateBatch(DxAuditError):
    """A contrastive batch cannot be formed with >= 2 positive pairs."""


class ModelNotLoaded(DxAuditError):
    """The pipeline was run without a trained model."""


class MissingGroupRow(DxAuditError):
    """No (adrg, tier) row exists in the group table."""


class BadTemplate(DxAuditError):
    """A synthetic-corpus template is malformed."""
