"""Exception hierarchy.

Everything raised on purpose derives from :class:`UDAError`, so callers (and
the CLI) can tell a data problem from a programming error.
"""


class UDAError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(UDAError, ValueError):
    pass


class ParameterError(UDAError, ValueError):
    pass


class ZeroVectorError(UDAError, ValueError):
    def __init__(self, row: int, what: str = "row"):
        self.row = row
        super().__init__(f"{what} {row} has zero norm")


class EmptyIdentityError(UDAError, ValueError):
    def __init__(self, identity: int):
        self.identity = identity
        super().__init__(f"identity {identity} has no samples")


class EmptyMemoryError(UDAError, ValueError):
    pass


class CostMatrixError(UDAError, ValueError):
    pass


class LabelError(UDAError, ValueError):
    pass


class DomainError(UDAError, ValueError):
    pass


class ModalityGapError(UDAError, ValueError):
    def __init__(self, identity: int, missing: str):
        self.identity = identity
        self.missing = missing
        super().__init__(f"identity {identity} has no {missing} samples")


class DegenerateStageError(UDAError, RuntimeError):
    pass


# file format errors; all carry the byte offset where parsing failed


class EmbeddingFormatError(UDAError, ValueError):
    def __init__(self, message: str, offset: int):
        self.offset = offset
        super().__init__(f"{message} (byte offset {offset})")


class BadMagicError(EmbeddingFormatError):
    pass


class UnsupportedVersionError(EmbeddingFormatError):
    pass


class TruncatedPayloadError(EmbeddingFormatError):
    pass


class TrailingDataError(EmbeddingFormatError):
    pass


class NonFiniteValueError(EmbeddingFormatError):
    pass


class MetadataError(UDAError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(message + where)


class RowCountMismatchError(MetadataError):
    pass


class ConfigError(UDAError, ValueError):
    pass
