"""Exception hierarchy shared by every module."""


class CWLabelError(Exception):
    """Base class for all domain errors raised by the package."""


class KExprError(CWLabelError):
    """An expression is structurally invalid."""


class ParseError(KExprError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class NotProperError(CWLabelError):
    """A union tree that must be proper is not."""


class DecompositionError(CWLabelError):
    """An internal invariant of the balanced decomposition was violated."""


class LabelError(CWLabelError):
    """Malformed, truncated, or incompatible label payloads."""


class FormatError(CWLabelError):
    """Malformed .kx/.edges/.cwl file content."""
