"""Exception hierarchy shared across the package."""
from __future__ import annotations


class AggifyError(Exception):
    """Base class; carries an optional source span."""

    def __init__(self, message, span=None):
        self.message = message
        self.span = span
        super().__init__(self.format())

    def format(self):
        if self.span is not None:
            return f"{self.span.line}:{self.span.col}: {self.message}"
        return self.message


class LexError(AggifyError):
    pass


class ParseError(AggifyError):
    pass


class UnsupportedConstruct(ParseError):
    """Construct outside the dialect (BREAK, TRY/CATCH, persistent DML, ...)."""


class MalformedCursorUse(AggifyError):
    """Cursor fetched outside a recognized loop, re-declared while open,
    or driven by a query that reads loop-written variables."""


class SchemaError(AggifyError):
    pass


class DuplicateTable(SchemaError):
    pass


class CslTypeError(AggifyError):
    """Operand type fault during evaluation."""


class CslRuntimeError(AggifyError):
    """Runtime fault: division by zero, bad coercion, cardinality violation."""


class ArithmeticOverflow(CslRuntimeError):
    """Result left the signed 64-bit range."""


class UnknownAggregate(CslRuntimeError):
    pass


class DepthExceeded(CslRuntimeError):
    """Recursive query iterated past the configured cap."""


class EmptyTerminate(AggifyError):
    """Synthesized aggregate would return nothing observable."""


class NotConvertible(AggifyError):
    """FOR loop that cannot be phrased as a cursor over a recursive query."""
