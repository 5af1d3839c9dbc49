"""Exception hierarchy shared by the toolkit.

Every error carries a stable ``kind`` string that the service layer maps to
HTTP responses and the CLI maps to exit codes (argument/validation family ->
exit 2, I/O -> exit 1).
"""

from __future__ import annotations


class NubbleMatchError(Exception):
    """Base class for all toolkit errors."""

    kind = "error"


class ArgumentError(NubbleMatchError):
    """A parameter value violates an operation's contract."""

    kind = "argument"


class BoundError(ArgumentError):
    """An input exceeds an enforced size bound."""

    kind = "bound"


class ValidationError(NubbleMatchError):
    """Data content violates a type invariant (NaN/Inf, bad mask values, ...)."""

    kind = "validation"


class PreconditionError(ValidationError):
    """An operation's stated precondition does not hold (e.g. grid not normalized)."""

    kind = "precondition"


class DimensionError(NubbleMatchError):
    """Shapes of two inputs do not line up."""

    kind = "dimension"


class FormatError(NubbleMatchError):
    """A file is structurally malformed (bad magic, truncated payload, ...)."""

    kind = "format"


class UnsupportedFormatError(FormatError):
    """A file is well-formed but uses a dtype/rank outside the interchange contract."""

    kind = "unsupported-format"
