"""
Exception hierarchy for pathcalc.

Argument-type failures also derive from ValueError so callers may catch either.
Property failures (a residual over tolerance) are never raised; they are
reported with passed=False on the report object.
"""


class PathCalcError(Exception):
    """Root of every error raised by pathcalc."""

    kind = "pathcalc"

    def one_line(self) -> str:
        """Machine-parsable single-line reason: '<kind>: <message>'."""
        message = " ".join(str(self).split())
        return f"{self.kind}: {message}"


class DomainError(PathCalcError, ValueError):
    """A time or order outside the domain on which the operation is defined."""

    kind = "domain"


class ArgumentError(PathCalcError, ValueError):
    kind = "argument"


class GridMismatchError(ArgumentError):
    kind = "grid-mismatch"


class LengthMismatchError(ArgumentError):
    kind = "length-mismatch"


class UnsupportedOrderError(PathCalcError, ValueError):
    kind = "unsupported-order"


class UnsupportedFunctionalError(PathCalcError):
    """The functional lacks what the check needs (analytic derivatives, a lattice)."""

    kind = "unsupported-functional"


class NonConvexFunctionalError(UnsupportedFunctionalError):
    kind = "non-convex"


class ConventionError(PathCalcError):
    kind = "convention"


class ConfigError(PathCalcError):
    """Bad command-line or configuration-file input."""

    kind = "config"
