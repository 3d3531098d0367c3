"""Exception hierarchy shared across the toolkit.

Every domain error derives from :class:`MMTPPError` so the CLI can map any
failure inside the pipeline onto exit code 1 with a structured payload,
keeping exit code 2 for usage errors.
"""

from __future__ import annotations


class MMTPPError(Exception):
    """Base class for all domain errors raised by this package."""


# events
class NonMonotoneTimeError(MMTPPError):
    """Event times are not strictly increasing; carries the 1-based index."""

    def __init__(self, index: int, message: str | None = None):
        self.index = index
        super().__init__(message or f"non-monotone event time at index {index}")


class NonFiniteTimeError(MMTPPError):
    pass


class TypeOutOfRangeError(MMTPPError):
    pass


class HorizonError(MMTPPError):
    """Horizon is non-positive or smaller than the last event time."""


class ParseError(MMTPPError):
    """Malformed input file; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class SchemaError(MMTPPError):
    """A required field is missing or has the wrong type."""


# timecodec
class NonFiniteIntervalError(MMTPPError):
    pass


class NegativeIntervalError(MMTPPError):
    pass


class WrongArityError(MMTPPError):
    """A time-byte group must contain exactly four byte tokens."""


# templating
class UnknownTypeError(MMTPPError):
    pass


class TextEncodingError(MMTPPError):
    pass


class BudgetTooSmallError(MMTPPError):
    pass


class GrammarError(MMTPPError):
    """Token stream violates the event grammar.

    Carries the position of the offending token and what was expected there.
    """

    def __init__(self, position: int, expected: str, found: str):
        self.position = position
        self.expected = expected
        self.found = found
        super().__init__(
            f"at position {position}: expected {expected}, found {found}"
        )


class TooShortSequenceError(MMTPPError):
    pass


# compression
class EmptySeriesError(MMTPPError):
    pass


# tpp_models
class UnstableModelError(MMTPPError):
    pass


class DivergedOptimizationError(MMTPPError):
    pass


class QuadratureFailureError(MMTPPError):
    pass


# toylm
class ContextOverflowError(MMTPPError):
    pass


class FeatureCountMismatchError(MMTPPError):
    pass


class NonFiniteLossError(MMTPPError):
    pass


# taxi pipeline
class OutOfCoverageError(MMTPPError):
    pass


class MissingLandmarkError(MMTPPError):
    pass


class InsufficientCandidatesError(MMTPPError):
    pass


# evalharness
class EmptyAfterExclusionError(MMTPPError):
    pass


class LengthMismatchError(MMTPPError):
    pass
