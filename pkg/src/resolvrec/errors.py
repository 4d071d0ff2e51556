"""Exception hierarchy.

Everything raised on purpose derives from :class:`ResolvRecError`, so the
CLI can map domain failures to exit code 1 without swallowing bugs.
"""


class ResolvRecError(Exception):
    """Base class for all domain errors."""


class SchemaError(ResolvRecError):
    pass


class DuplicateKeyError(ResolvRecError):
    pass


class EmptyInputError(ResolvRecError):
    pass


class EmptyAfterCleanError(ResolvRecError):
    pass


class TooSmallError(ResolvRecError):
    pass


class FilterTooStrictError(ResolvRecError):
    pass


class FormatError(ResolvRecError):
    pass


class InfeasibleError(ResolvRecError):
    pass


class ShapeError(ResolvRecError, ValueError):
    pass


class NumericError(ResolvRecError, ArithmeticError):
    pass


class AlignmentError(ResolvRecError):
    pass


class InvalidTicketError(ResolvRecError):
    pass


class CorruptionError(ResolvRecError):
    pass


class VersionError(ResolvRecError):
    pass


class TooFewRecentError(ResolvRecError):
    pass


class ConfigError(ResolvRecError):
    pass


class StageError(ResolvRecError):
    """A training stage failed; ``stage`` names it, ``__cause__`` holds the original."""

    def __init__(self, stage, cause):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
