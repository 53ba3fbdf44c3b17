"""Exception types raised across the package."""


class EvorbitError(Exception):
    """Base class for all package errors."""


class EventParseError(EvorbitError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(EvorbitError, ValueError):
    pass


class BoundsError(EvorbitError, IndexError):
    pass


class EmptyStream(EvorbitError):
    pass


class DegenerateGeometry(EvorbitError):
    pass


class BehindCamera(EvorbitError):
    pass


class InvalidInitialization(EvorbitError):
    pass


class StageError(EvorbitError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")
