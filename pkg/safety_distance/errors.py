class SafetyDistanceError(Exception):
    """Base class of every error raised by this package."""


class PolynomialParseError(SafetyDistanceError, ValueError):
    def __init__(self, message: str, text: str = "", position: int | None = None):
        self.text = text
        self.position = position
        if position is not None:
            message = f"{message} at position {position} in {text!r}"
        super().__init__(message)


class DimensionMismatchError(SafetyDistanceError, ValueError):
    pass


class ProblemFileError(SafetyDistanceError):
    """Malformed problem file; the message starts with the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class ModelError(SafetyDistanceError):
    """A moment program cannot be assembled from the given problem."""


class SizeGuardError(SafetyDistanceError):
    pass


class SolverError(SafetyDistanceError):
    pass


class IntegrationError(SafetyDistanceError, RuntimeError):
    pass


class ResolutionError(SafetyDistanceError):
    pass
