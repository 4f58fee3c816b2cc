"""Exception types shared across the package.

Two families matter to callers: ``ValidationError`` (bad input, exit code 2
in the command line runner) and ``ConvergenceError`` (an iterative method
gave up, exit code 3).
"""


class ValidationError(ValueError):
    """Input rejected before or during a computation."""


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before meeting its tolerance.

    Parameters
    ----------
    message : str
        Human readable description.
    last : object, optional
        Last iterate, kept so the caller can inspect or restart from it.
    residual : float, optional
        Residual at the last iterate.
    """

    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual


class InvalidWellsError(ValidationError):
    pass


class DegenerateTensionError(ValidationError):
    pass


class TriangleViolationError(ValidationError):
    pass


class TruncationTooSmallError(ValidationError):
    pass


class InsufficientTailError(ValidationError):
    pass


class OnCurveError(ValidationError):
    pass


class ArcTooShortError(ValidationError):
    pass


class OutOfFootprintError(ValidationError):
    pass


class InvalidScheduleError(ValidationError):
    pass


class DomainError(ValidationError):
    """A circle, ball or annulus leaves the field's domain."""


class FieldFormatError(ValidationError):
    """Malformed field file; ``offset`` is the byte offset of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class FieldVersionError(FieldFormatError):
    pass


class UnsupportedTopologyError(ValidationError):
    pass


class DeltaTooLargeError(ValidationError):
    pass


class LabelingError(ValidationError):
    pass
