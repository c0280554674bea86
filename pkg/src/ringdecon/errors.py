"""Exception types raised across the package.

User errors (bad input, bad configuration) derive from ``UserInputError``;
failures of a numerical procedure derive from ``NumericalError``.  The CLI maps
the first family to exit code 1 and the second to exit code 2.
"""


class RdmError(Exception):
    """Base class for every error raised by ringdecon."""


class UserInputError(RdmError, ValueError):
    """Input or configuration that can never succeed."""


class NumericalError(RdmError, ArithmeticError):
    """A numerical procedure failed on otherwise valid input."""


class InvalidGridError(UserInputError):
    pass


class InvalidArgumentError(UserInputError):
    pass


class ImageFormatError(UserInputError):
    pass


class IntractableError(UserInputError):
    """Refused because the requested computation would be prohibitively slow."""


class EmptyCalibrationError(UserInputError):
    pass


class DegeneratePupilError(NumericalError):
    pass


class DegeneratePatchError(NumericalError):
    pass


class DegeneratePsfError(NumericalError):
    pass


class UninformativeInputError(NumericalError):
    pass


class DivergenceError(NumericalError):
    """Loss became non-finite.  The partial trace is kept on ``.trace``."""

    def __init__(self, message, trace=None, report=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
        self.report = report


class NonConvergenceError(NumericalError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report
