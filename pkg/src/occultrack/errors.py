"""Exception hierarchy shared by all occultrack modules."""


class OccultrackError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgumentError(OccultrackError, ValueError):
    pass


class ParseError(OccultrackError, ValueError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(OccultrackError, ValueError):
    pass


class InsufficientDataError(OccultrackError):
    pass


class DegenerateGeometryError(OccultrackError, ArithmeticError):
    pass


class SingularityError(OccultrackError, ArithmeticError):
    pass


class CalibrationError(OccultrackError):
    pass
