"""Exception types shared across the package."""


class FracCtlError(Exception):
    """Base class for all package errors."""


class NonConvergent(FracCtlError, ArithmeticError):
    """A series or quadrature did not reach its tolerance.

    ``value`` holds the best available estimate (may be ``None``).
    """

    def __init__(self, message, value=None):
        super().__init__(message)
        self.value = value


class DimensionMismatch(FracCtlError, ValueError):
    pass


class AdaptednessViolation(FracCtlError, LookupError):
    """An integrand asked for information from a future grid node."""


class InvalidInterval(FracCtlError, ValueError):
    pass


class EmptyInterval(FracCtlError, ValueError):
    pass


class GridMismatch(FracCtlError, ValueError):
    pass


class MissingConstant(FracCtlError, KeyError):
    pass


class NotConverged(FracCtlError, RuntimeError):
    """Picard iteration hit ``max_iter``; ``report`` carries the diagnostics."""

    def __init__(self, message, report=None, result=None):
        super().__init__(message)
        self.report = report
        self.result = result


class ParseError(FracCtlError, ValueError):
    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class ValidationError(FracCtlError, ValueError):
    def __init__(self, key, message):
        super().__init__(f"{key}: {message}")
        self.key = key
