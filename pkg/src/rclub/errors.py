"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A precondition on an argument was violated."""


class NumericFailure(ArithmeticError):
    """An internal numeric invariant could not be restored."""


class UndefinedResult(ValueError):
    """The requested quantity is undefined for the given input."""


class ConvergenceError(RuntimeError):
    """An iterative method did not converge.

    The achieved residual is kept on ``residual``.
    """

    def __init__(self, message, residual):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class ConfigError(ValueError):
    """Invalid or unknown configuration entry."""


class ParseError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


class InvariantViolation(RuntimeError):
    """A run-time property check failed; the message carries the diagnostic."""
