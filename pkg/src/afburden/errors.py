"""Exception types shared across the package."""


class AfBurdenError(Exception):
    """Base class for package errors."""


class ValidationError(AfBurdenError, ValueError):
    """Input violates a documented invariant."""


class ParseError(AfBurdenError, ValueError):
    """Malformed input file.

    ``location`` is a line number for text formats and a byte offset for
    binary ones.
    """

    def __init__(self, message, location=None):
        self.location = location
        super().__init__(message if location is None else f"{message} (at {location})")


class ShapeError(AfBurdenError, ValueError):
    pass


class NumericError(AfBurdenError, ArithmeticError):
    pass


class ConvergenceError(AfBurdenError, RuntimeError):
    def __init__(self, message, grad_norm):
        self.grad_norm = grad_norm
        super().__init__(f"{message} (final gradient norm {grad_norm:.3e})")
