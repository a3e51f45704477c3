class InvalidArgumentError(ValueError):
    """Raised when an input violates an operation's preconditions."""


class DegenerateInputError(InvalidArgumentError):
    """Raised when inputs are well-formed but geometrically degenerate."""


class GradientPropagationError(ArithmeticError):
    """Raised when a finite-difference evaluation produces non-finite values."""

    def __init__(self, column, message=None):
        self.column = column
        super().__init__(message or f"non-finite function value while perturbing column {column}")
