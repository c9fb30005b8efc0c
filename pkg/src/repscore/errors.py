"""Exception types shared across the package."""


class DataValidationError(ValueError):
    """Raised when an input dataset, file or matrix violates the documented format."""


class NumericError(ArithmeticError):
    """Raised when a numeric invariant breaks (non-finite loss or gradients)."""


class TrainingDiverged(NumericError):
    """Training hit a non-finite loss/gradient.

    Carries the best finite state reached so far in ``partial_result`` so callers
    (e.g. the sweep runner) can score the run with its best finite checkpoint.
    """

    def __init__(self, message, partial_result=None):
        super().__init__(message)
        self.partial_result = partial_result
