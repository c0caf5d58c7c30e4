"""Exception hierarchy shared by all modules.

``DataError`` signals bad input (exit code 2 on the command line);
``NumericalError`` and its subclasses signal a fitting or root-finding
failure (exit code 3).
"""


class StdMarkerError(Exception):
    pass


class DataError(StdMarkerError, ValueError):
    pass


class NumericalError(StdMarkerError, ArithmeticError):
    pass


class ConvergenceError(NumericalError):
    pass


class SeparationError(NumericalError):
    pass


class NonConcaveFitError(NumericalError):
    """Fitted log-derivative is not nonincreasing, so risk is not monotone in U."""
