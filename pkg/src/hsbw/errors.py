"""Exception hierarchy. Each family maps onto a CLI exit code."""


class HSBWError(Exception):
    exit_code = 1


class SchemaError(HSBWError):
    """Input files or arrays do not match the expected layout."""

    exit_code = 2


class ParseError(SchemaError):
    pass


class IntegrityError(SchemaError):
    pass


class DomainError(HSBWError, ValueError):
    """An argument lies outside its admissible range."""

    exit_code = 2


class InfeasibleError(HSBWError):
    """The balance constraints cannot be met.

    Attributes
    ----------
    max_violation : float
        Smallest achievable worst-row violation beyond the tolerances.
    """

    exit_code = 3

    def __init__(self, message, max_violation=float("nan")):
        super().__init__(message)
        self.max_violation = max_violation


class AugmentationInfeasibleError(InfeasibleError):
    pass


class FoldFailureError(InfeasibleError):
    def __init__(self, message, state=None, max_violation=float("nan")):
        super().__init__(message, max_violation)
        self.state = state


class NumericalError(HSBWError, ArithmeticError):
    exit_code = 4


class RankDeficiencyError(NumericalError):
    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column
