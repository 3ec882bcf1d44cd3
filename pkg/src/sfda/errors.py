"""Exception hierarchy.

Validation problems (bad input, bad parameters) and numerical failures
(singular systems, degenerate scores) are kept apart so the CLI can map
them to distinct exit codes.
"""


class SFDAError(Exception):
    """Base class for all package errors."""


class ValidationError(SFDAError, ValueError):
    """Input data or a parameter violates a documented precondition."""


class NumericalError(SFDAError, ArithmeticError):
    """A computation could not be carried out reliably."""


class RankDeficiencyError(NumericalError):
    """The null-space design has fewer distinct points than its dimension."""


class DegenerateGCVError(NumericalError):
    """tr(I - S) vanishes, so the GCV score is undefined."""


class FormatError(ValidationError):
    """An input file does not follow the expected layout."""
