"""
Error taxonomy shared by the solver modules, the CLI and the HTTP service.
"""
from typing import Any, List, Optional


class ChoquardError(Exception):
    """Base class for every error raised by the solver"""


class ParameterError(ChoquardError, ValueError):
    """An input parameter lies outside its admissible range

    Attributes:
        violations: One entry per violated inequality, each naming the
            inequality and its admissible interval
    """

    def __init__(self, message: str, violations: Optional[List[str]] = None):
        self.violations = list(violations) if violations else [message]
        super().__init__(message)


class PotentialViolationError(ParameterError):
    """The sampled potential is not bounded below by a positive constant"""


class DegenerateInputError(ChoquardError):
    """Zero field, one-signed field or another input with no meaningful answer"""


class UnsupportedRegimeError(ChoquardError):
    """Parameters outside the regime where the operation is well-defined"""


class UnsupportedConfigurationError(ChoquardError):
    """The requested combination of inputs is not supported"""


class NoRootError(ChoquardError):
    """The Nehari scaling equation has no positive root"""


class PreconditionError(ChoquardError):
    """An operation was called on an input violating its precondition"""


class ConsistencyError(ChoquardError):
    """Two evaluation paths of the same quantity disagree"""


class NonConvergenceError(ChoquardError):
    """An iterative method hit its iteration cap

    Attributes:
        last_residual: Last residual reached, when meaningful
        report: Partial solve report, when available
    """

    def __init__(self, message: str, last_residual: Optional[float] = None, report: Any = None):
        self.last_residual = last_residual
        self.report = report
        super().__init__(message)


class NodalCollapseError(NonConvergenceError):
    """One nodal part of a sign-changing iterate vanished"""
