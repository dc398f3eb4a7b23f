"""Exception hierarchy shared by every ohmstat module."""

from typing import Any, Dict, Optional


class OhmstatError(Exception):
    """Base class for ohmstat errors"""


class DomainError(OhmstatError, ValueError):
    """Point, edge, box or parameter outside the admissible domain"""


class RangeError(OhmstatError, ValueError):
    """Conductance value outside the ellipticity window [lam, 1/lam]"""


class PreconditionError(OhmstatError, ValueError):
    """Input violates the documented precondition of an operation"""


class NumericalError(OhmstatError, ArithmeticError):
    """Base class for numerical failures (exit code 3 in the CLI)"""


class SolverError(NumericalError):
    """Conjugate gradient did not reach the tolerance within the iteration cap"""

    def __init__(self, message: str, report: Any = None):
        super().__init__(message)
        self.report = report


class ContractionError(NumericalError):
    """The fixed-point map is not a contraction for the given environment"""

    def __init__(self, message: str, product: float):
        super().__init__(message)
        self.product = product


class QuadratureError(NumericalError):
    """Two quadrature routes disagree beyond tolerance after refinement"""


class IdentityError(NumericalError):
    """An identity check exceeded its tolerance"""

    def __init__(self, message: str, residuals: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.residuals = residuals or {}
