"""
SHQP Feasibility - Errors

Every failure raised by the package derives from FeasibilityError.
Input-validation failures also derive from ValueError so callers can
catch them the usual way.

Outcomes such as infeasibility or divergence are results, not errors;
they are returned by the solvers (see model.py), never raised.
"""

from __future__ import annotations

from typing import Any, Optional


class FeasibilityError(Exception):
    """Root of the package exception hierarchy"""


class ValidationError(FeasibilityError, ValueError):
    """A parameter violates the invariant of the type it configures"""

    def __init__(self, field: str, constraint: str):
        self.field = field
        self.constraint = constraint
        super().__init__(f"{field}: {constraint}")


class DimensionMismatch(FeasibilityError, ValueError):
    """Two objects of one problem disagree on the ambient dimension"""

    def __init__(self, expected: int, got: int, what: str = "vector"):
        self.expected = expected
        self.got = got
        super().__init__(f"{what} has dimension {got}, expected {expected}")


class LambdaOutOfRange(FeasibilityError, ValueError):
    """Relaxation parameter outside [0, 2]"""


class ZeroVector(FeasibilityError, ValueError):
    """An angle was requested against the zero vector"""


class ConfigInvalid(FeasibilityError, ValueError):
    """Solver configuration failed validation"""


class EllipsoidRootFindFailure(FeasibilityError):
    """The Lagrange multiplier of an ellipsoid projection could not be bracketed"""


class PointInsideSet(FeasibilityError):
    """No separating halfspace exists because the point is already in the set"""


class ZeroSubgradientAtPositiveValue(FeasibilityError):
    """
    0 is a subgradient at a point where f is positive.

    By convexity f is then bounded below by a positive number, so the
    inequality f(x) <= 0 has no solution.
    """

    def __init__(self, value: float, point: Any = None):
        self.value = value
        self.point = point
        super().__init__(f"zero subgradient at a point with f(x) = {value:.6g} > 0")


class DegenerateConstraintSet(FeasibilityError):
    """The dual active-set solver cycled on numerically dependent normals"""


class EmptySelection(FeasibilityError):
    """No halfspace was generated in the requested round"""


class ZeroAggregateNormal(FeasibilityError):
    """
    The weighted sum of normals vanished during aggregation.

    When the weighted sum of offsets is negative the weights are a Farkas
    certificate; it is attached as `certificate`.
    """

    def __init__(self, message: str, certificate: Optional[Any] = None):
        self.certificate = certificate
        super().__init__(message)


class TooFewIterations(FeasibilityError):
    """A trace is too short for the requested diagnostic"""


class NotDiverging(FeasibilityError):
    """A recession report was requested for a run that did not diverge"""


class ParseError(FeasibilityError):
    """A problem or trace file could not be read"""

    def __init__(self, location: str, message: str):
        self.location = location
        self.message = message
        super().__init__(f"{location}: {message}")
