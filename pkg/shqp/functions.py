"""
SHQP Feasibility - Convex Function Oracles

Built-in convex functions for the inequality problem f(x) <= 0. Each
oracle returns the value and one subgradient. Max-type functions pick the
subgradient of an active piece; ties go to the lowest index by default
("lowest") or to the highest ("highest").
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any, List, Sequence, Tuple

import numpy as np

from .errors import ValidationError
from .model import as_vector

TIE_BREAKS = ("lowest", "highest")


def _select(values: np.ndarray, tie_break: str) -> int:
    """Index of the maximal entry, ties resolved by `tie_break`"""
    if tie_break == "lowest":
        return int(np.argmax(values))
    return int(values.size - 1 - np.argmax(values[::-1]))


def _check_tie_break(tie_break: str) -> str:
    if tie_break not in TIE_BREAKS:
        raise ValidationError("tie_break", f"must be one of {TIE_BREAKS}")
    return tie_break


class ConvexFunction(ABC):
    """A finite convex function on R^n with a subgradient oracle"""

    family: str = "function"

    def __init__(self, dim: int):
        self.dim = int(dim)

    @abstractmethod
    def evaluate(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        """(f(x), y) with y in the subdifferential of f at x"""

    def __call__(self, x: Any) -> float:
        return self.evaluate(as_vector(x, self.dim))[0]


class MaxAffine(ConvexFunction):
    """f(x) = max_k (a_k . x - b_k)"""

    family = "max_affine"

    def __init__(self, pieces: Sequence[Tuple[Any, float]], tie_break: str = "lowest"):
        if not pieces:
            raise ValidationError("pieces", "need at least one piece")
        first = as_vector(pieces[0][0], what="pieces[0].a")
        self.A = np.array([as_vector(a, first.size, what=f"pieces[{k}].a") for k, (a, _) in enumerate(pieces)])
        self.b = np.array([float(b) for _, b in pieces])
        self.tie_break = _check_tie_break(tie_break)
        super().__init__(first.size)

    @classmethod
    def zigzag(cls, tie_break: str = "lowest") -> "MaxAffine":
        """max(2 x1 - x2, 2 x2 - x1): subgradient projections zigzag toward 0"""
        return cls([((2.0, -1.0), 0.0), ((-1.0, 2.0), 0.0)], tie_break=tie_break)

    def evaluate(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        values = self.A @ x - self.b
        k = _select(values, self.tie_break)
        return float(values[k]), self.A[k].copy()


class NormMinusRadius(ConvexFunction):
    """f(x) = ||x - center|| - radius; a negative radius makes f > 0 everywhere"""

    family = "norm_minus_radius"

    def __init__(self, center: Any, radius: float):
        self.center = as_vector(center, what="center")
        if not np.isfinite(radius):
            raise ValidationError("radius", "must be finite")
        self.radius = float(radius)
        super().__init__(self.center.size)

    def evaluate(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        v = x - self.center
        nv = float(np.linalg.norm(v))
        if nv == 0.0:
            return -self.radius, np.zeros(self.dim)
        return nv - self.radius, v / nv


class QuadraticMaxAffine(ConvexFunction):
    """
    f(x) = max(1/2 (x - c)^T P (x - c) - rho, max_k (a_k . x - b_k)).

    The quadratic piece has index 0, affine pieces follow in order.
    """

    family = "quadratic_max_affine"

    def __init__(
        self,
        P: Any,
        center: Any,
        rho: float,
        pieces: Sequence[Tuple[Any, float]] = (),
        tie_break: str = "lowest",
    ):
        self.center = as_vector(center, what="center")
        n = self.center.size
        P = np.asarray(P, dtype=float)
        if P.shape != (n, n) or not np.all(np.isfinite(P)):
            raise ValidationError("P", f"must be a finite {n}x{n} matrix")
        if not np.allclose(P, P.T, rtol=1e-12, atol=1e-14):
            raise ValidationError("P", "must be symmetric")
        if np.linalg.eigvalsh(P).min() < -1e-12:
            raise ValidationError("P", "must be positive semidefinite")
        self.P = 0.5 * (P + P.T)
        self.rho = float(rho)
        self.A = np.array([as_vector(a, n, what=f"pieces[{k}].a") for k, (a, _) in enumerate(pieces)]).reshape(-1, n)
        self.b = np.array([float(b) for _, b in pieces])
        self.tie_break = _check_tie_break(tie_break)
        super().__init__(n)

    def evaluate(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        v = x - self.center
        Pv = self.P @ v
        values = np.concatenate([[0.5 * float(v @ Pv) - self.rho], self.A @ x - self.b])
        k = _select(values, self.tie_break)
        if k == 0:
            return float(values[0]), Pv
        return float(values[k]), self.A[k - 1].copy()


class GluedExponential(ConvexFunction):
    """
    One-dimensional f with f(x) = exp(-1/|x|) for 0 < |x| <= 0.5, f(0) = 0,
    continued by its tangent line for |x| > 0.5.

    The only zero is x = 0 where f has every derivative 0, so subgradient
    steps x -> x - x^2 slow down and no linear rate holds.
    """

    family = "glued_exponential"

    _KNOT = 0.5

    def __init__(self):
        super().__init__(1)
        self._knot_value = float(np.exp(-1.0 / self._KNOT))
        self._knot_slope = self._knot_value / self._KNOT**2

    def evaluate(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        t = abs(float(x[0]))
        sign = 1.0 if x[0] >= 0.0 else -1.0
        if t == 0.0:
            return 0.0, np.zeros(1)
        if t <= self._KNOT:
            value = float(np.exp(-1.0 / t))
            return value, np.array([sign * value / (t * t)])
        value = self._knot_value + self._knot_slope * (t - self._KNOT)
        return value, np.array([sign * self._knot_slope])


class MaxOfFunctions(ConvexFunction):
    """
    f = max_l f_l for a list of convex functions; the subgradient is the
    one reported by the selected piece.
    """

    family = "max_of"

    def __init__(self, functions: Sequence[ConvexFunction], tie_break: str = "lowest"):
        if not functions:
            raise ValidationError("functions", "need at least one function")
        dims = {f.dim for f in functions}
        if len(dims) != 1:
            raise ValidationError("functions", "dimensions disagree")
        self.functions: List[ConvexFunction] = list(functions)
        self.tie_break = _check_tie_break(tie_break)
        super().__init__(dims.pop())

    def evaluate(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        evaluated = [f.evaluate(x) for f in self.functions]
        k = _select(np.array([v for v, _ in evaluated]), self.tie_break)
        return evaluated[k]
