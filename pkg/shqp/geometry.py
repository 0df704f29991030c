"""
SHQP Feasibility - Geometry

Exact projection oracles for closed convex sets, supporting-halfspace and
subgradient-halfspace construction, and the relaxation operator.

Every oracle is immutable after construction. `project` returns the
nearest point together with the offset x - P(x); offsets are assembled
from closed forms where possible rather than by subtracting two nearby
points, so that tiny separations keep their relative precision.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from typing import TYPE_CHECKING, Any, Dict, Sequence, Tuple

import numpy as np
from scipy import linalg, optimize

from .errors import (
    EllipsoidRootFindFailure,
    LambdaOutOfRange,
    PointInsideSet,
    ValidationError,
    ZeroSubgradientAtPositiveValue,
)
from .model import FUNCTION_INDEX, ProjectionResult, Tag, TaggedHalfspace, as_vector

if TYPE_CHECKING:
    from .functions import ConvexFunction

logger = logging.getLogger(__name__)

DEFAULT_TOL_FEAS = 1e-9

# Geometric growth cap for the ellipsoid multiplier bracket.
_MAX_BRACKET_DOUBLINGS = 200


class ConvexSet(ABC):
    """A nonempty closed convex subset of R^n with an exact projection"""

    type_name: str = "set"

    def __init__(self, dim: int):
        self.dim = int(dim)

    @abstractmethod
    def project(self, x: np.ndarray) -> ProjectionResult:
        """Nearest point of the set to `x`"""

    @abstractmethod
    def reference_point(self) -> np.ndarray:
        """Some point of the set; used as the hub for `sample`"""

    def contains(self, x: np.ndarray, tol: float = DEFAULT_TOL_FEAS) -> bool:
        return self.project(as_vector(x, self.dim)).distance <= tol

    def sample(self, rng: np.random.Generator, count: int, scale: float = 3.0) -> np.ndarray:
        """
        Points of the set: segments between the reference point and the
        projections of Gaussian perturbations.
        """
        hub = self.reference_point()
        out = np.empty((count, self.dim))
        for k in range(count):
            trial = hub + scale * rng.standard_normal(self.dim)
            theta = rng.uniform(0.0, 1.0)
            out[k] = hub + theta * (self.project(trial).point - hub)
        return out

    def _check(self, x: Any) -> np.ndarray:
        return as_vector(x, self.dim, what="point")

    def _inside(self, x: np.ndarray) -> ProjectionResult:
        return ProjectionResult(point=x.copy(), distance=0.0, offset=np.zeros_like(x))

    def _result(self, x: np.ndarray, offset: np.ndarray) -> ProjectionResult:
        return ProjectionResult(point=x - offset, distance=float(np.linalg.norm(offset)), offset=offset)


def _nonzero_normal(a: Any, field: str = "a") -> np.ndarray:
    a = as_vector(a, what=field)
    if not np.any(a):
        raise ValidationError(field, "normal must be nonzero")
    return a


# ============================================================================
# Closed-form sets
# ============================================================================

class Halfspace(ConvexSet):
    """{z : a . z <= b}"""

    type_name = "halfspace"

    def __init__(self, a: Any, b: float):
        self.a = _nonzero_normal(a)
        self.b = float(b)
        self._a2 = float(self.a @ self.a)
        super().__init__(self.a.size)

    def project(self, x: Any) -> ProjectionResult:
        x = self._check(x)
        s = float(self.a @ x) - self.b
        if s <= 0.0:
            return self._inside(x)
        return self._result(x, (s / self._a2) * self.a)

    def reference_point(self) -> np.ndarray:
        return (self.b / self._a2) * self.a


class Hyperplane(ConvexSet):
    """{z : a . z = b}"""

    type_name = "hyperplane"

    def __init__(self, a: Any, b: float):
        self.a = _nonzero_normal(a)
        self.b = float(b)
        self._a2 = float(self.a @ self.a)
        super().__init__(self.a.size)

    def project(self, x: Any) -> ProjectionResult:
        x = self._check(x)
        s = float(self.a @ x) - self.b
        if s == 0.0:
            return self._inside(x)
        return self._result(x, (s / self._a2) * self.a)

    def reference_point(self) -> np.ndarray:
        return (self.b / self._a2) * self.a


class Ball(ConvexSet):
    """{z : ||z - center|| <= radius}"""

    type_name = "ball"

    def __init__(self, center: Any, radius: float):
        self.center = as_vector(center, what="center")
        if not np.isfinite(radius) or radius <= 0.0:
            raise ValidationError("radius", "must be positive")
        self.radius = float(radius)
        super().__init__(self.center.size)

    def project(self, x: Any) -> ProjectionResult:
        x = self._check(x)
        v = x - self.center
        nv = float(np.linalg.norm(v))
        if nv <= self.radius:
            return self._inside(x)
        offset = (1.0 - self.radius / nv) * v
        point = self.center + (self.radius / nv) * v
        return ProjectionResult(point=point, distance=nv - self.radius, offset=offset)

    def reference_point(self) -> np.ndarray:
        return self.center.copy()


class Box(ConvexSet):
    """{z : lo <= z <= hi} componentwise"""

    type_name = "box"

    def __init__(self, lo: Any, hi: Any):
        self.lo = as_vector(lo, what="lo")
        self.hi = as_vector(hi, self.lo.size, what="hi")
        if np.any(self.lo > self.hi):
            raise ValidationError("lo", "must not exceed hi componentwise")
        super().__init__(self.lo.size)

    def project(self, x: Any) -> ProjectionResult:
        x = self._check(x)
        point = np.clip(x, self.lo, self.hi)
        offset = x - point
        return ProjectionResult(point=point, distance=float(np.linalg.norm(offset)), offset=offset)

    def reference_point(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)


class AffineSubspace(ConvexSet):
    """
    {z : a_k . z = b_k for every row k}.

    Rows must be linearly independent. The projection uses a dense QR of
    the transposed row matrix.
    """

    type_name = "affine"

    def __init__(self, rows: Sequence[Tuple[Any, float]]):
        if not rows:
            raise ValidationError("rows", "need at least one row")
        first = as_vector(rows[0][0], what="rows[0].a")
        self.A = np.array([as_vector(a, first.size, what=f"rows[{k}].a") for k, (a, _) in enumerate(rows)])
        self.b = np.array([float(b) for _, b in rows])
        if self.A.shape[0] > first.size:
            raise ValidationError("rows", "more rows than the dimension")
        self._Q, self._R = linalg.qr(self.A.T, mode="economic")
        diag = np.abs(np.diag(self._R))
        if diag.min() <= 1e-12 * max(diag.max(), 1.0):
            raise ValidationError("rows", "normals must be linearly independent")
        super().__init__(first.size)

    def project(self, x: Any) -> ProjectionResult:
        x = self._check(x)
        residual = self.A @ x - self.b
        if not np.any(residual):
            return self._inside(x)
        coeffs = linalg.solve_triangular(self._R, residual, trans="T")
        return self._result(x, self._Q @ coeffs)

    def reference_point(self) -> np.ndarray:
        return self.project(np.zeros(self.dim)).point


class Ellipsoid(ConvexSet):
    """
    {z : (z - center)^T Q (z - center) <= 1} for symmetric positive definite Q.

    The projection solves for the single Lagrange multiplier mu >= 0 of
    the boundary equation in the eigenbasis of Q; the bracket [0, mu_max]
    grows geometrically before a Brent root find.
    """

    type_name = "ellipsoid"

    def __init__(self, Q: Any, center: Any):
        self.center = as_vector(center, what="center")
        n = self.center.size
        Q = np.asarray(Q, dtype=float)
        if Q.shape != (n, n):
            raise ValidationError("Q", f"must be a {n}x{n} matrix")
        if not np.all(np.isfinite(Q)) or not np.allclose(Q, Q.T, rtol=1e-12, atol=1e-14):
            raise ValidationError("Q", "must be symmetric with finite entries")
        try:
            linalg.cholesky(Q, lower=True)
        except linalg.LinAlgError:
            raise ValidationError("Q", "must be positive definite") from None
        self.Q = 0.5 * (Q + Q.T)
        self._eig, self._V = linalg.eigh(self.Q)
        super().__init__(n)

    def boundary_residual(self, mu: float, w: np.ndarray) -> float:
        return float(np.sum(self._eig * w**2 / (1.0 + mu * self._eig) ** 2)) - 1.0

    def project(self, x: Any) -> ProjectionResult:
        x = self._check(x)
        w = self._V.T @ (x - self.center)
        if float(np.sum(self._eig * w**2)) <= 1.0:
            return self._inside(x)
        mu_hi = 1.0
        for _ in range(_MAX_BRACKET_DOUBLINGS):
            if self.boundary_residual(mu_hi, w) <= 0.0:
                break
            mu_hi *= 2.0
        else:
            raise EllipsoidRootFindFailure(
                f"multiplier bracket not found below {mu_hi:.3g}; Q may be ill-conditioned"
            )
        if self.boundary_residual(mu_hi, w) == 0.0:
            mu = mu_hi
        else:
            mu = optimize.brentq(self.boundary_residual, 0.0, mu_hi, args=(w,), xtol=1e-300, maxiter=500)
        logger.debug("ellipsoid multiplier %.6g (bracket %.3g)", mu, mu_hi)
        scaled = mu * self._eig
        point = self.center + self._V @ (w / (1.0 + scaled))
        offset = self._V @ (w * scaled / (1.0 + scaled))
        return ProjectionResult(point=point, distance=float(np.linalg.norm(offset)), offset=offset)

    def reference_point(self) -> np.ndarray:
        return self.center.copy()


class Polyhedron(ConvexSet):
    """
    Intersection of finitely many halfspaces; projected by the dual
    active-set QP solver.
    """

    type_name = "polyhedron"

    def __init__(self, halfspaces: Sequence[Tuple[Any, float]]):
        from .qp import QpInfeasible, QpProblem, gi_solve

        if not halfspaces:
            raise ValidationError("halfspaces", "need at least one halfspace")
        first = _nonzero_normal(halfspaces[0][0], "halfspaces[0].a")
        rows = [_nonzero_normal(a, f"halfspaces[{k}].a") for k, (a, _) in enumerate(halfspaces)]
        for k, row in enumerate(rows):
            if row.size != first.size:
                raise ValidationError(f"halfspaces[{k}].a", f"expected dimension {first.size}")
        norms = np.linalg.norm(rows, axis=1)
        self.normals = np.array(rows) / norms[:, None]
        self.offsets = np.array([float(b) for _, b in halfspaces]) / norms
        super().__init__(first.size)
        check = gi_solve(QpProblem(np.zeros(self.dim), self.normals, self.offsets))
        if isinstance(check, QpInfeasible):
            raise ValidationError("halfspaces", "polyhedron is empty")
        self._hub = check.point

    def project(self, x: Any) -> ProjectionResult:
        from .qp import QpProblem, Solved, gi_solve

        x = self._check(x)
        if np.all(self.normals @ x - self.offsets <= 0.0):
            return self._inside(x)
        result = gi_solve(QpProblem(x, self.normals, self.offsets), feas_tol=1e-12)
        if not isinstance(result, Solved):
            raise ValidationError("halfspaces", "polyhedron is empty")
        # KKT: x - P(x) = sum of active duals times normals.
        offset = result.duals @ self.normals[result.active] if result.active else np.zeros(self.dim)
        return ProjectionResult(point=result.point, distance=float(np.linalg.norm(offset)), offset=offset)

    def reference_point(self) -> np.ndarray:
        return self._hub.copy()


class ExponentialRegion(ConvexSet):
    """
    {(x, y) : side * y >= exp(-x)} in R^2.

    side = +1 is the epigraph of exp(-x); side = -1 its mirror image
    below the axis. The two are disjoint but their distance tends to 0,
    so no finite certificate separates them.
    """

    type_name = "exp_region"

    def __init__(self, side: int = 1):
        if side not in (1, -1):
            raise ValidationError("side", "must be +1 or -1")
        self.side = int(side)
        super().__init__(2)

    def project(self, x: Any) -> ProjectionResult:
        x = self._check(x)
        x0, y0 = float(x[0]), self.side * float(x[1])
        gap0 = np.exp(-x0) - y0
        if gap0 <= 0.0:
            return self._inside(x)

        # Foot point (u, exp(-u)) solves u - x0 = exp(-u) (exp(-u) - y0).
        def stationarity(u: float) -> float:
            e = np.exp(-u)
            return u - x0 - e * (e - y0)

        lo, hi = x0, x0 + np.exp(-x0) * gap0
        if hi <= lo or stationarity(hi) <= 0.0:
            u = hi
        else:
            u = optimize.brentq(stationarity, lo, hi, xtol=1e-300, maxiter=500)
        e = np.exp(-u)
        delta = e - y0
        offset = np.array([-e * delta, -self.side * delta])
        point = np.array([u, self.side * e])
        return ProjectionResult(point=point, distance=float(delta * np.sqrt(1.0 + e * e)), offset=offset)

    def reference_point(self) -> np.ndarray:
        return np.array([0.0, 2.0 * self.side])


# ============================================================================
# Operations
# ============================================================================

def project(convex_set: ConvexSet, x: Any) -> ProjectionResult:
    """P_K(x) with offset and distance"""
    return convex_set.project(x)


def halfspace_from_projection(result: ProjectionResult, tag: Tag) -> TaggedHalfspace:
    """Supporting halfspace with normal x - P(x) through P(x)"""
    a = result.offset
    return TaggedHalfspace(normal=a, offset=float(a @ result.point), tag=tag)


def supporting_halfspace(
    convex_set: ConvexSet,
    x: Any,
    tag: Tag,
    tol: float = DEFAULT_TOL_FEAS,
) -> TaggedHalfspace:
    """
    Halfspace {z : a . z <= b} containing the set, with a = x - P(x) and
    b = a . P(x).

    Raises:
        PointInsideSet: if d(x, K) <= tol
    """
    result = convex_set.project(x)
    if result.distance <= tol:
        raise PointInsideSet(f"point is within {tol:g} of the set; no separating halfspace")
    return halfspace_from_projection(result, tag)


def subgradient_halfspace(f: "ConvexFunction", x: Any, tag: int) -> TaggedHalfspace:
    """
    Linearization halfspace {z : f(x) + y . (z - x) <= 0} for y in the
    subdifferential of f at x; it contains the sublevel set f <= 0.

    Raises:
        PointInsideSet: if f(x) <= 0
        ZeroSubgradientAtPositiveValue: if y = 0 while f(x) > 0
    """
    x = as_vector(x, f.dim, what="point")
    value, y = f.evaluate(x)
    if value <= 0.0:
        raise PointInsideSet(f"f(x) = {value:.6g} <= 0; no cut needed")
    if not np.any(y):
        raise ZeroSubgradientAtPositiveValue(value, x)
    return TaggedHalfspace(normal=y, offset=float(y @ x) - value, tag=(tag, FUNCTION_INDEX))


def relax(convex_set: ConvexSet, x: Any, lam: float) -> np.ndarray:
    """
    x + lam (P(x) - x) for lam in [0, 2].

    Raises:
        LambdaOutOfRange: if lam is outside [0, 2]
    """
    if not 0.0 <= lam <= 2.0:
        raise LambdaOutOfRange(f"relaxation parameter {lam} outside [0, 2]")
    result = convex_set.project(x)
    if lam == 1.0:
        return result.point
    return as_vector(x, convex_set.dim) - lam * result.offset


SET_TYPES: Dict[str, type] = {
    cls.type_name: cls
    for cls in (Halfspace, Hyperplane, Ball, Box, AffineSubspace, Ellipsoid, Polyhedron, ExponentialRegion)
}
