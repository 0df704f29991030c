"""
SHQP Feasibility - Dual Active-Set QP

Goldfarb-Idnani dual active-set solver for least-distance problems

    QP(y, C, b):  min 1/2 ||x - y||^2  s.t.  c_j . x <= b_j  for all j.

With identity Hessian the method keeps, after every add/drop cycle, the
primal iterate equal to the projection of y onto the polyhedron of the
active constraints. The distance ||x - y|| never decreases, so every
intermediate state is a usable partial projection. Infeasibility is
detected when a violated constraint is a nonpositive combination of the
active normals; the combination is returned as a Farkas certificate.

The active normals are kept in a full QR factorization that is updated
column by column (scipy.linalg.qr_insert / qr_delete).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Any, List, Optional, Sequence, Set, Tuple, Union

import numpy as np
from scipy import linalg

from .errors import DegenerateConstraintSet, DimensionMismatch, ValidationError
from .model import FarkasCertificate, as_vector

logger = logging.getLogger(__name__)

DEFAULT_FEAS_TOL = 1e-9
DEFAULT_DUAL_TOL = 1e-12
DEFAULT_RANK_TOL = 1e-10
DEFAULT_CERT_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class QpProblem:
    """
    Least-distance QP data: anchor y and the rows (c_j, b_j) of C^T x <= b.
    """
    anchor: np.ndarray
    normals: np.ndarray
    offsets: np.ndarray

    def __post_init__(self):
        y = as_vector(self.anchor, what="anchor")
        n = y.size
        C = np.asarray(self.normals, dtype=float)
        if C.size == 0:
            C = np.zeros((0, n))
        if C.ndim != 2 or C.shape[1] != n:
            raise DimensionMismatch(n, C.shape[-1] if C.ndim else 0, "constraint normal")
        b = np.asarray(self.offsets, dtype=float).reshape(-1)
        if b.size != C.shape[0]:
            raise ValidationError("offsets", f"expected {C.shape[0]} offsets, got {b.size}")
        if not (np.all(np.isfinite(C)) and np.all(np.isfinite(b))):
            raise ValidationError("normals", "entries must be finite")
        norms = np.linalg.norm(C, axis=1)
        if np.any(norms == 0.0):
            raise ValidationError("normals", f"normal {int(np.argmin(norms))} is zero")
        object.__setattr__(self, "anchor", y)
        object.__setattr__(self, "normals", C)
        object.__setattr__(self, "offsets", b)
        object.__setattr__(self, "_norms", norms)

    @property
    def dim(self) -> int:
        return self.anchor.size

    @property
    def m(self) -> int:
        return self.normals.shape[0]

    @property
    def row_norms(self) -> np.ndarray:
        return self._norms  # type: ignore[attr-defined]

    def violations(self, x: np.ndarray) -> np.ndarray:
        """Signed distances (c_j . x - b_j) / ||c_j||"""
        return (self.normals @ x - self.offsets) / self.row_norms

    def extended(self, added: Sequence[Tuple[Any, float]]) -> "QpProblem":
        """Same anchor with constraints appended after the existing ones"""
        if not added:
            return self
        rows = np.array([as_vector(a, self.dim, what="added normal") for a, _ in added])
        return QpProblem(
            self.anchor,
            np.vstack([self.normals, rows]),
            np.concatenate([self.offsets, [float(b) for _, b in added]]),
        )


@dataclass
class GiState:
    """
    Solver state: primal x = P_{F_A}(y) for the active set A, the duals of
    A, and the QR factorization (Q, R) of the active normal columns.
    """
    primal: np.ndarray
    active: List[int]
    duals: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    steps: int = 0
    tolerated: Set[int] = field(default_factory=set)

    @classmethod
    def initial(cls, problem: QpProblem) -> "GiState":
        n = problem.dim
        return cls(
            primal=problem.anchor.copy(),
            active=[],
            duals=np.zeros(0),
            Q=np.eye(n),
            R=np.zeros((n, 0)),
        )

    def copy(self) -> "GiState":
        return GiState(
            primal=self.primal.copy(),
            active=list(self.active),
            duals=self.duals.copy(),
            Q=self.Q.copy(),
            R=self.R.copy(),
            steps=self.steps,
            tolerated=set(self.tolerated),
        )

    def restore(self, saved: "GiState") -> None:
        """Roll back in place to `saved` (a copy taken earlier)"""
        self.primal = saved.primal.copy()
        self.active = list(saved.active)
        self.duals = saved.duals.copy()
        self.Q, self.R = saved.Q.copy(), saved.R.copy()
        self.steps = saved.steps
        self.tolerated = set(saved.tolerated)

    def add(self, index: int, column: np.ndarray, dual: float) -> None:
        if not self.active:
            self.Q, self.R = linalg.qr(column.reshape(-1, 1))
        else:
            self.Q, self.R = linalg.qr_insert(self.Q, self.R, column, len(self.active), which="col")
        self.active.append(index)
        self.duals = np.append(self.duals, dual)

    def drop(self, position: int) -> None:
        del self.active[position]
        self.duals = np.delete(self.duals, position)
        if not self.active:
            n = self.Q.shape[0]
            self.Q, self.R = np.eye(n), np.zeros((n, 0))
        else:
            self.Q, self.R = linalg.qr_delete(self.Q, self.R, position, 1, which="col")


# ============================================================================
# Results
# ============================================================================

@dataclass(frozen=True, eq=False)
class Solved:
    point: np.ndarray
    active: List[int]
    duals: np.ndarray
    state: GiState
    steps: int = 0
    kind: str = field(default="solved", init=False)


@dataclass(frozen=True, eq=False)
class QpInfeasible:
    certificate: FarkasCertificate
    state: GiState
    steps: int = 0
    kind: str = field(default="infeasible", init=False)


@dataclass(frozen=True, eq=False)
class BudgetExhausted:
    state: GiState
    steps: int = 0
    kind: str = field(default="budget_exhausted", init=False)


@dataclass(frozen=True, eq=False)
class Progressed:
    state: GiState
    kind: str = field(default="progressed", init=False)


@dataclass(frozen=True, eq=False)
class Optimal:
    state: GiState
    kind: str = field(default="optimal", init=False)


SolveResult = Union[Solved, QpInfeasible, BudgetExhausted]
StepResult = Union[Progressed, Optimal, QpInfeasible]


# ============================================================================
# Operations
# ============================================================================

def _certificate(problem: QpProblem, violated: int, state: GiState, r: np.ndarray) -> FarkasCertificate:
    multipliers = np.zeros(problem.m)
    multipliers[violated] = 1.0
    for position, j in enumerate(state.active):
        multipliers[j] += max(-float(r[position]), 0.0)
    residual = float(np.linalg.norm(multipliers @ problem.normals))
    gap = float(multipliers @ problem.offsets)
    return FarkasCertificate(multipliers=multipliers, residual_norm=residual, gap=gap)


def _inactive_violations(problem: QpProblem, state: GiState) -> np.ndarray:
    viol = problem.violations(state.primal)
    if state.active:
        viol[state.active] = -np.inf
    if state.tolerated:
        viol[sorted(state.tolerated)] = -np.inf
    return viol


def _cycle(
    state: GiState,
    problem: QpProblem,
    p: int,
    dual_tol: float,
    rank_tol: float,
) -> Union[Progressed, np.ndarray]:
    """Add/drop until p enters (Progressed) or contradicts the active set (returns r)"""
    c_p = problem.normals[p]
    c_norm = problem.row_norms[p]
    u_p = 0.0
    for _ in range(len(state.active) + 2):
        q = len(state.active)
        d = state.Q.T @ c_p
        d_free = d[q:]
        if q:
            r = linalg.solve_triangular(state.R[:q, :q], d[:q])
        else:
            r = np.zeros(0)
        dependent = float(np.linalg.norm(d_free)) <= rank_tol * c_norm

        t1, k = np.inf, -1
        for position in range(q):
            if r[position] > 0.0:
                ratio = state.duals[position] / r[position]
                if ratio < t1:
                    t1, k = ratio, position

        if dependent:
            t2 = np.inf
            w = np.zeros_like(c_p)
        else:
            w = state.Q[:, q:] @ d_free
            s = float(c_p @ state.primal) - problem.offsets[p]
            t2 = max(s, 0.0) / float(w @ w)

        if not np.isfinite(t1) and not np.isfinite(t2):
            return r

        t = min(t1, t2)
        if q:
            state.duals = state.duals - t * r
        u_p += t
        if np.isfinite(t2):
            state.primal = state.primal - t * w

        if t2 <= t1:
            state.duals = np.maximum(state.duals, 0.0)
            state.add(p, c_p, u_p)
            state.steps += 1
            logger.debug("added constraint %d (active %d)", p, len(state.active))
            return Progressed(state)

        state.duals[k] = 0.0
        if np.any(state.duals < -dual_tol):
            raise DegenerateConstraintSet(f"dual went negative ({state.duals.min():.3g}) while adding {p}")
        state.duals = np.maximum(state.duals, 0.0)
        logger.debug("dropped constraint %d while adding %d", state.active[k], p)
        state.drop(k)

    raise DegenerateConstraintSet(f"add/drop cycle for constraint {p} did not close")


def gi_step(
    state: GiState,
    problem: QpProblem,
    feas_tol: float = DEFAULT_FEAS_TOL,
    dual_tol: float = DEFAULT_DUAL_TOL,
    rank_tol: float = DEFAULT_RANK_TOL,
    cert_tol: float = DEFAULT_CERT_TOL,
) -> StepResult:
    """
    One add/drop cycle, advancing `state` in place.

    The most violated inactive constraint p (largest distance, lowest
    index on ties) is driven to feasibility; active constraints whose
    duals reach zero on the way are dropped. The cycle ends when p enters
    the active set (Progressed), when nothing is violated beyond feas_tol
    (Optimal) or when p is a nonpositive combination of the active
    normals (QpInfeasible).

    QpInfeasible always carries a certificate passing check_farkas at
    `cert_tol`. A contradiction too shallow to certify undoes the cycle
    and marks p as satisfied within tolerance (state.tolerated); the next
    violated constraint is tried instead.

    Raises:
        DegenerateConstraintSet: if the cycle does not close after as many
            drops as there are active constraints
    """
    while problem.m:
        viol = _inactive_violations(problem, state)
        p = int(np.argmax(viol))
        if viol[p] <= feas_tol:
            break
        saved = state.copy()
        result = _cycle(state, problem, p, dual_tol, rank_tol)
        if isinstance(result, Progressed):
            return result
        cert = _certificate(problem, p, state, result)
        if check_farkas(cert, problem, cert_tol):
            logger.debug("constraint %d contradicts the active set %s (gap %.3g)", p, state.active, cert.gap)
            return QpInfeasible(certificate=cert, state=state)
        logger.debug("constraint %d tolerated: contradiction gap %.3g within %.1g", p, cert.gap, cert_tol)
        state.restore(saved)
        state.tolerated.add(p)
    return Optimal(state)


def gi_solve(
    problem: QpProblem,
    step_budget: Optional[int] = None,
    dual_tol: float = DEFAULT_DUAL_TOL,
    feas_tol: float = DEFAULT_FEAS_TOL,
    rank_tol: float = DEFAULT_RANK_TOL,
    state: Optional[GiState] = None,
    cert_tol: float = DEFAULT_CERT_TOL,
) -> SolveResult:
    """
    Project problem.anchor onto {x : C^T x <= b}.

    A warm `state` (see gi_warm_start) is advanced in place; otherwise the
    solve starts from the empty active set. With `step_budget` at most that
    many add/drop cycles run and an unfinished solve returns
    BudgetExhausted carrying a valid partial state.

    Raises:
        DegenerateConstraintSet: on cycling
    """
    if state is None:
        state = GiState.initial(problem)
    elif state.primal.size != problem.dim:
        raise DimensionMismatch(problem.dim, state.primal.size, "warm state")
    cap = 50 * (problem.m + problem.dim) + 100
    steps = 0
    while True:
        if step_budget is not None and steps >= step_budget:
            if _violated(problem, state, feas_tol):
                return BudgetExhausted(state=state, steps=steps)
        result = gi_step(state, problem, feas_tol=feas_tol, dual_tol=dual_tol, rank_tol=rank_tol,
                         cert_tol=cert_tol)
        if isinstance(result, Optimal):
            return Solved(
                point=state.primal.copy(),
                active=list(state.active),
                duals=state.duals.copy(),
                state=state,
                steps=steps,
            )
        if isinstance(result, QpInfeasible):
            return replace(result, steps=steps)
        steps += 1
        if steps > cap:
            raise DegenerateConstraintSet(f"no convergence after {steps} add/drop cycles")


def _violated(problem: QpProblem, state: GiState, feas_tol: float) -> bool:
    if problem.m == 0:
        return False
    viol = _inactive_violations(problem, state)
    return bool(np.max(viol) > feas_tol)


def gi_warm_start(
    state: GiState,
    old_problem: QpProblem,
    added: Sequence[Tuple[Any, float]],
) -> GiState:
    """
    Reuse a state of `old_problem` for `old_problem.extended(added)`.

    The appended constraints get indices after the old ones, so the active
    set and its factorization stay valid; the primal is unchanged and any
    newly violated constraint is picked up by the next gi_step.

    Raises:
        DimensionMismatch: if an added normal has the wrong dimension
    """
    for a, _ in added:
        a = np.asarray(a, dtype=float).reshape(-1)
        if a.size != old_problem.dim:
            raise DimensionMismatch(old_problem.dim, a.size, "added normal")
    if state.primal.size != old_problem.dim:
        raise DimensionMismatch(old_problem.dim, state.primal.size, "warm state")
    return state.copy()


def check_farkas(cert: FarkasCertificate, problem: QpProblem, cert_tol: float = DEFAULT_CERT_TOL) -> bool:
    """
    True iff r >= 0, r != 0, ||sum r_j c_j|| <= cert_tol ||r||_1 max_j ||c_j||
    and sum r_j b_j < -cert_tol. Quantities are recomputed from `problem`.
    """
    r = np.asarray(cert.multipliers, dtype=float).reshape(-1)
    if r.size != problem.m or problem.m == 0 or not np.all(np.isfinite(r)):
        return False
    if np.any(r < 0.0) or not np.any(r > 0.0):
        return False
    residual = float(np.linalg.norm(r @ problem.normals))
    gap = float(r @ problem.offsets)
    bound = cert_tol * float(r.sum()) * float(problem.row_norms.max())
    return residual <= bound and gap < -cert_tol
