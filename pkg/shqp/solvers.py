"""
SHQP Feasibility - Solvers

Supporting-halfspace + QP algorithms:

- solve_sip: set intersection. Each round projects the iterate onto every
  set, stores the supporting halfspaces and moves to (an extrapolation of)
  the projection of the iterate onto the working polyhedron.
- solve_cip: convex inequality f(x) <= 0 with subgradient halfspaces.
- solve_bap: best approximation. Always projects the anchor x0 onto the
  accumulated polyhedron, warm-starting the dual QP solver.
- solve_map: cyclic projections, the baseline.

Every move is either the exact projection or an extrapolated partial QP
point x + t (x~ - x) with t in [1, 2] that already lies in the working
polyhedron, so iterates never move away from any feasible point.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize

from .errors import ConfigInvalid, ValidationError, ZeroAggregateNormal
from .functions import ConvexFunction
from .geometry import ConvexSet, halfspace_from_projection
from .halfspaces import (
    AllAccumulating,
    AnglePruned,
    CurrentRoundOnly,
    HalfspaceStore,
    WorkingSetPolicy,
    aggregate,
    evict_stale,
    parse_policy,
    prune_by_angle,
    select_working_set,
)
from .model import (
    FUNCTION_INDEX,
    Diverging,
    FarkasCertificate,
    Feasible,
    Infeasible,
    IterationRecord,
    MaxIterations,
    ProjectionResult,
    SolveOutcome,
    SolveTrace,
    TaggedHalfspace,
    as_vector,
)
from .qp import (
    DEFAULT_CERT_TOL,
    DEFAULT_DUAL_TOL,
    DEFAULT_RANK_TOL,
    GiState,
    Optimal,
    QpInfeasible,
    QpProblem,
    Solved,
    gi_solve,
    gi_step,
    gi_warm_start,
)

logger = logging.getLogger(__name__)

CONE_CHECK_TOL = 1e-6


# ============================================================================
# Configuration and problems
# ============================================================================

@dataclass(frozen=True)
class SolverConfig:
    """Knobs shared by all solvers"""
    policy: WorkingSetPolicy = field(default_factory=AllAccumulating)
    tol_feas: float = 1e-9
    max_outer: int = 500
    gi_step_budget: Optional[int] = None
    extrapolation_grid: Tuple[float, ...] = (2.0, 1.5, 1.0)
    aggregation_enabled: bool = False
    divergence_norm_cap: float = 1e8
    qp_dual_tol: float = DEFAULT_DUAL_TOL
    qp_rank_tol: float = DEFAULT_RANK_TOL
    cert_tol: float = DEFAULT_CERT_TOL

    def validate(self) -> "SolverConfig":
        """
        Raises:
            ConfigInvalid: on out-of-range settings
        """
        for name in ("tol_feas", "divergence_norm_cap", "qp_dual_tol", "qp_rank_tol", "cert_tol"):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0.0):
                raise ConfigInvalid(f"{name} must be positive, got {value}")
        if self.max_outer < 0:
            raise ConfigInvalid("max_outer must be nonnegative")
        if self.gi_step_budget is not None and self.gi_step_budget < 1:
            raise ConfigInvalid("gi_step_budget must be at least 1")
        if not self.extrapolation_grid:
            raise ConfigInvalid("extrapolation_grid must not be empty")
        if any(not 1.0 <= t <= 2.0 for t in self.extrapolation_grid):
            raise ConfigInvalid("extrapolation_grid values must lie in [1, 2]")
        return self

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["policy"] = self.policy.describe()
        data["extrapolation_grid"] = list(self.extrapolation_grid)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any], base: Optional["SolverConfig"] = None) -> "SolverConfig":
        """Override `base` (defaults) with the known keys of `data`"""
        base = base or cls()
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigInvalid(f"unknown config keys: {sorted(unknown)}")
        updates = dict(data)
        if isinstance(updates.get("policy"), str):
            updates["policy"] = parse_policy(updates["policy"])
        if "extrapolation_grid" in updates:
            updates["extrapolation_grid"] = tuple(float(t) for t in updates["extrapolation_grid"])
        return replace(base, **updates).validate()


def _check_sets(sets: Sequence[ConvexSet]) -> int:
    if not sets:
        raise ValidationError("sets", "need at least one set")
    dims = {s.dim for s in sets}
    if len(dims) != 1:
        raise ValidationError("sets", f"dimensions disagree: {sorted(dims)}")
    return dims.pop()


@dataclass(frozen=True, eq=False)
class SipProblem:
    sets: Tuple[ConvexSet, ...]
    start: Optional[np.ndarray] = None

    def __post_init__(self):
        n = _check_sets(self.sets)
        object.__setattr__(self, "sets", tuple(self.sets))
        start = np.zeros(n) if self.start is None else as_vector(self.start, n, what="start")
        object.__setattr__(self, "start", start)

    @property
    def dim(self) -> int:
        return self.sets[0].dim


@dataclass(frozen=True, eq=False)
class CipProblem:
    f: ConvexFunction
    start: Optional[np.ndarray] = None

    def __post_init__(self):
        start = np.zeros(self.f.dim) if self.start is None else as_vector(self.start, self.f.dim, what="start")
        object.__setattr__(self, "start", start)

    @property
    def dim(self) -> int:
        return self.f.dim


@dataclass(frozen=True, eq=False)
class BapProblem:
    anchor: np.ndarray
    sets: Tuple[ConvexSet, ...]

    def __post_init__(self):
        n = _check_sets(self.sets)
        object.__setattr__(self, "sets", tuple(self.sets))
        object.__setattr__(self, "anchor", as_vector(self.anchor, n, what="anchor"))

    @property
    def dim(self) -> int:
        return self.anchor.size


# ============================================================================
# Step acceptance
# ============================================================================

@dataclass(frozen=True, eq=False)
class Accepted:
    point: np.ndarray
    t: float
    kind: str = field(default="accepted", init=False)


@dataclass(frozen=True)
class NeedMoreQpSteps:
    kind: str = field(default="need_more_qp_steps", init=False)


def step_accept(
    x_i: np.ndarray,
    gi_state: GiState,
    working: Sequence[TaggedHalfspace],
    grid: Sequence[float],
    tol_feas: float = 1e-9,
) -> Union[Accepted, NeedMoreQpSteps]:
    """
    Largest t of `grid` with x_i + t (x~ - x_i) in every working halfspace.

    x~ is the partial projection held by `gi_state`; any t in [0, 2]
    keeps the Fejer property, membership in the working polyhedron is
    what remains to check.
    """
    direction = gi_state.primal - x_i
    for t in sorted(grid, reverse=True):
        z = x_i + t * direction
        if all(h.signed_distance(z) <= tol_feas for h in working):
            return Accepted(point=z, t=float(t))
    return NeedMoreQpSteps()


def cone_residual(step: np.ndarray, normals: Sequence[np.ndarray]) -> float:
    """
    Distance from `step` to the cone generated by `normals`, relative to
    ||step|| (nonnegative least squares).
    """
    norm = float(np.linalg.norm(step))
    if norm == 0.0:
        return 0.0
    if not len(normals):
        return 1.0
    _, residual = optimize.nnls(np.array(normals).T, step)
    return float(residual) / norm


# ============================================================================
# Shared round helpers
# ============================================================================

@dataclass
class _Move:
    point: Optional[np.ndarray] = None
    steps: int = 0
    infeasible: Optional[QpInfeasible] = None
    system: Optional[QpProblem] = None


def _unit_system(anchor: np.ndarray, working: Sequence[TaggedHalfspace]) -> QpProblem:
    return QpProblem(
        anchor,
        np.array([h.unit_normal for h in working]),
        np.array([h.unit_offset for h in working]),
    )


def _qp_move(x: np.ndarray, working: Sequence[TaggedHalfspace], config: SolverConfig) -> _Move:
    """Next iterate from the projection (exact or partial) of x onto the working polyhedron"""
    system = _unit_system(x, working)
    qp_kwargs = dict(
        feas_tol=config.tol_feas,
        dual_tol=config.qp_dual_tol,
        rank_tol=config.qp_rank_tol,
        cert_tol=config.cert_tol,
    )
    if config.gi_step_budget is None:
        result = gi_solve(system, **qp_kwargs)
        if isinstance(result, QpInfeasible):
            return _Move(steps=result.steps, infeasible=result, system=system)
        return _Move(point=result.point, steps=result.steps)

    state = GiState.initial(system)
    result = gi_solve(system, step_budget=config.gi_step_budget, state=state, **qp_kwargs)
    if isinstance(result, QpInfeasible):
        return _Move(steps=result.steps, infeasible=result, system=system)
    steps = result.steps
    while True:
        accepted = step_accept(x, state, working, config.extrapolation_grid, config.tol_feas)
        if isinstance(accepted, Accepted):
            return _Move(point=accepted.point, steps=steps)
        outcome = gi_step(state, system, **qp_kwargs)
        if isinstance(outcome, QpInfeasible):
            return _Move(steps=steps, infeasible=outcome, system=system)
        if isinstance(outcome, Optimal):
            return _Move(point=state.primal.copy(), steps=steps)
        steps += 1


def _project_all(sets: Sequence[ConvexSet], x: np.ndarray) -> Tuple[List[ProjectionResult], np.ndarray, int]:
    results = [s.project(x) for s in sets]
    distances = np.array([r.distance for r in results])
    # argmax keeps the lowest index among ties
    return results, distances, int(np.argmax(distances))


def _supporting(results: Sequence[ProjectionResult], i: int, tol: float) -> List[TaggedHalfspace]:
    return [halfspace_from_projection(r, (i, l)) for l, r in enumerate(results) if r.distance > tol]


def _record(x: np.ndarray, distances: np.ndarray, l_star: int, **kwargs: Any) -> IterationRecord:
    added: Sequence[TaggedHalfspace] = kwargs.pop("added", ())
    return IterationRecord(
        iterate=x.copy(),
        per_set_distances=np.asarray(distances, dtype=float).copy(),
        l_star=l_star,
        halfspaces_added=len(added),
        tags=tuple(h.tag for h in added),
        normals=tuple(h.unit_normal for h in added),
        **kwargs,
    )


def _debug_cone_check(x: np.ndarray, x_next: np.ndarray, working: Sequence[TaggedHalfspace], i: int) -> None:
    """Under DEBUG logging, assert that x - x_next lies in the cone of the working normals"""
    if logger.isEnabledFor(logging.DEBUG):
        residual = cone_residual(x - x_next, [h.unit_normal for h in working])
        logger.debug("round %d: step cone residual %.3g", i, residual)
        assert residual <= CONE_CHECK_TOL, f"round {i}: step leaves the normal cone (residual {residual:.3g})"


def _maintain(store: HalfspaceStore, added: Sequence[TaggedHalfspace], i: int) -> None:
    evict_stale(store, i)
    for h in added:
        store.add(h)
    if isinstance(store.policy, AnglePruned):
        prune_by_angle(store, store.policy.alpha)


# ============================================================================
# SIP
# ============================================================================

def solve_sip(problem: SipProblem, config: Optional[SolverConfig] = None) -> Tuple[SolveOutcome, SolveTrace]:
    """
    Find a point in the intersection of problem.sets.

    Terminates Feasible when every distance is within tol_feas, Infeasible
    when the working polyhedron is empty (with its Farkas certificate),
    Diverging when ||x_i|| exceeds divergence_norm_cap under
    AllAccumulating, and MaxIterations after max_outer updates.
    """
    config = (config or SolverConfig()).validate()
    store = HalfspaceStore(config.policy)
    trace = SolveTrace()
    x = problem.start.copy()
    for i in range(config.max_outer + 1):
        results, distances, l_star = _project_all(problem.sets, x)
        if distances[l_star] <= config.tol_feas:
            trace.append(_record(x, distances, l_star))
            logger.info("sip feasible after %d iterations", i)
            return Feasible(point=x, iterations=i), trace
        norm = float(np.linalg.norm(x))
        if isinstance(config.policy, AllAccumulating) and norm > config.divergence_norm_cap:
            trace.append(_record(x, distances, l_star))
            logger.info("sip diverging after %d iterations (||x|| = %.3g)", i, norm)
            return Diverging(trace=trace, recession_estimate=x / norm, iterations=i), trace
        if i == config.max_outer:
            trace.append(_record(x, distances, l_star))
            return MaxIterations(trace=trace, iterations=i), trace

        added = _supporting(results, i, config.tol_feas)
        _maintain(store, added, i)
        working = select_working_set(store, i, l_star)
        move = _qp_move(x, working, config)
        if move.infeasible is not None:
            trace.append(_record(x, distances, l_star, added=added, working_set_size=len(working),
                                 qp_steps_used=move.steps))
            logger.info("sip infeasible after %d iterations", i)
            return Infeasible(certificate=move.infeasible.certificate, iterations=i, system=move.system), trace

        _debug_cone_check(x, move.point, working, i)
        trace.append(_record(
            x, distances, l_star,
            added=added,
            working_set_size=len(working),
            qp_steps_used=move.steps,
            step_norm=float(np.linalg.norm(move.point - x)),
        ))
        x = move.point
    raise AssertionError("unreachable")


# ============================================================================
# CIP
# ============================================================================

def _zero_subgradient_certificate(value: float) -> FarkasCertificate:
    # The cut 0 . x <= -f(x) on its own.
    return FarkasCertificate(multipliers=np.ones(1), residual_norm=0.0, gap=-float(value))


def solve_cip(problem: CipProblem, config: Optional[SolverConfig] = None) -> Tuple[SolveOutcome, SolveTrace]:
    """
    Find x with f(x) <= tol_feas using subgradient halfspaces.

    Under CurrentRoundOnly with exact projections the update is the closed
    form x - f(x) / ||y||^2 y.
    """
    config = (config or SolverConfig()).validate()
    store = HalfspaceStore(config.policy)
    trace = SolveTrace()
    f = problem.f
    x = problem.start.copy()
    closed_form = isinstance(config.policy, CurrentRoundOnly) and config.gi_step_budget is None
    for i in range(config.max_outer + 1):
        value, y = f.evaluate(x)
        distances = np.array([max(value, 0.0)])
        if value <= config.tol_feas:
            trace.append(_record(x, distances, FUNCTION_INDEX, value=value))
            logger.info("cip feasible after %d iterations", i)
            return Feasible(point=x, iterations=i), trace
        if i == config.max_outer:
            trace.append(_record(x, distances, FUNCTION_INDEX, value=value))
            return MaxIterations(trace=trace, iterations=i), trace
        if not np.any(y):
            trace.append(_record(x, distances, FUNCTION_INDEX, value=value))
            logger.info("cip infeasible: zero subgradient with f = %.6g", value)
            return Infeasible(
                certificate=_zero_subgradient_certificate(value),
                iterations=i,
                reason="zero subgradient at a positive value",
            ), trace

        cut = TaggedHalfspace(normal=y, offset=float(y @ x) - value, tag=(i, FUNCTION_INDEX))
        _maintain(store, [cut], i)
        working = select_working_set(store, i, FUNCTION_INDEX)
        if closed_form:
            move = _Move(point=x - (value / float(y @ y)) * y)
        else:
            move = _qp_move(x, working, config)
        if move.infeasible is not None:
            trace.append(_record(x, distances, FUNCTION_INDEX, added=[cut], value=value,
                                 working_set_size=len(working), qp_steps_used=move.steps))
            logger.info("cip infeasible after %d iterations", i)
            return Infeasible(certificate=move.infeasible.certificate, iterations=i, system=move.system), trace

        _debug_cone_check(x, move.point, working, i)
        trace.append(_record(
            x, distances, FUNCTION_INDEX,
            added=[cut],
            value=value,
            working_set_size=len(working),
            qp_steps_used=move.steps,
            step_norm=float(np.linalg.norm(move.point - x)),
        ))
        x = move.point
    raise AssertionError("unreachable")


# ============================================================================
# BAP
# ============================================================================

def _compress(
    store: HalfspaceStore,
    working: Sequence[TaggedHalfspace],
    solved: Solved,
    i: int,
) -> HalfspaceStore:
    """
    Replace halfspaces older than the last two rounds by their
    dual-weighted sum. The current iterate stays the projection of the
    anchor onto the smaller system (same KKT multipliers).
    """
    duals = np.zeros(len(working))
    duals[solved.active] = solved.duals
    keep_from = i - 1
    old = [(h, u) for h, u in zip(working, duals) if h.iteration < keep_from]
    if not old:
        return store
    recent = [h for h in store.items if h.iteration >= keep_from]
    weighted = [(h, u / h.norm) for h, u in old if u > 0.0]
    items: List[TaggedHalfspace] = []
    if weighted:
        try:
            items.append(aggregate([h for h, _ in weighted], [w for _, w in weighted]))
        except ZeroAggregateNormal as e:
            if e.certificate is not None:
                raise
            # 0 . x <= nonnegative: the group carries no information
            logger.debug("dropping %d old halfspaces with a vanishing aggregate", len(weighted))
    logger.debug("aggregated %d old halfspaces into %d", len(old), len(items))
    return HalfspaceStore(store.policy, items + recent)


def solve_bap(problem: BapProblem, config: Optional[SolverConfig] = None) -> Tuple[SolveOutcome, SolveTrace]:
    """
    Nearest point to problem.anchor in the intersection of problem.sets.

    Each round projects the anchor (never the iterate) onto the working
    polyhedron. When the new working set extends the previous one the
    dual QP solver is warm-started, and a finite gi_step_budget carries a
    partial solve over to the next round.
    """
    config = (config or SolverConfig()).validate()
    store = HalfspaceStore(config.policy)
    trace = SolveTrace()
    x0 = problem.anchor
    x = x0.copy()
    state: Optional[GiState] = None
    previous: Optional[QpProblem] = None
    previous_tags: Tuple[Tuple[int, int], ...] = ()
    qp_kwargs = dict(
        feas_tol=config.tol_feas,
        dual_tol=config.qp_dual_tol,
        rank_tol=config.qp_rank_tol,
        cert_tol=config.cert_tol,
    )
    for i in range(config.max_outer + 1):
        results, distances, l_star = _project_all(problem.sets, x)
        anchor_distance = float(np.linalg.norm(x - x0))
        if distances[l_star] <= config.tol_feas:
            trace.append(_record(x, distances, l_star, anchor_distance=anchor_distance))
            logger.info("bap feasible after %d iterations", i)
            return Feasible(point=x, iterations=i), trace
        if anchor_distance > config.divergence_norm_cap:
            trace.append(_record(x, distances, l_star, anchor_distance=anchor_distance))
            logger.info("bap diverging after %d iterations", i)
            return Diverging(trace=trace, recession_estimate=(x - x0) / anchor_distance, iterations=i), trace
        if i == config.max_outer:
            trace.append(_record(x, distances, l_star, anchor_distance=anchor_distance))
            return MaxIterations(trace=trace, iterations=i), trace

        added = _supporting(results, i, config.tol_feas)
        _maintain(store, added, i)
        working = select_working_set(store, i, l_star)
        system = _unit_system(x0, working)
        tags = tuple(h.tag for h in working)
        if state is not None and previous is not None and tags[: len(previous_tags)] == previous_tags:
            extra = working[len(previous_tags):]
            state = gi_warm_start(state, previous, [(h.unit_normal, h.unit_offset) for h in extra])
        else:
            state = None
        result = gi_solve(system, step_budget=config.gi_step_budget, state=state, **qp_kwargs)
        if isinstance(result, QpInfeasible):
            trace.append(_record(x, distances, l_star, added=added, anchor_distance=anchor_distance,
                                 working_set_size=len(working), qp_steps_used=result.steps))
            logger.info("bap infeasible after %d iterations", i)
            return Infeasible(certificate=result.certificate, iterations=i, system=system), trace

        state, previous, previous_tags = result.state, system, tags
        x_next = state.primal.copy()
        _debug_cone_check(x0, x_next, working, i)
        if config.aggregation_enabled and isinstance(result, Solved):
            try:
                store = _compress(store, working, result, i)
            except ZeroAggregateNormal as e:
                trace.append(_record(x, distances, l_star, added=added, anchor_distance=anchor_distance,
                                     working_set_size=len(working), qp_steps_used=result.steps))
                return Infeasible(certificate=e.certificate, iterations=i, reason="aggregated cut"), trace
            state = None

        trace.append(_record(
            x, distances, l_star,
            added=added,
            anchor_distance=anchor_distance,
            working_set_size=len(working),
            qp_steps_used=result.steps,
            step_norm=float(np.linalg.norm(x_next - x)),
        ))
        x = x_next
    raise AssertionError("unreachable")


# ============================================================================
# Baseline
# ============================================================================

def solve_map(problem: SipProblem, config: Optional[SolverConfig] = None) -> Tuple[SolveOutcome, SolveTrace]:
    """
    Cyclic projections x <- P_{K_r} ... P_{K_1} x, one cycle per round.
    Cannot detect infeasibility.
    """
    config = (config or SolverConfig()).validate()
    trace = SolveTrace()
    x = problem.start.copy()
    for i in range(config.max_outer + 1):
        _, distances, l_star = _project_all(problem.sets, x)
        if distances[l_star] <= config.tol_feas:
            trace.append(_record(x, distances, l_star))
            return Feasible(point=x, iterations=i), trace
        if i == config.max_outer:
            trace.append(_record(x, distances, l_star))
            return MaxIterations(trace=trace, iterations=i), trace
        x_next = x
        for s in problem.sets:
            x_next = s.project(x_next).point
        trace.append(_record(x, distances, l_star, step_norm=float(np.linalg.norm(x_next - x))))
        x = x_next
    raise AssertionError("unreachable")
