"""
SHQP Feasibility - Trace Diagnostics

Post-hoc analysis of solver traces: convergence-rate classification,
local metric inequality constant estimates, normal-angle statistics and
recession reports for diverging runs.

All functions are pure over (trace, inputs). Rates are observed, not
certified: the reference point is usually the final iterate or a known
solution, and errors below a noise floor are ignored.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from .errors import NotDiverging, TooFewIterations, ValidationError
from .model import Diverging, SolveTrace, as_vector

logger = logging.getLogger(__name__)

MIN_USABLE = 4
NOISE_FACTOR = 100.0
DEFAULT_RAY_LENGTH = 1e6


@dataclass(frozen=True)
class RateThresholds:
    """Classification cutoffs; pragmatic settings, not theory"""
    superlinear_cutoff: float = 0.1
    boundedness_factor: float = 10.0
    linear_ceiling: float = 0.999
    linear_stability: float = 0.1


# ============================================================================
# Rate classes
# ============================================================================

@dataclass(frozen=True)
class Linear:
    factor: float
    kind: str = field(default="linear", init=False)

    def describe(self) -> str:
        return f"Linear{{{self.factor:.6g}}}"


@dataclass(frozen=True)
class Superlinear:
    p: int
    kind: str = field(default="superlinear", init=False)

    def describe(self) -> str:
        return f"Superlinear{{{self.p}}}"


@dataclass(frozen=True)
class Quadratic:
    p: int
    kind: str = field(default="quadratic", init=False)

    def describe(self) -> str:
        return f"Quadratic{{{self.p}}}"


@dataclass(frozen=True)
class Inconclusive:
    kind: str = field(default="inconclusive", init=False)

    def describe(self) -> str:
        return "Inconclusive"


RateClass = Union[Linear, Superlinear, Quadratic, Inconclusive]


@dataclass(frozen=True, eq=False)
class RateReport:
    """
    Errors e_i = ||x_i - reference|| over the usable window and the ratio
    sequences derived from them.
    """
    reference_point: np.ndarray
    errors: np.ndarray
    q_ratios: np.ndarray
    superlinear_ratios: Dict[int, np.ndarray]
    quadratic_ratios: Dict[int, np.ndarray]
    classification: RateClass

    def to_dict(self) -> Dict[str, Any]:
        return {
            "reference_point": [float(v) for v in self.reference_point],
            "errors": [float(v) for v in self.errors],
            "q_ratios": [float(v) for v in self.q_ratios],
            "superlinear_ratios": {str(p): [float(v) for v in r] for p, r in self.superlinear_ratios.items()},
            "quadratic_ratios": {str(p): [float(v) for v in r] for p, r in self.quadratic_ratios.items()},
            "classification": self.classification.describe(),
        }

    def lines(self) -> List[str]:
        out = [
            f"classification: {self.classification.describe()}",
            f"usable iterations: {self.errors.size}",
        ]
        if self.q_ratios.size:
            out.append(f"last q-ratio: {self.q_ratios[-1]:.6g}")
        for p, ratios in sorted(self.quadratic_ratios.items()):
            if ratios.size:
                out.append(f"p={p}: superlinear {self.superlinear_ratios[p][-1]:.6g}, "
                           f"quadratic max/median {ratios.max():.6g}/{np.median(ratios):.6g}")
        return out


def _noise_floor(reference: np.ndarray) -> float:
    return NOISE_FACTOR * float(np.finfo(float).eps) * (1.0 + float(np.linalg.norm(reference)))


def _usable_prefix(errors: np.ndarray, floor: float) -> np.ndarray:
    below = np.nonzero(errors <= floor)[0]
    return errors if below.size == 0 else errors[: below[0]]


def _tail(values: np.ndarray) -> np.ndarray:
    return values[len(values) // 2:]


def _is_quadratic(quadratic: np.ndarray, superlinear: np.ndarray, th: RateThresholds) -> bool:
    if quadratic.size < 2:
        return False
    median = float(np.median(quadratic))
    return (
        median > 0.0
        and float(quadratic.max()) <= th.boundedness_factor * median
        and float(superlinear[-1]) < th.superlinear_cutoff
    )


def _is_superlinear(superlinear: np.ndarray, th: RateThresholds) -> bool:
    tail = _tail(superlinear)
    if tail.size < 2:
        return False
    # ratios must keep shrinking, not settle at a constant
    decreasing = bool(np.all(tail[1:] <= 1.05 * tail[:-1]))
    return decreasing and tail[-1] < th.superlinear_cutoff and tail[-1] <= 0.5 * tail[0]


def _linear_factor(q_ratios: np.ndarray, th: RateThresholds) -> Optional[float]:
    tail = _tail(q_ratios)
    if tail.size < 2 or np.any(tail <= 0.0) or np.any(tail >= th.linear_ceiling):
        return None
    mean = float(tail.mean())
    if abs(float(tail[-1]) - mean) > th.linear_stability * (1.0 - mean):
        return None
    return float(np.exp(np.mean(np.log(tail))))


def classify_errors(
    errors: Sequence[float],
    p_values: Sequence[int] = (1, 2),
    thresholds: Optional[RateThresholds] = None,
) -> RateClass:
    """
    Classify a positive error sequence (already cut at the noise floor).

    Checks Quadratic{p}, then Superlinear{p} for p in ascending order, then
    Linear; anything else is Inconclusive.
    """
    th = thresholds or RateThresholds()
    e = np.asarray(errors, dtype=float)
    ps = sorted(set(int(p) for p in p_values))
    for p in ps:
        if e.size > p + 1 and _is_quadratic(e[p:] / e[:-p] ** 2, e[p:] / e[:-p], th):
            return Quadratic(p)
    for p in ps:
        if e.size > p and _is_superlinear(e[p:] / e[:-p], th):
            return Superlinear(p)
    factor = _linear_factor(e[1:] / e[:-1], th) if e.size > 1 else None
    if factor is not None:
        return Linear(factor)
    return Inconclusive()


def estimate_rates(
    trace: SolveTrace,
    reference: Any,
    p_values: Sequence[int] = (1, 2),
    thresholds: Optional[RateThresholds] = None,
) -> RateReport:
    """
    Rate report of `trace` against `reference`.

    Only the leading run of errors above 100 eps (1 + ||reference||) is
    used.

    Raises:
        TooFewIterations: if fewer than 4 usable iterations remain
    """
    if any(int(p) < 1 for p in p_values):
        raise ValidationError("p_values", "must be positive")
    if not len(trace):
        raise TooFewIterations("trace is empty")
    reference = as_vector(reference, trace[0].iterate.size, what="reference")
    all_errors = np.linalg.norm(trace.iterates - reference, axis=1)
    errors = _usable_prefix(all_errors, _noise_floor(reference))
    if errors.size < MIN_USABLE:
        raise TooFewIterations(f"{errors.size} usable iterations, need {MIN_USABLE}")
    ps = sorted(set(int(p) for p in p_values))
    report = RateReport(
        reference_point=reference,
        errors=errors,
        q_ratios=errors[1:] / errors[:-1],
        superlinear_ratios={p: errors[p:] / errors[:-p] for p in ps},
        quadratic_ratios={p: errors[p:] / errors[:-p] ** 2 for p in ps},
        classification=classify_errors(errors, ps, thresholds),
    )
    logger.debug("rate classification %s over %d errors", report.classification.describe(), errors.size)
    return report


# ============================================================================
# Metric inequality constant
# ============================================================================

@dataclass(frozen=True, eq=False)
class KappaEstimate:
    """Ratios ||x_i - reference|| / max_l d(x_i, K_l) over records above the noise floor"""
    ratios: np.ndarray
    running_max: np.ndarray
    tail_max: float


def estimate_kappa(trace: SolveTrace, reference: Any) -> KappaEstimate:
    """
    Raises:
        TooFewIterations: if no record has a distance above the noise floor
    """
    if not len(trace):
        raise TooFewIterations("trace is empty")
    reference = as_vector(reference, trace[0].iterate.size, what="reference")
    floor = _noise_floor(reference)
    distances = trace.max_distances
    keep = distances > floor
    if not np.any(keep):
        raise TooFewIterations("no distance above the noise floor")
    errors = np.linalg.norm(trace.iterates[keep] - reference, axis=1)
    ratios = errors / distances[keep]
    return KappaEstimate(
        ratios=ratios,
        running_max=np.maximum.accumulate(ratios),
        tail_max=float(_tail(ratios).max()),
    )


# ============================================================================
# Recession
# ============================================================================

@dataclass(frozen=True, eq=False)
class RecessionReport:
    direction: np.ndarray
    per_set_recession_residuals: np.ndarray

    @property
    def max_residual(self) -> float:
        return float(self.per_set_recession_residuals.max())


def recession_report(
    source: Union[Diverging, SolveTrace],
    problem: Any,
    direction: Optional[Any] = None,
    ray_length: float = DEFAULT_RAY_LENGTH,
) -> RecessionReport:
    """
    Test a candidate recession direction against every set of `problem`.

    The direction is `direction` when given, else the recession estimate
    of a Diverging outcome, else x_last / ||x_last|| of a trace whose
    iterates grew. The residual for K_l is d(base + T d, K_l) / T with
    base the projection of the last iterate onto K_l (a point of K_l).

    Raises:
        NotDiverging: if no direction is given and the trace did not grow
    """
    trace = source.trace if isinstance(source, Diverging) else source
    last = trace.last.iterate if len(trace) else None
    if direction is None:
        if isinstance(source, Diverging):
            direction = source.recession_estimate
        else:
            if last is None or len(trace) < 2:
                raise NotDiverging("trace too short to show divergence")
            first_norm = float(np.linalg.norm(trace[0].iterate))
            last_norm = float(np.linalg.norm(last))
            if last_norm <= max(first_norm, 1.0):
                raise NotDiverging(f"iterate norm did not grow ({first_norm:.3g} -> {last_norm:.3g})")
            direction = last / last_norm
    d = as_vector(direction, problem.dim, what="direction")
    d = d / float(np.linalg.norm(d))
    residuals = []
    for s in problem.sets:
        base = s.project(last).point if last is not None else s.reference_point()
        far = base + ray_length * d
        residuals.append(s.project(far).distance / ray_length)
    return RecessionReport(direction=d, per_set_recession_residuals=np.array(residuals))


# ============================================================================
# Normal angles
# ============================================================================

@dataclass(frozen=True)
class AngleStatistics:
    """
    min_angles[i]: smallest pairwise angle among the normals generated in
    rounds i - window + 1 .. i (None without a pair).
    """
    window: int
    min_angles: List[Optional[float]]
    rounds_until_alpha: Optional[int] = None


def _min_pairwise_angle(normals: Sequence[np.ndarray]) -> Optional[float]:
    if len(normals) < 2:
        return None
    U = np.array([np.asarray(u, dtype=float) / np.linalg.norm(u) for u in normals])
    angles = np.arccos(np.clip(U @ U.T, -1.0, 1.0))
    iu = np.triu_indices(len(normals), k=1)
    return float(angles[iu].min())


def angle_statistics(trace: SolveTrace, window: int = 2, alpha: Optional[float] = None) -> AngleStatistics:
    """
    Exact pairwise angle minima over sliding windows of rounds; with
    `alpha`, the first round whose window holds a pair within alpha.
    """
    if window < 1:
        raise ValidationError("window", "must be at least 1")
    per_round = [list(r.normals) for r in trace]
    minima: List[Optional[float]] = []
    first_hit: Optional[int] = None
    for i in range(len(per_round)):
        pooled = [u for normals in per_round[max(0, i - window + 1): i + 1] for u in normals]
        smallest = _min_pairwise_angle(pooled)
        minima.append(smallest)
        if alpha is not None and first_hit is None and smallest is not None and smallest <= alpha:
            first_hit = i
    return AngleStatistics(window=window, min_angles=minima, rounds_until_alpha=first_hit)
