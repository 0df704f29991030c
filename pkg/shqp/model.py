"""
SHQP Feasibility - Data Models

Shared record types: tagged halfspaces, projection results, Farkas
certificates, per-round trace records and the solver outcome variants.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DimensionMismatch, ValidationError

if TYPE_CHECKING:
    from .qp import QpProblem


Tag = Tuple[int, int]

# Set index used for halfspaces produced by aggregation or by a CIP subgradient.
AGGREGATE_INDEX = -1
FUNCTION_INDEX = 0


def as_vector(x: Any, dim: Optional[int] = None, what: str = "vector") -> np.ndarray:
    """
    Convert input to a finite float vector.

    Raises:
        DimensionMismatch: if `dim` is given and the length differs
        ValidationError: on empty input or non-finite entries
    """
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValidationError(what, "dimension must be at least 1")
    if dim is not None and v.size != dim:
        raise DimensionMismatch(dim, v.size, what)
    if not np.all(np.isfinite(v)):
        raise ValidationError(what, "entries must be finite")
    return v


@dataclass(frozen=True, eq=False)
class TaggedHalfspace:
    """
    Halfspace {z : normal . z <= offset} generated in round `tag[0]`
    from set `tag[1]`.
    """
    normal: np.ndarray
    offset: float
    tag: Tag

    def __post_init__(self):
        a = as_vector(self.normal, what="normal")
        norm = float(np.linalg.norm(a))
        if norm == 0.0:
            raise ValidationError("normal", "must be nonzero")
        object.__setattr__(self, "normal", a)
        object.__setattr__(self, "offset", float(self.offset))
        object.__setattr__(self, "tag", (int(self.tag[0]), int(self.tag[1])))
        object.__setattr__(self, "_norm", norm)
        object.__setattr__(self, "_unit", a / norm)

    @property
    def iteration(self) -> int:
        return self.tag[0]

    @property
    def set_index(self) -> int:
        return self.tag[1]

    @property
    def norm(self) -> float:
        return self._norm  # type: ignore[attr-defined]

    @property
    def unit_normal(self) -> np.ndarray:
        return self._unit  # type: ignore[attr-defined]

    @property
    def unit_offset(self) -> float:
        return self.offset / self.norm

    def signed_distance(self, x: np.ndarray) -> float:
        """Positive outside, zero on the boundary, negative inside"""
        return float(self.unit_normal @ x) - self.unit_offset

    def contains(self, x: np.ndarray, tol: float = 0.0) -> bool:
        return self.signed_distance(x) <= tol

    def __repr__(self) -> str:
        return f"TaggedHalfspace(tag={self.tag}, normal={self.normal.tolist()}, offset={self.offset!r})"


@dataclass(frozen=True, eq=False)
class ProjectionResult:
    """Nearest point of a set, the offset x - point and its length"""
    point: np.ndarray
    distance: float
    offset: np.ndarray


@dataclass(frozen=True, eq=False)
class FarkasCertificate:
    """
    Nonnegative multipliers r with sum r_j c_j ~ 0 and sum r_j b_j < 0,
    proving that {x : c_j . x <= b_j for all j} is empty.
    """
    multipliers: np.ndarray
    residual_norm: float
    gap: float

    def to_json_dict(self) -> Dict[str, Any]:
        return {
            "multipliers": [float(v) for v in self.multipliers],
            "residual_norm": float(self.residual_norm),
            "gap": float(self.gap),
        }


# ============================================================================
# Traces
# ============================================================================

@dataclass(frozen=True, eq=False)
class IterationRecord:
    """
    One solver round.

    `per_set_distances` holds d(x_i, K_l) for SIP/BAP runs and the single
    value max(f(x_i), 0) for CIP runs.
    """
    iterate: np.ndarray
    per_set_distances: np.ndarray
    l_star: int
    working_set_size: int = 0
    qp_steps_used: int = 0
    halfspaces_added: int = 0
    step_norm: float = 0.0
    tags: Tuple[Tag, ...] = ()
    normals: Tuple[np.ndarray, ...] = ()
    value: Optional[float] = None
    anchor_distance: Optional[float] = None

    @property
    def max_set_distance(self) -> float:
        if self.per_set_distances.size == 0:
            return 0.0
        return float(np.max(self.per_set_distances))


@dataclass
class SolveTrace:
    """Per-round records of one solver run, in execution order"""
    records: List[IterationRecord] = field(default_factory=list)

    def append(self, record: IterationRecord) -> None:
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i: int) -> IterationRecord:
        return self.records[i]

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def iterates(self) -> np.ndarray:
        return np.array([r.iterate for r in self.records])

    @property
    def max_distances(self) -> np.ndarray:
        return np.array([r.max_set_distance for r in self.records])

    @property
    def last(self) -> IterationRecord:
        return self.records[-1]


# ============================================================================
# Outcomes
# ============================================================================

@dataclass(frozen=True, eq=False)
class Feasible:
    point: np.ndarray
    iterations: int
    kind: str = field(default="feasible", init=False)

    def summary(self) -> str:
        return f"Feasible after {self.iterations} iterations at {_fmt(self.point)}"


@dataclass(frozen=True, eq=False)
class Infeasible:
    """
    Certified infeasibility.

    `system` is the halfspace system the certificate refers to; it is None
    for the zero-subgradient certificate of a CIP.
    """
    certificate: FarkasCertificate
    iterations: int
    system: Optional["QpProblem"] = None
    reason: str = "empty outer approximation"
    kind: str = field(default="infeasible", init=False)

    def summary(self) -> str:
        return (
            f"Infeasible after {self.iterations} iterations ({self.reason}); "
            f"certificate gap {self.certificate.gap:.6g}, "
            f"residual {self.certificate.residual_norm:.3g}"
        )


@dataclass(frozen=True, eq=False)
class Diverging:
    trace: SolveTrace
    recession_estimate: np.ndarray
    iterations: int
    kind: str = field(default="diverging", init=False)

    def summary(self) -> str:
        return (
            f"Diverging after {self.iterations} iterations; "
            f"recession estimate {_fmt(self.recession_estimate)}"
        )


@dataclass(frozen=True, eq=False)
class MaxIterations:
    trace: SolveTrace
    iterations: int
    kind: str = field(default="max_iterations", init=False)

    def summary(self) -> str:
        residual = self.trace.last.max_set_distance if len(self.trace) else float("nan")
        return f"Stopped at the iteration limit ({self.iterations}); final residual {residual:.3g}"


SolveOutcome = Union[Feasible, Infeasible, Diverging, MaxIterations]


def _fmt(v: Sequence[float]) -> str:
    return "(" + ", ".join(f"{float(x):.10g}" for x in v) + ")"
