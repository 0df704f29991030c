"""
SHQP Feasibility

Supporting halfspace + quadratic programming methods for convex
feasibility problems.

This package implements:
- Exact projection oracles for common closed convex sets
- A Goldfarb-Idnani dual active-set QP with usable partial solves and
  Farkas certificates of infeasibility
- Set intersection (SIP), convex inequality (CIP) and best approximation
  (BAP) solvers with configurable halfspace working sets
- Convergence-rate, metric-inequality, angle and recession diagnostics

Usage:
    from shqp import Ball, SipProblem, SolverConfig, solve_sip

    problem = SipProblem([Ball([0, 0], 1), Ball([1.5, 0], 1)], start=[0.75, 2.5])
    outcome, trace = solve_sip(problem, SolverConfig())
    print(outcome.summary())

Or via CLI:
    shqp solve --problem problems/two_balls.json --trace-out trace.csv
    python feasibility.py diagnose --trace trace.csv
"""

__version__ = "1.0.0"
__license__ = "MIT"

from .diagnostics import (
    KappaEstimate,
    RateReport,
    RateThresholds,
    angle_statistics,
    estimate_kappa,
    estimate_rates,
    recession_report,
)
from .errors import FeasibilityError
from .functions import (
    GluedExponential,
    MaxAffine,
    MaxOfFunctions,
    NormMinusRadius,
    QuadraticMaxAffine,
)
from .geometry import (
    AffineSubspace,
    Ball,
    Box,
    Ellipsoid,
    ExponentialRegion,
    Halfspace,
    Hyperplane,
    Polyhedron,
    halfspace_from_projection,
    project,
    relax,
    subgradient_halfspace,
    supporting_halfspace,
)
from .halfspaces import (
    AllAccumulating,
    AnglePruned,
    CurrentRoundOnly,
    HalfspaceStore,
    LastRounds,
    aggregate,
    angle_between,
    evict_stale,
    parse_policy,
    prune_by_angle,
    select_working_set,
)
from .model import (
    Diverging,
    FarkasCertificate,
    Feasible,
    Infeasible,
    MaxIterations,
    SolveTrace,
    TaggedHalfspace,
)
from .problem_io import parse_problem, read_trace, write_trace
from .qp import QpProblem, check_farkas, gi_solve, gi_step, gi_warm_start
from .solvers import (
    BapProblem,
    CipProblem,
    SipProblem,
    SolverConfig,
    solve_bap,
    solve_cip,
    solve_map,
    solve_sip,
    step_accept,
)

__all__ = [
    # Solvers
    "solve_sip",
    "solve_cip",
    "solve_bap",
    "solve_map",
    "step_accept",
    "SipProblem",
    "CipProblem",
    "BapProblem",
    "SolverConfig",
    # Geometry
    "Halfspace",
    "Hyperplane",
    "Ball",
    "Box",
    "AffineSubspace",
    "Ellipsoid",
    "Polyhedron",
    "ExponentialRegion",
    "project",
    "supporting_halfspace",
    "subgradient_halfspace",
    "halfspace_from_projection",
    "relax",
    # Functions
    "MaxAffine",
    "NormMinusRadius",
    "QuadraticMaxAffine",
    "GluedExponential",
    "MaxOfFunctions",
    # QP
    "QpProblem",
    "gi_solve",
    "gi_step",
    "gi_warm_start",
    "check_farkas",
    # Halfspace model
    "LastRounds",
    "CurrentRoundOnly",
    "AllAccumulating",
    "AnglePruned",
    "HalfspaceStore",
    "parse_policy",
    "select_working_set",
    "angle_between",
    "prune_by_angle",
    "aggregate",
    "evict_stale",
    # Models
    "TaggedHalfspace",
    "FarkasCertificate",
    "SolveTrace",
    "Feasible",
    "Infeasible",
    "Diverging",
    "MaxIterations",
    # Diagnostics
    "RateReport",
    "RateThresholds",
    "KappaEstimate",
    "estimate_rates",
    "estimate_kappa",
    "recession_report",
    "angle_statistics",
    # I/O
    "parse_problem",
    "read_trace",
    "write_trace",
    "FeasibilityError",
    # Metadata
    "__version__",
    "__license__",
]
