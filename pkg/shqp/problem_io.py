"""
SHQP Feasibility - Problem and Trace Files

Reads JSON problem files into validated problems, writes and re-reads
trace CSVs, and writes Farkas certificates.

Problem files are JSON objects:

    {"kind": "sip" | "cip" | "bap",
     "dimension": n,
     "sets": [...],            sip and bap
     "function": {...},        cip
     "start": [...],           sip and cip (default: origin)
     "anchor": [...],          bap
     "known_solution": [...]}  optional

Floats in trace CSVs are written with 17 significant digits so that a
re-read trace is bitwise identical to the original.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Any, Callable, Dict, List, Optional, Tuple, Union

import numpy as np

from .errors import DimensionMismatch, ParseError, ValidationError
from .functions import (
    ConvexFunction,
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
    ConvexSet,
    Ellipsoid,
    ExponentialRegion,
    Halfspace,
    Hyperplane,
    Polyhedron,
)
from .model import Infeasible, IterationRecord, SolveTrace
from .solvers import BapProblem, CipProblem, SipProblem

logger = logging.getLogger(__name__)

PROBLEM_KINDS = ("sip", "cip", "bap")
FIXED_COLUMNS = ("iteration", "step_norm", "max_set_distance")
TAIL_COLUMNS = ("working_set_size", "qp_steps_used", "l_star", "halfspaces_added")

PathLike = Union[str, Path]


@dataclass(frozen=True, eq=False)
class ProblemFile:
    """Validated contents of a problem file"""
    kind: str
    dimension: int
    sets: Tuple[ConvexSet, ...] = ()
    function: Optional[ConvexFunction] = None
    start: Optional[np.ndarray] = None
    anchor: Optional[np.ndarray] = None
    known_solution: Optional[np.ndarray] = None
    name: str = "problem"

    def to_problem(self) -> Union[SipProblem, CipProblem, BapProblem]:
        if self.kind == "sip":
            return SipProblem(self.sets, self.start)
        if self.kind == "cip":
            return CipProblem(self.function, self.start)
        return BapProblem(self.anchor, self.sets)

    def as_sip(self) -> SipProblem:
        """Set list as an intersection problem (bap files start from the anchor)"""
        if self.kind == "cip":
            raise ValidationError("kind", "a cip problem has no set list")
        return SipProblem(self.sets, self.start if self.kind == "sip" else self.anchor)


# ============================================================================
# Field helpers
# ============================================================================

def _require(data: Dict[str, Any], key: str, where: str) -> Any:
    if not isinstance(data, dict):
        raise ParseError(where, "expected an object")
    if key not in data:
        raise ParseError(f"{where}.{key}" if where else key, "missing field")
    return data[key]


def _number(value: Any, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError(where, f"expected a number, got {type(value).__name__}")
    return float(value)


def _vector(value: Any, where: str, dim: Optional[int] = None) -> np.ndarray:
    if not isinstance(value, list) or not value:
        raise ParseError(where, "expected a non-empty array of numbers")
    v = np.array([_number(x, f"{where}[{k}]") for k, x in enumerate(value)])
    if dim is not None and v.size != dim:
        raise ValidationError(where, f"expected dimension {dim}, got {v.size}")
    return v


def _matrix(value: Any, where: str, dim: int) -> np.ndarray:
    if not isinstance(value, list) or len(value) != dim:
        raise ParseError(where, f"expected {dim} rows")
    return np.array([_vector(row, f"{where}[{k}]", dim) for k, row in enumerate(value)])


def _rows(value: Any, where: str, dim: int) -> List[Tuple[np.ndarray, float]]:
    if not isinstance(value, list) or not value:
        raise ParseError(where, "expected a non-empty array of {a, b} objects")
    return [
        (_vector(_require(row, "a", f"{where}[{k}]"), f"{where}[{k}].a", dim),
         _number(_require(row, "b", f"{where}[{k}]"), f"{where}[{k}].b"))
        for k, row in enumerate(value)
    ]


def _build(where: str, factory: Callable[[], Any]) -> Any:
    """Run a constructor, prefixing validation failures with the file location"""
    try:
        return factory()
    except ValidationError as e:
        raise ValidationError(f"{where}.{e.field}", e.constraint) from None
    except DimensionMismatch as e:
        raise ValidationError(where, str(e)) from None


# ============================================================================
# Sets and functions
# ============================================================================

def _parse_set(entry: Any, where: str, dim: int) -> ConvexSet:
    kind = _require(entry, "type", where)
    if kind == "halfspace":
        a = _vector(_require(entry, "a", where), f"{where}.a", dim)
        b = _number(_require(entry, "b", where), f"{where}.b")
        return _build(where, lambda: Halfspace(a, b))
    if kind == "hyperplane":
        a = _vector(_require(entry, "a", where), f"{where}.a", dim)
        b = _number(_require(entry, "b", where), f"{where}.b")
        return _build(where, lambda: Hyperplane(a, b))
    if kind == "ball":
        center = _vector(_require(entry, "center", where), f"{where}.center", dim)
        radius = _number(_require(entry, "radius", where), f"{where}.radius")
        return _build(where, lambda: Ball(center, radius))
    if kind == "box":
        lo = _vector(_require(entry, "lo", where), f"{where}.lo", dim)
        hi = _vector(_require(entry, "hi", where), f"{where}.hi", dim)
        return _build(where, lambda: Box(lo, hi))
    if kind == "affine":
        rows = _rows(_require(entry, "rows", where), f"{where}.rows", dim)
        return _build(where, lambda: AffineSubspace(rows))
    if kind == "ellipsoid":
        Q = _matrix(_require(entry, "Q", where), f"{where}.Q", dim)
        center = _vector(_require(entry, "center", where), f"{where}.center", dim)
        return _build(where, lambda: Ellipsoid(Q, center))
    if kind == "polyhedron":
        rows = _rows(_require(entry, "halfspaces", where), f"{where}.halfspaces", dim)
        return _build(where, lambda: Polyhedron(rows))
    if kind == "exp_region":
        if dim != 2:
            raise ValidationError(where, "exp_region lives in dimension 2")
        side = int(_number(entry.get("side", 1), f"{where}.side"))
        return _build(where, lambda: ExponentialRegion(side))
    raise ParseError(f"{where}.type", f"unknown set type {kind!r}")


def _parse_function(entry: Any, where: str, dim: int) -> ConvexFunction:
    family = _require(entry, "family", where)
    tie_break = entry.get("tie_break", "lowest")
    if family == "zigzag":
        f: ConvexFunction = _build(where, lambda: MaxAffine.zigzag(tie_break))
    elif family == "max_affine":
        pieces = _rows(_require(entry, "pieces", where), f"{where}.pieces", dim)
        f = _build(where, lambda: MaxAffine(pieces, tie_break))
    elif family == "norm_minus_radius":
        center = _vector(_require(entry, "center", where), f"{where}.center", dim)
        radius = _number(_require(entry, "radius", where), f"{where}.radius")
        f = _build(where, lambda: NormMinusRadius(center, radius))
    elif family == "quadratic_max_affine":
        P = _matrix(_require(entry, "P", where), f"{where}.P", dim)
        center = _vector(_require(entry, "center", where), f"{where}.center", dim)
        rho = _number(_require(entry, "rho", where), f"{where}.rho")
        raw = entry.get("pieces", [])
        pieces = _rows(raw, f"{where}.pieces", dim) if raw else []
        f = _build(where, lambda: QuadraticMaxAffine(P, center, rho, pieces, tie_break))
    elif family == "glued_exponential":
        f = GluedExponential()
    elif family == "max_of":
        parts = _require(entry, "functions", where)
        if not isinstance(parts, list) or not parts:
            raise ParseError(f"{where}.functions", "expected a non-empty array")
        inner = [_parse_function(p, f"{where}.functions[{k}]", dim) for k, p in enumerate(parts)]
        f = _build(where, lambda: MaxOfFunctions(inner, tie_break))
    else:
        raise ParseError(f"{where}.family", f"unknown function family {family!r}")
    if f.dim != dim:
        raise ValidationError(where, f"{family} has dimension {f.dim}, file declares {dim}")
    return f


# ============================================================================
# Problem files
# ============================================================================

def parse_problem_dict(data: Any, name: str = "problem") -> ProblemFile:
    """
    Validate an already-decoded problem object.

    Raises:
        ParseError: on missing fields or wrong JSON types
        ValidationError: when a parameter violates its set or function
            invariant; `field` names the offending location
    """
    kind = _require(data, "kind", "")
    if kind not in PROBLEM_KINDS:
        raise ParseError("kind", f"expected one of {PROBLEM_KINDS}, got {kind!r}")
    raw_dim = _require(data, "dimension", "")
    if isinstance(raw_dim, bool) or not isinstance(raw_dim, int) or raw_dim < 1:
        raise ParseError("dimension", "expected a positive integer")
    dim = int(raw_dim)

    sets: Tuple[ConvexSet, ...] = ()
    function = None
    start = anchor = None
    if kind in ("sip", "bap"):
        entries = _require(data, "sets", "")
        if not isinstance(entries, list) or not entries:
            raise ParseError("sets", "expected a non-empty array")
        sets = tuple(_parse_set(e, f"sets[{k}]", dim) for k, e in enumerate(entries))
    else:
        function = _parse_function(_require(data, "function", ""), "function", dim)
    if kind == "bap":
        anchor = _vector(_require(data, "anchor", ""), "anchor", dim)
    elif "start" in data:
        start = _vector(data["start"], "start", dim)
    else:
        start = np.zeros(dim)
    known = data.get("known_solution")
    known_solution = _vector(known, "known_solution", dim) if known is not None else None

    logger.debug("parsed %s problem %r in dimension %d", kind, name, dim)
    return ProblemFile(
        kind=kind,
        dimension=dim,
        sets=sets,
        function=function,
        start=start,
        anchor=anchor,
        known_solution=known_solution,
        name=name,
    )


def parse_problem(path: PathLike) -> ProblemFile:
    """
    Load and validate a JSON problem file.

    Args:
        path: Path to the problem file

    Returns:
        ProblemFile named after the file stem

    Example:
        >>> pf = parse_problem('problems/cone_pair.json')
        >>> outcome, trace = solve_sip(pf.to_problem())
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ParseError(str(path), e.strerror or str(e)) from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}:{e.lineno}:{e.colno}", e.msg) from None
    return parse_problem_dict(data, name=path.stem)


# ============================================================================
# Traces
# ============================================================================

def format_float(value: float) -> str:
    return format(float(value), ".17g")


def _normals_cell(record: IterationRecord) -> str:
    return ";".join(" ".join(format_float(c) for c in u) for u in record.normals)


def trace_header(trace: SolveTrace) -> List[str]:
    if not len(trace):
        return list(FIXED_COLUMNS) + list(TAIL_COLUMNS) + ["normals"]
    r = trace[0].per_set_distances.size
    n = trace[0].iterate.size
    return (
        list(FIXED_COLUMNS)
        + [f"d_{l}" for l in range(1, r + 1)]
        + list(TAIL_COLUMNS)
        + [f"x_{k}" for k in range(1, n + 1)]
        + ["normals"]
    )


def write_trace(trace: SolveTrace, target: Union[PathLike, IO[str]]) -> None:
    """
    Write one CSV row per round.

    Columns: iteration, step_norm, max_set_distance, d_1..d_r,
    working_set_size, qp_steps_used, l_star (1-based), halfspaces_added,
    x_1..x_n, normals ("u1 u2;v1 v2" for the unit normals added that round).
    """
    if isinstance(target, (str, Path)):
        with open(target, "w", encoding="utf-8", newline="") as f:
            write_trace(trace, f)
        return
    writer = csv.writer(target, lineterminator="\n")
    writer.writerow(trace_header(trace))
    for i, record in enumerate(trace):
        writer.writerow(
            [str(i), format_float(record.step_norm), format_float(record.max_set_distance)]
            + [format_float(d) for d in record.per_set_distances]
            + [str(record.working_set_size), str(record.qp_steps_used), str(record.l_star + 1),
               str(record.halfspaces_added)]
            + [format_float(c) for c in record.iterate]
            + [_normals_cell(record)]
        )


def _parse_normals(cell: str, where: str) -> Tuple[np.ndarray, ...]:
    if not cell.strip():
        return ()
    try:
        return tuple(np.array([float(c) for c in part.split()]) for part in cell.split(";"))
    except ValueError:
        raise ParseError(where, f"bad normals cell {cell!r}") from None


def read_trace(path: PathLike) -> SolveTrace:
    """
    Re-read a CSV written by write_trace.

    Raises:
        ParseError: on a missing column or a malformed value
    """
    path = Path(path)
    try:
        handle = open(path, encoding="utf-8", newline="")
    except OSError as e:
        raise ParseError(str(path), e.strerror or str(e)) from None
    trace = SolveTrace()
    with handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header:
            raise ParseError(f"{path}:1", "empty trace file")
        missing = [c for c in FIXED_COLUMNS + TAIL_COLUMNS if c not in header]
        if missing or "normals" not in header:
            raise ParseError(f"{path}:1", f"missing columns {missing or ['normals']}")
        d_cols = [k for k, c in enumerate(header) if c.startswith("d_")]
        x_cols = [k for k, c in enumerate(header) if c.startswith("x_")]
        col = {c: k for k, c in enumerate(header)}
        for line, row in enumerate(reader, start=2):
            where = f"{path}:{line}"
            if len(row) != len(header):
                raise ParseError(where, f"expected {len(header)} fields, got {len(row)}")
            try:
                record = IterationRecord(
                    iterate=np.array([float(row[k]) for k in x_cols]),
                    per_set_distances=np.array([float(row[k]) for k in d_cols]),
                    l_star=int(row[col["l_star"]]) - 1,
                    working_set_size=int(row[col["working_set_size"]]),
                    qp_steps_used=int(row[col["qp_steps_used"]]),
                    halfspaces_added=int(row[col["halfspaces_added"]]),
                    step_norm=float(row[col["step_norm"]]),
                    normals=_parse_normals(row[col["normals"]], where),
                )
            except ValueError as e:
                raise ParseError(where, str(e)) from None
            trace.append(record)
    return trace


def write_certificate(outcome: Infeasible, path: PathLike) -> None:
    """Write the certificate and, when attached, the halfspace system it refers to"""
    data: Dict[str, Any] = outcome.certificate.to_json_dict()
    data["iterations"] = outcome.iterations
    data["reason"] = outcome.reason
    if outcome.system is not None:
        data["system"] = {
            "normals": outcome.system.normals.tolist(),
            "offsets": outcome.system.offsets.tolist(),
        }
    else:
        data["system"] = None
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
