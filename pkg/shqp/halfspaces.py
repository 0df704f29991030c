"""
SHQP Feasibility - Halfspace Model

Store of accumulated tagged halfspaces together with the working-set
policies that decide which of them enter the projection polyhedron of a
round, angle-based pruning and dual-weighted aggregation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigInvalid, EmptySelection, ValidationError, ZeroAggregateNormal, ZeroVector
from .model import AGGREGATE_INDEX, FarkasCertificate, TaggedHalfspace, as_vector

logger = logging.getLogger(__name__)

DEFAULT_P_BAR = 10
DEFAULT_ALPHA = 0.05


# ============================================================================
# Working-set policies
# ============================================================================

@dataclass(frozen=True)
class LastRounds:
    """Halfspaces from rounds max(i - p_bar, 0) .. i"""
    p_bar: int = DEFAULT_P_BAR

    def __post_init__(self):
        if self.p_bar < 0:
            raise ConfigInvalid("p_bar must be nonnegative")

    def describe(self) -> str:
        return f"last:{self.p_bar}"


@dataclass(frozen=True)
class CurrentRoundOnly:
    """Halfspaces from round i only"""

    def describe(self) -> str:
        return "current"


@dataclass(frozen=True)
class AllAccumulating:
    """Every halfspace ever generated; S_i grows monotonically"""

    def describe(self) -> str:
        return "all"


@dataclass(frozen=True)
class AnglePruned:
    """LastRounds{p_bar} after removing older halfspaces within `alpha` of a newer one"""
    alpha: float = DEFAULT_ALPHA
    p_bar: int = DEFAULT_P_BAR

    def __post_init__(self):
        if not 0.0 < self.alpha < math.pi:
            raise ConfigInvalid("alpha must lie in (0, pi)")
        if self.p_bar < 0:
            raise ConfigInvalid("p_bar must be nonnegative")

    def describe(self) -> str:
        return f"pruned:{self.alpha:g},{self.p_bar}"


WorkingSetPolicy = Union[LastRounds, CurrentRoundOnly, AllAccumulating, AnglePruned]


def parse_policy(text: str) -> WorkingSetPolicy:
    """
    Parse `current`, `all`, `last:P` or `pruned:ALPHA,P`.

    Raises:
        ConfigInvalid: on anything else
    """
    text = text.strip().lower()
    try:
        if text == "current":
            return CurrentRoundOnly()
        if text == "all":
            return AllAccumulating()
        if text.startswith("last:"):
            return LastRounds(int(text[5:]))
        if text.startswith("pruned:"):
            alpha, p_bar = text[7:].split(",")
            return AnglePruned(float(alpha), int(p_bar))
    except ValueError as e:
        if isinstance(e, ConfigInvalid):
            raise
        raise ConfigInvalid(f"bad policy {text!r}: {e}") from None
    raise ConfigInvalid(f"unknown policy {text!r} (expected current, all, last:P or pruned:ALPHA,P)")


# ============================================================================
# Store
# ============================================================================

class HalfspaceStore:
    """
    Ordered halfspaces; tags are unique and round tags never decrease in
    insertion order (an aggregate sits at the front with the newest round
    tag it absorbed).
    """

    def __init__(self, policy: WorkingSetPolicy, items: Iterable[TaggedHalfspace] = ()):
        self.policy = policy
        self.items: List[TaggedHalfspace] = []
        self._tags = set()
        for h in items:
            self.add(h)

    def __len__(self) -> int:
        return len(self.items)

    def __iter__(self):
        return iter(self.items)

    def add(self, h: TaggedHalfspace) -> None:
        if h.tag in self._tags:
            raise ValidationError("tag", f"duplicate halfspace tag {h.tag}")
        if self.items and h.iteration < self.items[-1].iteration:
            raise ValidationError("tag", f"round {h.iteration} precedes the newest stored round")
        self.items.append(h)
        self._tags.add(h.tag)

    def remove(self, doomed: Sequence[TaggedHalfspace]) -> None:
        ids = {id(h) for h in doomed}
        self.items = [h for h in self.items if id(h) not in ids]
        self._tags = {h.tag for h in self.items}

    def snapshot(self) -> Tuple[TaggedHalfspace, ...]:
        return tuple(self.items)

    @property
    def newest_round(self) -> int:
        return self.items[-1].iteration if self.items else -1


def select_working_set(store: HalfspaceStore, i: int, l_star: int) -> List[TaggedHalfspace]:
    """
    Halfspaces forming the round-i polyhedron under the store's policy.

    Raises:
        EmptySelection: if round i produced no halfspace, or (i, l_star)
            is missing under AllAccumulating
    """
    current = [h for h in store.items if h.iteration == i]
    if not current:
        raise EmptySelection(f"no halfspace generated in round {i}")
    policy = store.policy
    if isinstance(policy, CurrentRoundOnly):
        return current
    if isinstance(policy, AllAccumulating):
        if not any(h.tag == (i, l_star) for h in current):
            raise EmptySelection(f"halfspace {(i, l_star)} of the farthest set is missing")
        return list(store.items)
    # LastRounds and AnglePruned share the window; pruning already ran on the store.
    first = _window_start(policy, i)
    return [h for h in store.items if h.iteration >= first]


def _window_start(policy: WorkingSetPolicy, i: int) -> int:
    if isinstance(policy, CurrentRoundOnly):
        return i
    return max(i - policy.p_bar, 0)  # type: ignore[union-attr]


def evict_stale(store: HalfspaceStore, i: int) -> int:
    """
    Drop halfspaces that no round from i on can select, so windowed
    stores stay bounded. AllAccumulating keeps everything. Returns the
    number removed.
    """
    if isinstance(store.policy, AllAccumulating):
        return 0
    first = _window_start(store.policy, i)
    stale = [h for h in store.items if h.iteration < first]
    if stale:
        store.remove(stale)
        logger.debug("evicted %d halfspaces older than round %d", len(stale), first)
    return len(stale)


def angle_between(u: np.ndarray, v: np.ndarray) -> float:
    """
    Angle in [0, pi] between two nonzero vectors.

    Raises:
        ZeroVector: if either vector is zero
    """
    u = as_vector(u, what="u")
    v = as_vector(v, u.size, what="v")
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("angle against the zero vector is undefined")
    cos = float(u @ v) / (nu * nv)
    return math.acos(min(1.0, max(-1.0, cos)))


def prune_by_angle(store: HalfspaceStore, alpha: float) -> int:
    """
    Remove every halfspace that has a strictly newer one within angle
    `alpha` (all pairs judged on the store as it was on entry). The
    current round is never pruned. Returns the number removed.
    """
    if not 0.0 < alpha < math.pi:
        raise ConfigInvalid("alpha must lie in (0, pi)")
    items = store.items
    if len(items) < 2:
        return 0
    U = np.array([h.unit_normal for h in items])
    rounds = np.array([h.iteration for h in items])
    angles = np.arccos(np.clip(U @ U.T, -1.0, 1.0))
    newer = rounds[None, :] > rounds[:, None]
    doomed_mask = np.any((angles <= alpha) & newer, axis=1)
    doomed = [h for h, gone in zip(items, doomed_mask) if gone]
    if doomed:
        store.remove(doomed)
        logger.debug("pruned %d halfspaces within %.3g rad of newer ones", len(doomed), alpha)
    return len(doomed)


def aggregate(
    halfspaces: Sequence[TaggedHalfspace],
    weights: Sequence[float],
    tag: Optional[Tuple[int, int]] = None,
) -> TaggedHalfspace:
    """
    Combine halfspaces into [sum w_j a_j] . x <= sum w_j b_j.

    Every point satisfying all inputs satisfies the result. The default
    tag is (newest absorbed round, AGGREGATE_INDEX).

    Raises:
        ValidationError: on negative weights or length mismatch
        ZeroAggregateNormal: if the combined normal vanishes; carries a
            Farkas certificate when the combined offset is negative
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != len(halfspaces) or not halfspaces:
        raise ValidationError("weights", "need one weight per halfspace")
    if np.any(w < 0.0) or not np.all(np.isfinite(w)):
        raise ValidationError("weights", "must be finite and nonnegative")
    A = np.array([h.normal for h in halfspaces])
    b = np.array([h.offset for h in halfspaces])
    normal = w @ A
    offset = float(w @ b)
    scale = float(w @ np.linalg.norm(A, axis=1))
    if scale == 0.0 or float(np.linalg.norm(normal)) <= 1e-14 * scale:
        certificate = None
        if offset < 0.0:
            certificate = FarkasCertificate(
                multipliers=w.copy(),
                residual_norm=float(np.linalg.norm(normal)),
                gap=offset,
            )
        raise ZeroAggregateNormal("aggregated normal vanishes", certificate=certificate)
    if tag is None:
        tag = (max(h.iteration for h in halfspaces), AGGREGATE_INDEX)
    return TaggedHalfspace(normal=normal, offset=offset, tag=tag)
