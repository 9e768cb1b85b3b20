"""Time-optimal search on determinized worlds."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._search import astar
from .errors import UnreachableGoal
from .sampling import SampledWorld
from .world import ORACLE_SPEED, Roadmap, WorldTruth

MIN_SPEED = 1.0
MAX_SPEED = 10.0


@dataclass(frozen=True)
class SpeedProfile:
    """Speeds (m/s) used to time a plan.

    ``first_edge_speed`` overrides the observed/unobserved rule on the first
    edge of a plan when set. Reverse edges always run at ``reverse_speed``.
    """

    observed_speed: float = 5.0
    unobserved_speed: float = 10.0
    first_edge_speed: float | None = None
    reverse_speed: float = 1.0

    def __post_init__(self):
        speeds = [self.observed_speed, self.unobserved_speed, self.reverse_speed]
        if self.first_edge_speed is not None:
            speeds.append(self.first_edge_speed)
        for s in speeds:
            if not MIN_SPEED <= s <= MAX_SPEED:
                raise ValueError(f"speed {s} outside [{MIN_SPEED}, {MAX_SPEED}] m/s")
        if self.reverse_speed != 1.0:
            raise ValueError("reverse speed is fixed at 1 m/s")

    def base(self) -> SpeedProfile:
        return replace(self, first_edge_speed=None)


FIXED_PROFILE = SpeedProfile()
ADAPTIVE_FIRST_SPEEDS = (1.0, 3.0, 5.0, 7.0, 10.0)
ADAPTIVE_PROFILES = tuple(
    SpeedProfile(first_edge_speed=s) for s in ADAPTIVE_FIRST_SPEEDS
)


@dataclass(frozen=True)
class Plan:
    """Edge sequence with per-edge speeds.

    ``first_fraction`` is the share of the first edge still to be driven
    (below 1 only when the robot is stopped mid-edge).
    """

    edges: tuple[int, ...]
    speeds: tuple[float, ...]
    lengths: tuple[float, ...]
    source: int | str | None = None
    attempt: str = "forward"
    first_fraction: float = 1.0

    def __post_init__(self):
        if not len(self.edges) == len(self.speeds) == len(self.lengths):
            raise ValueError("edges, speeds and lengths must align")
        if any(s <= 0 for s in self.speeds):
            raise ValueError("speeds must be positive")

    def __len__(self):
        return len(self.edges)

    @property
    def durations(self) -> tuple[float, ...]:
        out = [length / speed for length, speed in zip(self.lengths, self.speeds)]
        if out:
            out[0] = self.first_fraction * self.lengths[0] / self.speeds[0]
        return tuple(out)

    @property
    def traversal_time(self) -> float:
        total = 0.0
        for d in self.durations:
            total += d
        return total

    def with_first_speed(self, speed: float) -> Plan:
        if not self.edges:
            return self
        return replace(self, speeds=(float(speed),) + self.speeds[1:])

    def uses_reverse(self, roadmap: Roadmap) -> bool:
        return any(roadmap.edge_reverse[e] for e in self.edges)


def segment_observed(roadmap: Roadmap, observed: np.ndarray | None) -> np.ndarray:
    """A segment is observed when every pixel of its footprint has been sensed."""
    if observed is None:
        return np.zeros(roadmap.n_segments, dtype=bool)
    return roadmap.segment_reduce(np.asarray(observed, dtype=bool).ravel(), np.logical_and)


def edge_speeds(
    roadmap: Roadmap, profile: SpeedProfile, seg_observed: np.ndarray | None = None
) -> np.ndarray:
    """Per-edge speed from the observed/unobserved rule (first-edge override not applied)."""
    if seg_observed is None:
        seg_observed = np.zeros(roadmap.n_segments, dtype=bool)
    speed = np.where(
        seg_observed[roadmap.edge_segment],
        profile.observed_speed,
        profile.unobserved_speed,
    )
    return np.where(roadmap.edge_reverse, profile.reverse_speed, speed)


def search(
    roadmap: Roadmap,
    edge_cost: np.ndarray,
    start_state: tuple[int, int | None],
    allow_reverse: bool,
    goal: int | None = None,
) -> tuple[np.ndarray, float]:
    """A* over (vertex, heading) with arbitrary non-negative edge costs.

    Costs must be at least ``length / MAX_SPEED`` for the heuristic to stay
    admissible. ``inf`` removes an edge.
    """
    vertex, heading = start_state
    goal = roadmap.goal if goal is None else goal
    return astar(
        roadmap.out_ptr,
        roadmap.out_edge,
        roadmap.edge_dst,
        roadmap.edge_facing,
        roadmap.edge_reverse,
        np.ascontiguousarray(edge_cost, dtype=np.float64),
        roadmap.positions[:, 0],
        roadmap.positions[:, 1],
        int(vertex),
        -1 if heading is None else int(heading),
        int(goal),
        bool(allow_reverse),
        1.0 / MAX_SPEED,
    )


def _make_plan(roadmap, path, speeds, first_speed, source, attempt):
    edges = tuple(int(e) for e in path)
    sp = [float(speeds[e]) for e in edges]
    if sp and first_speed is not None and not roadmap.edge_reverse[edges[0]]:
        sp[0] = float(first_speed)
    lengths = tuple(float(roadmap.edge_length[e]) for e in edges)
    return Plan(edges, tuple(sp), lengths, source=source, attempt=attempt)


def plan_astar(
    world: SampledWorld,
    roadmap: Roadmap,
    start_state: tuple[int, int | None],
    profile: SpeedProfile = FIXED_PROFILE,
    allow_reverse: bool = False,
    *,
    seg_observed: np.ndarray | None = None,
    goal: int | None = None,
    collision_penalty: float | None = None,
) -> Plan | None:
    """Minimum-time plan over edges that are free in ``world``; None if unreachable.

    With ``collision_penalty`` set, blocked edges stay in the graph at
    ``time + collision_penalty * speed`` instead of being removed.
    """
    speeds = edge_speeds(roadmap, profile, seg_observed)
    if profile.first_edge_speed is not None:
        first = roadmap.out_edges(start_state[0])
        first = first[~roadmap.edge_reverse[first]]
        speeds = speeds.copy()
        speeds[first] = profile.first_edge_speed
    cost = roadmap.edge_length / speeds
    blocked = ~world.segment_free[roadmap.edge_segment]
    if collision_penalty is None:
        cost[blocked] = np.inf
    else:
        cost[blocked] += collision_penalty * speeds[blocked]
    path, total = search(roadmap, cost, start_state, allow_reverse, goal)
    if not np.isfinite(total):
        return None
    attempt = "reverse" if allow_reverse else "forward"
    if start_state[1] is None:
        attempt = "pivot"
    if collision_penalty is not None:
        attempt = "collide"
    return _make_plan(
        roadmap, path, speeds, profile.first_edge_speed, world.seed, attempt
    )


def plan_with_reverse_retry(
    world: SampledWorld,
    roadmap: Roadmap,
    start_state: tuple[int, int | None],
    profile: SpeedProfile = FIXED_PROFILE,
    *,
    seg_observed: np.ndarray | None = None,
    goal: int | None = None,
    collision_penalty: float | None = None,
) -> Plan | None:
    """Forward-only search first; on failure retry with reversing allowed.

    Two fallbacks follow for a boxed-in robot: freeing the start heading
    (turning in place), then, if ``collision_penalty`` is given, letting the
    plan drive through blocked edges at that penalty. ``Plan.attempt`` names
    the attempt that succeeded: forward, reverse, pivot or collide.
    """
    vertex, heading = start_state
    attempts = [(start_state, False, None), (start_state, True, None)]
    if heading is not None:
        attempts.append(((vertex, None), True, None))
    if collision_penalty is not None:
        attempts.append(((vertex, None), True, collision_penalty))
    for state, allow, penalty in attempts:
        plan = plan_astar(
            world,
            roadmap,
            state,
            profile,
            allow,
            seg_observed=seg_observed,
            goal=goal,
            collision_penalty=penalty,
        )
        if plan is not None:
            return plan
    return None


def oracle_plan(
    truth: WorldTruth,
    roadmap: Roadmap,
    start: int | None = None,
    goal: int | None = None,
    heading: int | None = None,
) -> Plan:
    """Full-information plan on true free edges, every edge at 10 m/s.

    Reversing is allowed at the same speed so the result lower-bounds the
    traversal time of any policy from the same start state.
    """
    start = roadmap.start if start is None else start
    goal = roadmap.goal if goal is None else goal
    if heading is None:
        heading = roadmap.heading_towards(start, goal)
    cost = np.where(
        truth.segment_free[roadmap.edge_segment],
        roadmap.edge_length / ORACLE_SPEED,
        np.inf,
    )
    path, total = search(roadmap, cost, (start, heading), True, goal)
    if not np.isfinite(total):
        raise UnreachableGoal("goal unreachable on the true world")
    speeds = np.full(roadmap.n_edges, ORACLE_SPEED)
    return _make_plan(roadmap, path, speeds, None, "oracle", "reverse")
