"""Proposer/acceptor replanning policies.

Every policy proposes one or more plans from the current belief and accepts
one of them; the simulator executes the start of the accepted plan and calls
the policy again.

* DREAMS plans on many sampled worlds, scores each plan (and, for the
  adaptive variant, each first-edge speed) against a fresh batch of sampled
  worlds, aggregates the costs with the inverse CVaR and keeps the minimum.
* DRPS plans on a single sampled world.
* Sampled A* keeps the proposal with the highest mean edge centrality.
* Direct runs one search on expected costs under the edge posterior.
"""

from __future__ import annotations

import math
import time
from contextlib import contextmanager
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .errors import NoPlanFound
from .planner import (
    ADAPTIVE_PROFILES,
    FIXED_PROFILE,
    Plan,
    SpeedProfile,
    edge_speeds,
    plan_with_reverse_retry,
    search,
    segment_observed,
)
from .sampling import (
    EdgePosterior,
    SampledWorld,
    blocked_matrix,
    edge_posterior,
    sample_world,
)
from .sensing import PosteriorGrid
from .world import Roadmap

DRPS_MAX_RESAMPLES = 20
EVAL_CHUNK = 2048
_SEED_SPAN = 2**62


@dataclass(frozen=True)
class EvalParams:
    alpha: float = 10.0
    cvar_fraction: float = 0.75
    n_eval_worlds: int = 10_000
    n_plans: int = 100

    def __post_init__(self):
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if not 0 < self.cvar_fraction <= 1:
            raise ValueError("cvar_fraction must lie in (0, 1]")
        if self.n_eval_worlds < 1 or self.n_plans < 1:
            raise ValueError("sample counts must be >= 1")


@dataclass(frozen=True)
class CostBreakdown:
    traversal_time: float
    collision_cost: float

    def __post_init__(self):
        if self.traversal_time < 0 or self.collision_cost < 0:
            raise ValueError("costs must be non-negative")

    @property
    def total(self) -> float:
        return self.traversal_time + self.collision_cost


@dataclass
class StepTimer:
    """Accumulates wall-clock seconds spent proposing and accepting."""

    proposer_seconds: float = 0.0
    acceptor_seconds: float = 0.0

    @contextmanager
    def proposer(self):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.proposer_seconds += time.perf_counter() - t0

    @contextmanager
    def acceptor(self):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.acceptor_seconds += time.perf_counter() - t0


# --- evaluation and aggregation ----------------------------------------------


def evaluate_plan(plan: Plan, world: SampledWorld, params: EvalParams) -> float:
    """Traversal time plus collision penalties on one sampled world.

    A blocked edge costs its speed (seconds per m/s); the first edge is
    weighted by ``alpha`` and later edges by 1.
    """
    if not plan.edges:
        return 0.0
    free = world.segment_free[world.edge_segment[list(plan.edges)]]
    collision = 0.0
    for i, (ok, speed) in enumerate(zip(free, plan.speeds)):
        if not ok:
            collision += speed * (params.alpha if i == 0 else 1.0)
    return plan.traversal_time + collision


def inverse_cvar(costs, fraction: float = 0.75) -> float:
    """Mean of the lowest ``ceil(fraction * n)`` costs."""
    costs = np.asarray(costs, dtype=float).ravel()
    if costs.size == 0:
        raise ValueError("inverse_cvar of an empty cost list")
    if not 0 < fraction <= 1:
        raise ValueError("fraction must lie in (0, 1]")
    k = max(1, math.ceil(fraction * costs.size - 1e-9))
    return float(np.sort(costs)[:k].mean())


# --- shared proposer machinery ----------------------------------------------


def _draw_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(0, _SEED_SPAN))


def _planning_start(roadmap: Roadmap, state):
    """Search start and optional committed partial edge ``(edge, remaining)``."""
    partial = getattr(state, "partial", None)
    if partial is None:
        return (state.vertex, state.heading), None
    edge, done = partial.edge, partial.fraction_done
    start = (int(roadmap.edge_dst[edge]), int(roadmap.edge_facing[edge]))
    return start, (int(edge), 1.0 - done)


def _with_prefix(plan: Plan, roadmap: Roadmap, prefix, speeds) -> Plan:
    if prefix is None:
        return plan
    edge, remaining = prefix
    return replace(
        plan,
        edges=(edge,) + plan.edges,
        speeds=(float(speeds[edge]),) + plan.speeds,
        lengths=(float(roadmap.edge_length[edge]),) + plan.lengths,
        first_fraction=remaining,
    )


def _require_vertex(state):
    if getattr(state, "partial", None) is not None:
        raise ValueError("this policy only replans at vertices")


def propose(
    ep: EdgePosterior,
    roadmap: Roadmap,
    state,
    profile: SpeedProfile,
    n: int,
    base_seed: int,
    seg_obs: np.ndarray,
    collision_penalty: float | None = None,
) -> list[tuple[int, Plan]]:
    """Plan on ``n`` sampled worlds (seeds ``base_seed + i``), skipping dead ends."""
    start, prefix = _planning_start(roadmap, state)
    seeds = base_seed + np.arange(n)
    blocked = blocked_matrix(ep, seeds)
    speeds = edge_speeds(roadmap, profile, seg_obs)
    out = []
    for i, (seed, row) in enumerate(zip(seeds, blocked)):
        world = SampledWorld(int(seed), ~row, roadmap.edge_segment)
        plan = plan_with_reverse_retry(
            world,
            roadmap,
            start,
            profile,
            seg_observed=seg_obs,
            collision_penalty=collision_penalty,
        )
        if plan is not None:
            out.append((i, _with_prefix(plan, roadmap, prefix, speeds)))
    return out


def _propose_or_collide(ep, roadmap, state, profile, params, base_seed, seg_obs):
    """Proposals on free edges; if no sample has one, allow driving through obstacles."""
    args = (ep, roadmap, state, profile, params.n_plans, base_seed, seg_obs)
    proposals = propose(*args)
    if not proposals:
        proposals = propose(*args, collision_penalty=params.alpha)
    if not proposals:
        raise NoPlanFound("every sampled world left the goal unreachable")
    return proposals


def candidate_speeds(plan: Plan, roadmap: Roadmap, profiles: Sequence[SpeedProfile]):
    """Sorted distinct first-edge speeds the profiles induce for ``plan``."""
    if not plan.edges:
        return [None]
    speeds = set()
    for prof in profiles:
        if prof.first_edge_speed is None or roadmap.edge_reverse[plan.edges[0]]:
            speeds.add(plan.speeds[0])
        else:
            speeds.add(float(prof.first_edge_speed))
    return sorted(speeds)


def evaluate_candidates(
    plans: Sequence[Plan],
    first_speeds: Sequence[Sequence[float | None]],
    ep: EdgePosterior,
    roadmap: Roadmap,
    eval_seeds: np.ndarray,
    alpha: float,
) -> list[np.ndarray]:
    """Cost of every (plan, first-edge speed) candidate on every eval world.

    Only the segments the plans touch are drawn. Returns one
    ``(n_candidates_for_plan, n_worlds)`` array per plan.
    """
    segs_per_plan = [roadmap.edge_segment[list(p.edges)] for p in plans]
    union = np.unique(np.concatenate([s for s in segs_per_plan if s.size] or [[0]]))
    col = {int(s): k for k, s in enumerate(union)}

    rest_weight = np.zeros((union.size, len(plans)))
    rest_time = np.zeros(len(plans))
    for i, (plan, segs) in enumerate(zip(plans, segs_per_plan)):
        durations = plan.durations
        for s, speed, d in zip(segs[1:], plan.speeds[1:], durations[1:]):
            rest_weight[col[int(s)], i] += speed
            rest_time[i] += d

    out = [np.empty((len(fs), eval_seeds.size)) for fs in first_speeds]
    for lo in range(0, eval_seeds.size, EVAL_CHUNK):
        chunk = eval_seeds[lo : lo + EVAL_CHUNK]
        blocked = blocked_matrix(ep, chunk, union).astype(np.float64)
        rest_collision = blocked @ rest_weight
        for i, (plan, segs) in enumerate(zip(plans, segs_per_plan)):
            if not plan.edges:
                out[i][:, lo : lo + chunk.size] = 0.0
                continue
            b0 = blocked[:, col[int(segs[0])]]
            length0 = plan.first_fraction * plan.lengths[0]
            for k, s in enumerate(first_speeds[i]):
                t = length0 / s + rest_time[i]
                out[i][k, lo : lo + chunk.size] = t + (b0 * (alpha * s) + rest_collision[:, i])
    return out


def select_candidate(first_speeds, costs, fraction: float = 0.75):
    """``(plan index, speed)`` with the lowest inverse CVaR; the first wins ties."""
    best = None
    for i, (fs, cost) in enumerate(zip(first_speeds, costs)):
        for s, row in zip(fs, cost):
            agg = inverse_cvar(row, fraction)
            if best is None or agg < best[0]:
                best = (agg, i, s)
    if best is None:
        raise ValueError("no candidates")
    return best[1], best[2]


def expected_cost(plan: Plan, edge_probs: np.ndarray, alpha: float) -> float:
    """Traversal time plus ``P(blocked) * speed * tau`` summed over the plan."""
    total = plan.traversal_time
    for i, (e, speed) in enumerate(zip(plan.edges, plan.speeds)):
        total += edge_probs[e] * speed * (alpha if i == 0 else 1.0)
    return total


# --- policies ----------------------------------------------------------------


def dreams_step(
    posterior: PosteriorGrid,
    roadmap: Roadmap,
    state,
    params: EvalParams,
    speed_candidates: Sequence[SpeedProfile],
    rng: np.random.Generator,
    timer: StepTimer | None = None,
) -> tuple[Plan, float]:
    """Sample & plan, evaluate on fresh worlds, aggregate, select.

    Candidates are ordered by plan index then first-edge speed; ties keep the
    earliest. Returns the accepted plan (re-timed) and its first-edge speed.
    """
    if not speed_candidates:
        raise ValueError("speed_candidates must be non-empty")
    timer = timer or StepTimer()
    with timer.proposer():
        ep = edge_posterior(posterior, roadmap)
        seg_obs = segment_observed(roadmap, state.observed)
        base_seed = _draw_seed(rng)
        proposals = _propose_or_collide(
            ep,
            roadmap,
            state,
            speed_candidates[0].base(),
            params,
            base_seed,
            seg_obs,
        )

    with timer.acceptor():
        plans = [p for _, p in proposals]
        speeds = [candidate_speeds(p, roadmap, speed_candidates) for p in plans]
        if len(plans) == 1 and len(speeds[0]) == 1:
            plan = plans[0]
            s = speeds[0][0]
            return plan, (s if s is not None else 0.0)
        eval_seeds = base_seed + params.n_plans + np.arange(params.n_eval_worlds)
        costs = evaluate_candidates(plans, speeds, ep, roadmap, eval_seeds, params.alpha)
        i, s = select_candidate(speeds, costs, params.cvar_fraction)
        plan = plans[i]
        if s is None:
            return plan, 0.0
        return plan.with_first_speed(s), s


def drps_step(
    posterior: PosteriorGrid,
    roadmap: Roadmap,
    state,
    profile: SpeedProfile,
    rng: np.random.Generator,
    timer: StepTimer | None = None,
    collision_penalty: float | None = None,
) -> Plan:
    """Plan on one posterior sample and accept it.

    A sample with no path to the goal is redrawn (seeds ``base + k``), up to
    ``DRPS_MAX_RESAMPLES`` times; after that the first sample is planned with
    blocked edges priced at ``collision_penalty`` if one is given.
    """
    _require_vertex(state)
    timer = timer or StepTimer()
    with timer.proposer():
        ep = edge_posterior(posterior, roadmap)
        seg_obs = segment_observed(roadmap, state.observed)
        base_seed = _draw_seed(rng)
        for k in range(DRPS_MAX_RESAMPLES):
            world = sample_world(ep, base_seed + k)
            plan = plan_with_reverse_retry(
                world, roadmap, (state.vertex, state.heading), profile, seg_observed=seg_obs
            )
            if plan is not None:
                break
        else:
            plan = None
            if collision_penalty is not None:
                plan = plan_with_reverse_retry(
                    sample_world(ep, base_seed),
                    roadmap,
                    (state.vertex, state.heading),
                    profile,
                    seg_observed=seg_obs,
                    collision_penalty=collision_penalty,
                )
            if plan is None:
                raise NoPlanFound("no sampled world admitted a plan")
    with timer.acceptor():
        return plan


def centrality_scores(plans: Sequence[Plan]) -> np.ndarray:
    """Mean over each plan's edges of the fraction of plans containing that edge."""
    counts: dict[int, int] = {}
    for p in plans:
        for e in set(p.edges):
            counts[e] = counts.get(e, 0) + 1
    n = len(plans)
    return np.array(
        [np.mean([counts[e] / n for e in p.edges]) if p.edges else 0.0 for p in plans]
    )


def sampled_astar_step(
    posterior: PosteriorGrid,
    roadmap: Roadmap,
    state,
    profile: SpeedProfile,
    params: EvalParams,
    rng: np.random.Generator,
    timer: StepTimer | None = None,
) -> Plan:
    """Accept the proposal with maximum mean edge centrality (first on ties)."""
    _require_vertex(state)
    timer = timer or StepTimer()
    with timer.proposer():
        ep = edge_posterior(posterior, roadmap)
        seg_obs = segment_observed(roadmap, state.observed)
        proposals = _propose_or_collide(
            ep, roadmap, state, profile, params, _draw_seed(rng), seg_obs
        )
    with timer.acceptor():
        plans = [p for _, p in proposals]
        return plans[int(np.argmax(centrality_scores(plans)))]


def direct_step(
    edge_post: EdgePosterior,
    roadmap: Roadmap,
    state,
    profile: SpeedProfile,
    params: EvalParams,
    timer: StepTimer | None = None,
) -> Plan:
    """One search on expected cost ``w + P(blocked) * speed * tau``.

    ``tau`` is ``alpha`` on edges leaving the current vertex and 1 elsewhere.
    """
    _require_vertex(state)
    timer = timer or StepTimer()
    with timer.proposer():
        seg_obs = segment_observed(roadmap, state.observed)
        speeds = edge_speeds(roadmap, profile, seg_obs)
        tau = np.ones(roadmap.n_edges)
        tau[roadmap.out_edges(state.vertex)] = params.alpha
        cost = roadmap.edge_length / speeds + edge_post.edge_probs * speeds * tau
        attempts = (
            ("forward", state.heading, False),
            ("reverse", state.heading, True),
            ("pivot", None, True),
        )
        for attempt, heading, allow in attempts:
            path, total = search(roadmap, cost, (state.vertex, heading), allow)
            if np.isfinite(total):
                break
        else:
            raise NoPlanFound("goal unreachable on the roadmap")
        edges = tuple(int(e) for e in path)
        plan = Plan(
            edges,
            tuple(float(speeds[e]) for e in edges),
            tuple(float(roadmap.edge_length[e]) for e in edges),
            source="direct",
            attempt=attempt,
        )
    with timer.acceptor():
        return plan


# --- registry ----------------------------------------------------------------

Policy = Callable[..., tuple[Plan, float]]


@dataclass(frozen=True)
class PolicySpec:
    name: str
    step: Policy
    per_second: bool = False  # executes one second of motion per call


def _dreams_fixed(posterior, roadmap, state, params, rng, timer):
    return dreams_step(posterior, roadmap, state, params, [FIXED_PROFILE], rng, timer)


def _dreams_adaptive(posterior, roadmap, state, params, rng, timer):
    return dreams_step(posterior, roadmap, state, params, ADAPTIVE_PROFILES, rng, timer)


def _drps(posterior, roadmap, state, params, rng, timer):
    plan = drps_step(
        posterior, roadmap, state, FIXED_PROFILE, rng, timer, collision_penalty=params.alpha
    )
    return plan, plan.speeds[0]


def _sampled_astar(posterior, roadmap, state, params, rng, timer):
    plan = sampled_astar_step(posterior, roadmap, state, FIXED_PROFILE, params, rng, timer)
    return plan, plan.speeds[0]


def _direct(posterior, roadmap, state, params, rng, timer):
    with timer.proposer():
        ep = edge_posterior(posterior, roadmap)
    plan = direct_step(ep, roadmap, state, FIXED_PROFILE, params, timer)
    return plan, plan.speeds[0]


POLICIES = {
    "dreams-fixed": PolicySpec("dreams-fixed", _dreams_fixed),
    "dreams-adaptive": PolicySpec("dreams-adaptive", _dreams_adaptive, per_second=True),
    "drps": PolicySpec("drps", _drps),
    "sampled-astar": PolicySpec("sampled-astar", _sampled_astar),
    "direct": PolicySpec("direct", _direct),
}
ALGORITHMS = tuple(POLICIES)


def get_policy(name: str) -> PolicySpec:
    try:
        return POLICIES[name]
    except KeyError:
        raise ValueError(f"unknown algorithm {name!r}; choose from {ALGORITHMS}") from None
