"""Closed-loop episodes: observe, update, replan, execute, account costs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .planner import oracle_plan
from .policies import CostBreakdown, EvalParams, StepTimer, get_policy
from .sensing import (
    DEFAULT_EXTENT,
    DEFAULT_PRIOR,
    NoiseModel,
    PosteriorGrid,
    bayes_update,
    reveal_traversed,
    sense,
)
from .world import Roadmap, WorldTruth

ORACLE = "oracle"
OBSERVATION_PERIOD = 1.0


@dataclass
class PartialEdge:
    edge: int
    fraction_done: float
    max_speed: float


@dataclass
class RobotState:
    vertex: int
    heading: int
    observed: np.ndarray
    sim_time: float = 0.0
    partial: PartialEdge | None = None


@dataclass
class StepRecord:
    step: int
    edge: int
    src: int
    dst: int
    reverse: bool
    speed: float
    duration: float
    fraction: float
    completed: bool
    collision: bool
    penalty: float
    sim_time: float
    n_observations: int
    plan: tuple[int, ...] = ()


@dataclass
class EpisodeLog:
    algorithm: str
    seed: int
    alpha: float
    eta: float
    records: list[StepRecord]
    n_observations: int
    traversal_time: float
    collision_cost: float
    collisions: int
    steps: int
    status: str
    oracle_time: float
    proposer_seconds: float = field(default=0.0, compare=False)
    acceptor_seconds: float = field(default=0.0, compare=False)

    @property
    def cost(self) -> CostBreakdown:
        return CostBreakdown(self.traversal_time, self.collision_cost)

    @property
    def total(self) -> float:
        return self.traversal_time + self.collision_cost

    @property
    def plans(self) -> list[tuple[int, ...]]:
        return [r.plan for r in self.records]

    @property
    def suboptimality(self) -> float:
        return suboptimality(self, self.oracle_time)

    def summary(self, include_timing: bool = False) -> dict:
        out = {
            "type": "summary",
            "algorithm": self.algorithm,
            "seed": self.seed,
            "alpha": self.alpha,
            "eta": self.eta,
            "status": self.status,
            "steps": self.steps,
            "collisions": self.collisions,
            "n_observations": self.n_observations,
            "traversal_time": self.traversal_time,
            "collision_cost": self.collision_cost,
            "total": self.total,
            "oracle_time": self.oracle_time,
            "suboptimality": self.suboptimality,
        }
        if include_timing:
            out["proposer_seconds"] = self.proposer_seconds
            out["acceptor_seconds"] = self.acceptor_seconds
        return out

    def to_jsonl(self, include_timing: bool = False) -> str:
        lines = []
        for r in self.records:
            rec = {"type": "step", **asdict(r)}
            rec["plan"] = list(r.plan)
            lines.append(json.dumps(rec, sort_keys=True))
        lines.append(json.dumps(self.summary(include_timing), sort_keys=True))
        return "\n".join(lines) + "\n"

    def write_jsonl(self, path, include_timing: bool = False) -> Path:
        path = Path(path)
        path.write_text(self.to_jsonl(include_timing))
        return path


def suboptimality(log: EpisodeLog, oracle_time: float) -> float:
    """Episode cost J = T + C divided by the oracle's traversal time."""
    if oracle_time <= 0:
        raise ZeroDivisionError("oracle time is zero (start equals goal)")
    return (log.traversal_time + log.collision_cost) / oracle_time


def run_episode(
    truth: WorldTruth,
    roadmap: Roadmap,
    algorithm: str,
    noise: NoiseModel,
    params: EvalParams,
    seed: int,
    *,
    prior: float = DEFAULT_PRIOR,
    extent: float = DEFAULT_EXTENT,
    max_steps: int | None = None,
) -> EpisodeLog:
    """Run one episode from ``roadmap.start`` to ``roadmap.goal``.

    Sensing happens every simulated second (including t = 0) at the robot's
    interpolated position. Fixed-speed policies execute one edge per call;
    per-second policies execute at most one second of motion and stay
    committed to an edge until its end. A blocked edge is driven through and
    charges ``alpha * speed`` once, with speed the highest commanded on that
    edge. Each completed edge reveals its footprint. ``max_steps`` defaults
    to ten policy calls per vertex; hitting it ends the episode as
    ``"timeout"``.
    """
    grid = truth.grid
    start, goal = roadmap.start, roadmap.goal
    heading0 = roadmap.heading_towards(start, goal)
    oracle_time = oracle_plan(truth, roadmap, heading=heading0).traversal_time

    is_oracle = algorithm == ORACLE
    spec = None if is_oracle else get_policy(algorithm)
    per_second = bool(spec and spec.per_second)

    sense_ss, policy_ss = np.random.SeedSequence(int(seed)).spawn(2)
    sense_rng = np.random.default_rng(sense_ss)
    policy_rng = np.random.default_rng(policy_ss)

    posterior = PosteriorGrid.prior(grid, prior)
    state = RobotState(start, heading0, np.zeros(grid.cells.shape, dtype=bool))
    observed_flat = state.observed.reshape(-1)
    positions = roadmap.positions

    n_obs = 0
    next_obs = 0.0

    def observe_until(t_end, pos_at):
        nonlocal posterior, n_obs, next_obs
        while next_obs <= t_end:
            obs = sense(grid, pos_at(next_obs), noise, sense_rng, extent)
            posterior = bayes_update(posterior, obs)
            observed_flat[obs.pixels] = True
            n_obs += 1
            next_obs += OBSERVATION_PERIOD

    observe_until(0.0, lambda t: positions[start])

    timer = StepTimer()
    records: list[StepRecord] = []
    T = 0.0
    C = 0.0
    collisions = 0
    cap = 10 * roadmap.n_vertices if max_steps is None else max_steps
    status = "timeout"
    for step in range(cap):
        if state.partial is None and state.vertex == goal:
            status = "success"
            break
        if is_oracle:
            plan = oracle_plan(truth, roadmap, state.vertex, goal, state.heading)
            speed = plan.speeds[0]
        else:
            plan, speed = spec.step(posterior, roadmap, state, params, policy_rng, timer)
        e = plan.edges[0]
        speed = plan.speeds[0]
        length = float(roadmap.edge_length[e])
        partial = state.partial
        if partial is not None and partial.edge != e:
            raise RuntimeError("policy abandoned the committed edge")
        done0 = partial.fraction_done if partial is not None else 0.0
        remaining = 1.0 - done0
        full_time = remaining * length / speed
        dt = min(OBSERVATION_PERIOD, full_time) if per_second else full_time
        completed = dt == full_time
        frac = remaining if completed else dt * speed / length

        t0 = state.sim_time
        t1 = t0 + dt
        p0 = positions[roadmap.edge_src[e]]
        p1 = positions[roadmap.edge_dst[e]]
        observe_until(
            t1, lambda t: p0 + min(done0 + (t - t0) * speed / length, 1.0) * (p1 - p0)
        )
        state.sim_time = t1
        T += dt

        max_speed = max(partial.max_speed if partial is not None else 0.0, speed)
        collision = False
        penalty = 0.0
        if completed:
            if not truth.segment_free[roadmap.edge_segment[e]]:
                collision = True
                penalty = params.alpha * max_speed
                C += penalty
                collisions += 1
            posterior = reveal_traversed(posterior, grid, e, roadmap)
            observed_flat[roadmap.footprint(e)] = True
            state.vertex = int(roadmap.edge_dst[e])
            state.heading = int(roadmap.edge_facing[e])
            state.partial = None
        else:
            state.partial = PartialEdge(e, done0 + frac, max_speed)

        records.append(
            StepRecord(
                step=step,
                edge=int(e),
                src=int(roadmap.edge_src[e]),
                dst=int(roadmap.edge_dst[e]),
                reverse=bool(roadmap.edge_reverse[e]),
                speed=float(speed),
                duration=float(dt),
                fraction=float(frac),
                completed=completed,
                collision=collision,
                penalty=float(penalty),
                sim_time=float(t1),
                n_observations=n_obs,
                plan=plan.edges,
            )
        )
    else:
        if state.partial is None and state.vertex == goal:
            status = "success"

    return EpisodeLog(
        algorithm=algorithm,
        seed=int(seed),
        alpha=float(params.alpha),
        eta=float(noise.eta),
        records=records,
        n_observations=n_obs,
        traversal_time=T,
        collision_cost=C,
        collisions=collisions,
        steps=len(records),
        status=status,
        oracle_time=oracle_time,
        proposer_seconds=timer.proposer_seconds,
        acceptor_seconds=timer.acceptor_seconds,
    )
