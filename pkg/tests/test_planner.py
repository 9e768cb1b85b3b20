import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dreams.errors import UnreachableGoal
from dreams.planner import (
    FIXED_PROFILE,
    Plan,
    SpeedProfile,
    edge_speeds,
    oracle_plan,
    plan_astar,
    plan_with_reverse_retry,
    segment_observed,
)
from dreams.sampling import SampledWorld, free_world
from dreams.world import OccupancyGrid, WorldTruth, build_roadmap
from oracles import state_graph_times


def world_from_blocked(rm, blocked_segments, seed=0):
    free = np.ones(rm.n_segments, bool)
    free[list(blocked_segments)] = False
    return SampledWorld(seed, free, rm.edge_segment)


def check_chain(rm, plan, start, goal):
    v = start
    for e in plan.edges:
        assert rm.edge_src[e] == v
        v = rm.edge_dst[e]
    assert v == goal


def segments_at(rm, vertex):
    return set(rm.edge_segment[rm.out_edges(vertex)].tolist())


class TestSpeedProfile:
    @pytest.mark.parametrize(
        "kw",
        [dict(observed_speed=0.5), dict(unobserved_speed=11), dict(first_edge_speed=12), dict(reverse_speed=2)],
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SpeedProfile(**kw)

    def test_base(self):
        assert SpeedProfile(first_edge_speed=3).base() == FIXED_PROFILE


class TestPlan:
    def test_alignment(self):
        with pytest.raises(ValueError):
            Plan((1, 2), (5.0,), (2.0, 2.0))
        with pytest.raises(ValueError):
            Plan((1,), (0.0,), (2.0,))

    def test_durations(self):
        p = Plan((0, 1), (5.0, 10.0), (2.0, 2.0), first_fraction=0.5)
        assert p.durations == (0.2, 0.2)
        assert p.traversal_time == pytest.approx(0.4)


class TestPlanAstar:
    def test_straight_corridor(self, lattice15):
        _, rm = lattice15
        rm = rm.with_endpoints(7 * 15, 7 * 15 + 14)
        plan = plan_astar(free_world(rm), rm, (rm.start, 0))
        assert len(plan) == 14
        assert set(rm.edge_facing[list(plan.edges)]) == {0}
        assert plan.traversal_time == pytest.approx(28 / 10)

    def test_observed_speed(self, lattice15):
        _, rm = lattice15
        rm = rm.with_endpoints(7 * 15, 7 * 15 + 14)
        obs = np.ones(rm.n_segments, bool)
        plan = plan_astar(free_world(rm), rm, (rm.start, 0), seg_observed=obs)
        assert plan.traversal_time == pytest.approx(28 / 5)

    def test_start_is_goal(self, lattice15):
        _, rm = lattice15
        plan = plan_astar(free_world(rm), rm, (rm.goal, 0))
        assert len(plan) == 0 and plan.traversal_time == 0

    @pytest.mark.parametrize("allow", [False, True])
    def test_walled_goal(self, lattice15, allow):
        _, rm = lattice15
        world = world_from_blocked(rm, segments_at(rm, rm.goal))
        assert plan_astar(world, rm, (rm.start, 1), allow_reverse=allow) is None
        assert plan_with_reverse_retry(world, rm, (rm.start, 1)) is None

    def test_first_edge_speed(self, lattice15):
        _, rm = lattice15
        rm = rm.with_endpoints(7 * 15, 7 * 15 + 14)
        plan = plan_astar(free_world(rm), rm, (rm.start, 0), SpeedProfile(first_edge_speed=1.0))
        assert plan.speeds[0] == 1.0 and set(plan.speeds[1:]) == {10.0}

    def test_admissible_lower_bound(self, lattice15):
        _, rm = lattice15
        rng = np.random.default_rng(3)
        for _ in range(20):
            world = world_from_blocked(rm, rng.choice(rm.n_segments, 60, replace=False))
            plan = plan_with_reverse_retry(world, rm, (rm.start, 1))
            if plan is None:
                continue
            d = np.hypot(*(rm.positions[rm.goal] - rm.positions[rm.start]))
            assert plan.traversal_time >= d / 10 - 1e-12

    def test_collision_penalty_passes_wall(self, lattice15):
        _, rm = lattice15
        world = world_from_blocked(rm, segments_at(rm, rm.goal))
        plan = plan_with_reverse_retry(world, rm, (rm.start, 1), collision_penalty=10.0)
        assert plan.attempt == "collide"
        check_chain(rm, plan, rm.start, rm.goal)


def random_case(rm, rng):
    n_blocked = int(rng.integers(0, rm.n_segments // 3))
    world = world_from_blocked(rm, rng.choice(rm.n_segments, n_blocked, replace=False))
    seg_obs = rng.random(rm.n_segments) < 0.5
    start, goal = (int(x) for x in rng.choice(rm.n_vertices, 2, replace=False))
    heading = int(rng.integers(0, 8))
    return world, seg_obs, start, goal, heading


def lattice_costs(rm, world, seg_obs):
    cost = rm.edge_length / edge_speeds(rm, FIXED_PROFILE, seg_obs)
    cost[~world.segment_free[rm.edge_segment]] = np.inf
    return cost


def test_optimal_against_dijkstra(lattice15):
    """200 random blocked-edge lattices: A* time equals the Dijkstra time."""
    _, rm = lattice15
    rng = np.random.default_rng(2024)
    found = 0
    for _ in range(200):
        world, seg_obs, start, goal, heading = random_case(rm, rng)
        cost = lattice_costs(rm, world, seg_obs)
        for allow in (False, True):
            ref = state_graph_times(rm, cost, start, heading, allow)[goal]
            plan = plan_astar(world, rm, (start, heading), allow_reverse=allow, seg_observed=seg_obs, goal=goal)
            if not math.isfinite(ref):
                assert plan is None
                continue
            found += 1
            check_chain(rm, plan, start, goal)
            # equal up to float summation order along equal-cost paths
            assert plan.traversal_time == pytest.approx(ref, rel=1e-12, abs=0)
    assert found > 100


def test_retry_prefers_forward(lattice15):
    _, rm = lattice15
    rng = np.random.default_rng(77)
    for _ in range(200):
        world, seg_obs, start, goal, heading = random_case(rm, rng)
        cost = lattice_costs(rm, world, seg_obs)
        fwd = state_graph_times(rm, cost, start, heading, False)[goal]
        plan = plan_with_reverse_retry(world, rm, (start, heading), seg_observed=seg_obs, goal=goal)
        if math.isfinite(fwd):
            assert plan.attempt == "forward"
            assert not plan.uses_reverse(rm)
        elif plan is not None:
            assert plan.attempt in ("reverse", "pivot")


def test_cul_de_sac_reverses():
    # a 2 m wide pocket open only to the west: the robot faces east at its end
    cells = np.zeros((70, 70), np.uint8)
    grid = OccupancyGrid(cells, 0.4)
    rm = build_roadmap(grid)
    v = 7 * 15 + 7
    east = [e for e in rm.out_edges(v) if not rm.edge_reverse[e] and rm.edge_facing[e] in (7, 0, 1)]
    world = world_from_blocked(rm, rm.edge_segment[east])
    rm = rm.with_endpoints(v, 0)
    assert plan_astar(world, rm, (v, 0)) is None
    plan = plan_with_reverse_retry(world, rm, (v, 0))
    assert plan.attempt == "reverse"
    assert rm.edge_reverse[plan.edges[0]]
    assert plan.speeds[0] == 1.0
    check_chain(rm, plan, v, 0)


class TestOracle:
    def test_straight_100m(self):
        grid = OccupancyGrid(np.zeros((250, 250), np.uint8), 0.4)
        rm = build_roadmap(grid)
        rm = rm.with_endpoints(25 * 51, 25 * 51 + 50)
        truth = WorldTruth(grid, np.ones(rm.n_segments, bool), np.ones(rm.n_edges, np.uint8))
        assert oracle_plan(truth, rm).traversal_time == pytest.approx(10.0)

    def test_start_goal(self, lattice15):
        grid, rm = lattice15
        truth = WorldTruth(grid, np.ones(rm.n_segments, bool), np.ones(rm.n_edges, np.uint8))
        assert oracle_plan(truth, rm, start=5, goal=5).traversal_time == 0.0

    def test_unreachable(self, lattice15):
        grid, rm = lattice15
        free = np.ones(rm.n_segments, bool)
        free[list(segments_at(rm, rm.goal))] = False
        truth = WorldTruth(grid, free, free[rm.edge_segment].astype(np.uint8))
        with pytest.raises(UnreachableGoal):
            oracle_plan(truth, rm)

    def test_lower_bounds_policies(self, forest_world):
        grid, rm, truth = forest_world
        world = SampledWorld(0, truth.segment_free, rm.edge_segment)
        best = oracle_plan(truth, rm).traversal_time
        plan = plan_with_reverse_retry(world, rm, (rm.start, rm.heading_towards(rm.start, rm.goal)))
        assert best <= plan.traversal_time + 1e-12


def test_segment_observed(lattice15):
    grid, rm = lattice15
    assert not segment_observed(rm, None).any()
    assert segment_observed(rm, np.ones(grid.cells.shape, bool)).all()
    mask = np.zeros(grid.cells.size, bool)
    mask[rm.footprint(0)] = True
    obs = segment_observed(rm, mask)
    assert obs[rm.edge_segment[0]]
    mask[rm.footprint(0)[0]] = False
    assert not segment_observed(rm, mask)[rm.edge_segment[0]]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31), st.integers(0, 7))
def test_plan_deterministic(lattice15, seed, heading):
    _, rm = lattice15
    rng = np.random.default_rng(seed)
    world = world_from_blocked(rm, rng.choice(rm.n_segments, 80, replace=False))
    a = plan_with_reverse_retry(world, rm, (rm.start, heading))
    b = plan_with_reverse_retry(world, rm, (rm.start, heading))
    assert a == b
