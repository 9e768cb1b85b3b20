import numpy as np
import pytest

from dreams.world import OccupancyGrid, build_roadmap, generate_world, truth_edge_status


def small_grid(n_vertices=15, spacing=2.0, resolution=0.4, occupied=0):
    """Square grid whose lattice has ``n_vertices`` per side."""
    side_px = int(round((n_vertices - 1) * spacing / resolution))
    cells = np.full((side_px, side_px), occupied, dtype=np.uint8)
    return OccupancyGrid(cells, resolution)


@pytest.fixture(scope="session")
def lattice15():
    grid = small_grid(15)
    return grid, build_roadmap(grid, 2.0)


@pytest.fixture(scope="session")
def forest_world():
    grid = generate_world("forest", rng_seed=3)
    roadmap = build_roadmap(grid)
    return grid, roadmap, truth_edge_status(grid, roadmap)


@pytest.fixture(scope="session")
def desert_world():
    grid = generate_world("desert", rng_seed=5)
    roadmap = build_roadmap(grid)
    return grid, roadmap, truth_edge_status(grid, roadmap)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
