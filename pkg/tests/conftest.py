import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from astar_irl.gridworld import GridMap, generate_map

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_free_pair(grid: GridMap, rng):
    free = grid.free_states()
    i, j = rng.choice(len(free), size=2, replace=False)
    return free[i], free[j]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_map():
    return GridMap.from_strings([
        "........",
        "..##....",
        "..#.....",
        "....##..",
        "........",
        ".#...#..",
        ".#......",
        "........",
    ])


@pytest.fixture
def random_map():
    return generate_map(7, 12, 10, 0.2)
