"""Ground-truth grid environments, 8-connected dynamics and the shortest-path expert.

Cells are labelled -1 (free) or +1 (occupied) and stored row-major in an
``(height, width)`` int8 array. States are ``(x, y)`` = (column, row); the
flat index of a state is ``y * width + x``. North points toward row 0.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, NamedTuple

import numpy as np

FREE = -1
OCCUPIED = 1


class Control(IntEnum):
    N = 0
    NE = 1
    E = 2
    SE = 3
    S = 4
    SW = 5
    W = 6
    NW = 7


# (dx, dy) per control, indexed by Control value.
DELTAS = np.array(
    [(0, -1), (1, -1), (1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1)],
    dtype=np.int64,
)
N_CONTROLS = len(Control)


def reverse(u: Control) -> Control:
    return Control((int(u) + 4) % N_CONTROLS)


class State(NamedTuple):
    x: int
    y: int


@dataclass(frozen=True)
class GridMap:
    """True occupancy labels over a 2-D lattice."""

    cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.cells)
        if cells.ndim != 2:
            raise ValueError("cells must be a 2-D array")
        if cells.shape[0] < 2 or cells.shape[1] < 2:
            raise ValueError(f"map must be at least 2x2, got {cells.shape[1]}x{cells.shape[0]}")
        if not np.all((cells == FREE) | (cells == OCCUPIED)):
            raise ValueError("every label must be -1 (free) or +1 (occupied)")
        cells = cells.astype(np.int8, copy=True)
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def in_bounds(self, s) -> bool:
        return 0 <= s[0] < self.width and 0 <= s[1] < self.height

    def is_free(self, s) -> bool:
        return self.in_bounds(s) and self.cells[s[1], s[0]] == FREE

    def index(self, s) -> int:
        return int(s[1]) * self.width + int(s[0])

    def state(self, idx: int) -> State:
        return State(int(idx) % self.width, int(idx) // self.width)

    def free_states(self) -> list[State]:
        ys, xs = np.nonzero(self.cells == FREE)
        return [State(int(x), int(y)) for y, x in zip(ys, xs)]

    @classmethod
    def empty(cls, width: int, height: int) -> "GridMap":
        return cls(np.full((height, width), FREE, dtype=np.int8))

    @classmethod
    def from_strings(cls, rows: Iterable[str]) -> "GridMap":
        rows = [r for r in rows]
        return cls(np.array([[OCCUPIED if ch == "#" else FREE for ch in r] for r in rows], dtype=np.int8))

    def to_strings(self) -> list[str]:
        return ["".join("#" if v == OCCUPIED else "." for v in row) for row in self.cells]


def step(grid: GridMap, s, u) -> State | None:
    """Apply control ``u`` at ``s``; ``None`` when the move leaves the map.

    Occupancy is deliberately not checked: collisions are outcomes, not
    dynamics restrictions.
    """
    dx, dy = DELTAS[int(u)]
    nx, ny = int(s[0]) + int(dx), int(s[1]) + int(dy)
    if 0 <= nx < grid.width and 0 <= ny < grid.height:
        return State(nx, ny)
    return None


def generate_map(seed: int, width: int, height: int, obstacle_density: float) -> GridMap:
    """Each cell is independently occupied with probability ``obstacle_density``."""
    if width <= 0 or height <= 0:
        raise ValueError("zero-area map")
    if not 0.0 <= obstacle_density <= 1.0:
        raise ValueError(f"obstacle_density must lie in [0, 1], got {obstacle_density}")
    rng = np.random.default_rng(seed)
    occupied = rng.random((height, width)) < obstacle_density
    return GridMap(np.where(occupied, OCCUPIED, FREE).astype(np.int8))


def oracle_cost_to_go(grid: GridMap, goal) -> np.ndarray:
    """Minimum number of 8-connected moves to ``goal`` through free cells.

    Returns a ``(height, width)`` float array; occupied and unreachable
    cells hold ``inf``.
    """
    if not grid.is_free(goal):
        raise ValueError(f"goal {tuple(goal)} is not a free in-bounds cell")
    H, W = grid.shape
    dist = np.full((H, W), np.inf)
    dist[goal[1], goal[0]] = 0.0
    free = grid.cells == FREE
    queue = deque([(int(goal[0]), int(goal[1]))])
    while queue:
        x, y = queue.popleft()
        d = dist[y, x] + 1.0
        # moves are symmetric, so predecessors are the 8 neighbours
        for dx, dy in DELTAS:
            nx, ny = x + dx, y + dy
            if 0 <= nx < W and 0 <= ny < H and free[ny, nx] and dist[ny, nx] == np.inf:
                dist[ny, nx] = d
                queue.append((nx, ny))
    return dist


def greedy_controls(grid: GridMap, start, goal, field: np.ndarray | None = None) -> tuple[list[State], list[Control]]:
    """Descend the oracle field; ties resolve in ``Control`` order."""
    if field is None:
        field = oracle_cost_to_go(grid, goal)
    if not grid.is_free(start) or not np.isfinite(field[start[1], start[0]]):
        raise ValueError(f"start {tuple(start)} is not connected to goal {tuple(goal)}")
    states = [State(int(start[0]), int(start[1]))]
    controls: list[Control] = []
    s = states[0]
    while field[s.y, s.x] > 0:
        here = field[s.y, s.x]
        for u in Control:
            nxt = step(grid, s, u)
            if nxt is not None and field[nxt.y, nxt.x] == here - 1:
                break
        else:  # pragma: no cover - a finite field always has a descent move
            raise RuntimeError("oracle field has no descent direction")
        controls.append(u)
        s = nxt
        states.append(s)
    return states, controls


@dataclass
class Demonstration:
    """One expert episode. ``scans[k]`` was recorded at ``states[k]``."""

    states: list[State]
    controls: list[Control]
    scans: list[np.ndarray]
    goal: State
    width: int
    height: int
    map_id: int = -1
    max_range: float = 2.5
    start: State = field(init=False)

    def __post_init__(self):
        self.states = [State(int(s[0]), int(s[1])) for s in self.states]
        self.controls = [Control(int(u)) if not isinstance(u, str) else Control[u] for u in self.controls]
        self.scans = [np.asarray(z, dtype=float) for z in self.scans]
        self.goal = State(int(self.goal[0]), int(self.goal[1]))
        self.start = self.states[0]
        if len(self.controls) != len(self.states) - 1:
            raise ValueError("need exactly one control per state except the last")
        if len(self.scans) != len(self.states):
            raise ValueError("need one scan per state")
        if self.states[-1] != self.goal:
            raise ValueError("last state must equal the goal")

    def __len__(self):
        return len(self.controls)

    def to_json(self) -> dict:
        return {
            "map_id": self.map_id,
            "width": self.width,
            "height": self.height,
            "start": list(self.start),
            "goal": list(self.goal),
            "states": [list(s) for s in self.states],
            "controls": [u.name for u in self.controls],
            "max_range": self.max_range,
            "scans": [[float(r) for r in z] for z in self.scans],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Demonstration":
        demo = cls(
            states=obj["states"],
            controls=obj["controls"],
            scans=obj["scans"],
            goal=obj["goal"],
            width=int(obj["width"]),
            height=int(obj["height"]),
            map_id=int(obj.get("map_id", -1)),
            max_range=float(obj.get("max_range", 2.5)),
        )
        if "start" in obj and State(*obj["start"]) != demo.start:
            raise ValueError("start does not match the first state")
        return demo


def generate_demo(grid: GridMap, start, goal, sensor_cfg=None, seed: int = 0, map_id: int = -1) -> Demonstration:
    """Expert demonstration: greedy descent of the oracle field with a lidar scan per state."""
    from .sensor import SensorConfig, observe

    cfg = sensor_cfg if sensor_cfg is not None else SensorConfig()
    states, controls = greedy_controls(grid, start, goal)
    seeds = np.random.SeedSequence(seed).generate_state(len(states))
    scans = [observe(grid, s, cfg, int(sd)).ranges for s, sd in zip(states, seeds)]
    return Demonstration(states, controls, scans, State(*goal), grid.width, grid.height, map_id, cfg.max_range)


def sample_task(grid: GridMap, rng: np.random.Generator, min_dist: int = 4, max_tries: int = 200):
    """Uniform (start, goal) over free cells with oracle distance >= ``min_dist``.

    Returns ``None`` when no admissible pair was found.
    """
    free = grid.free_states()
    if len(free) < 2:
        return None
    for _ in range(max_tries):
        i, j = rng.choice(len(free), size=2, replace=False)
        start, goal = free[i], free[j]
        d = oracle_cost_to_go(grid, goal)[start.y, start.x]
        if np.isfinite(d) and d >= min_dist:
            return start, goal
    return None


@dataclass
class DatasetConfig:
    n_maps: int = 10
    trajs_per_map: int = 10
    width: int = 16
    height: int = 16
    obstacle_density: float = 0.2
    min_dist: int = 4
    seed: int = 0


def generate_dataset(cfg: DatasetConfig, sensor_cfg=None, with_demos: bool = True):
    """Maps and demonstrations with per-map derived seeds.

    Maps that admit no valid task are regenerated from the next derived
    seed, so the output depends only on ``cfg`` and ``sensor_cfg``.
    """
    if cfg.obstacle_density >= 1.0:
        raise ValueError("obstacle_density 1.0 leaves no free start/goal")
    if cfg.n_maps < 0 or cfg.trajs_per_map < 0:
        raise ValueError("counts must be non-negative")
    maps: list[GridMap] = []
    demos: list[Demonstration] = []
    for map_id in range(cfg.n_maps):
        for attempt in range(100):
            seq = np.random.SeedSequence(cfg.seed, spawn_key=(map_id, attempt))
            map_seed, task_seed = seq.generate_state(2)
            grid = generate_map(int(map_seed), cfg.width, cfg.height, cfg.obstacle_density)
            rng = np.random.default_rng(int(task_seed))
            tasks = []
            for _ in range(cfg.trajs_per_map if with_demos else 1):
                t = sample_task(grid, rng, cfg.min_dist)
                if t is None:
                    break
                tasks.append(t)
            if len(tasks) == (cfg.trajs_per_map if with_demos else 1):
                break
        else:
            raise RuntimeError(f"could not generate a usable map for map_id={map_id}")
        maps.append(grid)
        if with_demos:
            demo_seeds = rng.integers(0, 2**31 - 1, size=len(tasks))
            for (start, goal), sd in zip(tasks, demo_seeds):
                demos.append(generate_demo(grid, start, goal, sensor_cfg, int(sd), map_id))
    return maps, demos


# -- file formats -----------------------------------------------------------

def format_map(grid: GridMap) -> str:
    return f"P-GRID {grid.width} {grid.height}\n" + "\n".join(grid.to_strings()) + "\n"


def parse_map(text: str) -> GridMap:
    lines = [ln.rstrip("\r") for ln in text.strip("\n").split("\n")]
    header = lines[0].split()
    if len(header) != 3 or header[0] != "P-GRID":
        raise ValueError(f"bad map header: {lines[0]!r}")
    width, height = int(header[1]), int(header[2])
    rows = lines[1 : 1 + height]
    if len(rows) != height or any(len(r) != width for r in rows):
        raise ValueError("map body does not match the header dimensions")
    if any(ch not in ".#" for r in rows for ch in r):
        raise ValueError("map body may only contain '.' and '#'")
    return GridMap.from_strings(rows)


def save_map(grid: GridMap, path) -> None:
    Path(path).write_text(format_map(grid))


def load_map(path) -> GridMap:
    return parse_map(Path(path).read_text())


def save_demos(demos: Iterable[Demonstration], path) -> None:
    with open(path, "w") as fh:
        for d in demos:
            fh.write(json.dumps(d.to_json(), separators=(",", ":")) + "\n")


def load_demos(path) -> list[Demonstration]:
    with open(path) as fh:
        return [Demonstration.from_json(json.loads(line)) for line in fh if line.strip()]
