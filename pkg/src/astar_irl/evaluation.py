"""Test-time rollouts, aggregate metrics, the blocking-maze scenario and planner timing."""
from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .belief import BeliefState, SensorModelParams, occupancy_prob, true_map_log_odds
from .cost import CostEncoderParams, cost_field
from .gridworld import FREE, OCCUPIED, GridMap, State, generate_map, oracle_cost_to_go, sample_task, step
from .planner import astar_backward, boltzmann_policy, dp_backups, dp_backward, g_cap, q_values, write_trace
from .sensor import SensorConfig, observe
from .validation import check_maps

OUTCOMES = ("success", "collision", "timeout", "unreachable")


@dataclass
class RolloutResult:
    trajectory: list
    outcome: str
    steps: int
    oracle_steps: int
    plans: int = 0
    expansions: list = field(default_factory=list)

    @property
    def success(self) -> bool:
        return self.outcome == "success"


def _step_seed(seed: int, t: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(t,)).generate_state(1)[0])


def rollout(theta, grid: GridMap, start, goal, sensor_cfg: SensorConfig | None = None, step_cap: int | None = None,
            seed: int = 0, eps_h: float = 1.0, oracle_belief: bool = False, trace=None) -> RolloutResult:
    """Greedy closed-loop execution: observe, update belief, plan, act.

    Parameters
    ----------
    theta : ThetaParams
    step_cap : int, optional
        Defaults to twice the oracle step count.
    oracle_belief : bool
        Replace the filtered belief by the true map (planner-only sanity mode).
    trace : file-like, optional
        Receives one JSONL planner trace per plan.
    """
    cfg = sensor_cfg or SensorConfig()
    start, goal = State(*map(int, start)), State(*map(int, goal))
    if not grid.is_free(start) or not grid.is_free(goal):
        raise ValueError("start and goal must be free cells")
    oracle = oracle_cost_to_go(grid, goal)[start.y, start.x]
    if not np.isfinite(oracle):
        raise ValueError("start cannot reach goal on the true map")
    oracle = int(oracle)
    cap = 2 * oracle if step_cap is None else int(step_cap)
    belief = BeliefState(grid.shape, theta.sensor, cfg.max_range)
    if oracle_belief:
        belief.set_log_odds(true_map_log_odds(grid.cells))
    cp = theta.cost
    G = g_cap(cp, grid.shape)
    s, traj, expansions = start, [start], []
    steps = 0
    while True:
        if s == goal:
            return RolloutResult(traj, "success", steps, oracle, len(expansions), expansions)
        if steps >= cap:
            return RolloutResult(traj, "timeout", steps, oracle, len(expansions), expansions)
        if not oracle_belief:
            belief.observe(s, observe(grid, s, cfg, _step_seed(seed, steps)).ranges)
        c = cost_field(belief.h, grid.shape, cp)
        plan = astar_backward(c, grid.shape, s, goal, eps_h)
        expansions.append(plan.expansions)
        if trace is not None:
            write_trace(plan, trace, step=steps)
        if not plan.reached:
            return RolloutResult(traj, "unreachable", steps, oracle, len(expansions), expansions)
        u = int(np.argmax(boltzmann_policy(q_values(plan, c, s, G))))
        nxt = step(grid, s, u)
        steps += 1
        if nxt is None or not grid.is_free(nxt):
            if nxt is not None:
                traj.append(nxt)
            return RolloutResult(traj, "collision", steps, oracle, len(expansions), expansions)
        s = nxt
        traj.append(s)


def classify(trajectory, grid: GridMap, goal, oracle_steps: int) -> str:
    """Outcome recomputed from a trajectory alone (used to audit rollouts)."""
    for p in trajectory:
        if not grid.is_free(p):
            return "collision"
    steps = len(trajectory) - 1
    if tuple(trajectory[-1]) == tuple(goal) and steps <= 2 * oracle_steps:
        return "success"
    return "timeout" if steps >= 2 * oracle_steps else "unreachable"


@dataclass
class EvalMetrics:
    n: int
    success_rate: float
    traj_diff: float
    collision_rate: float
    timeout_rate: float
    unreachable_rate: float
    plans_per_rollout: float
    mean_expansions: float

    def to_dict(self) -> dict:
        return asdict(self)


def summarize(results: list[RolloutResult]) -> EvalMetrics:
    n = len(results)
    if n == 0:
        raise ValueError("no rollouts to summarize")
    rate = {o: 100.0 * sum(r.outcome == o for r in results) / n for o in OUTCOMES}
    diffs = [r.steps - r.oracle_steps for r in results if r.success]
    exps = [e for r in results for e in r.expansions]
    return EvalMetrics(
        n=n,
        success_rate=rate["success"],
        traj_diff=float(np.mean(diffs)) if diffs else float("nan"),
        collision_rate=rate["collision"],
        timeout_rate=rate["timeout"],
        unreachable_rate=rate["unreachable"],
        plans_per_rollout=float(np.mean([r.plans for r in results])),
        mean_expansions=float(np.mean(exps)) if exps else 0.0,
    )


def sample_test_tasks(maps, seed: int = 0, min_dist: int = 4) -> list:
    """One seeded (start, goal) per map; maps without an admissible pair are skipped."""
    tasks = []
    for i, grid in enumerate(maps):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        t = sample_task(grid, rng, min_dist)
        if t is not None:
            tasks.append((i, t[0], t[1]))
    return tasks


def evaluate(theta, test_maps, sensor_cfg: SensorConfig | None = None, seed: int = 0, eps_h: float = 1.0,
             oracle_belief: bool = False, min_dist: int = 4, trace=None):
    """Roll out once per map and aggregate.

    Returns
    -------
    metrics : EvalMetrics
    results : list of RolloutResult
    """
    maps = check_maps(test_maps)
    results = []
    for i, start, goal in sample_test_tasks(maps, seed, min_dist):
        rseed = _step_seed(seed, 10_000 + i)
        results.append(rollout(theta, maps[i], start, goal, sensor_cfg, seed=rseed, eps_h=eps_h,
                               oracle_belief=oracle_belief, trace=trace))
    return summarize(results), results


def write_eval_csv(metrics: EvalMetrics, fh, **extra) -> None:
    row = {**extra, **metrics.to_dict()}
    fh.write(",".join(row) + "\n")
    fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row.values()) + "\n")


def write_rollouts_jsonl(results: list[RolloutResult], fh) -> None:
    for r in results:
        fh.write(json.dumps({"outcome": r.outcome, "steps": r.steps, "oracle_steps": r.oracle_steps,
                             "plans": r.plans, "trajectory": [list(p) for p in r.trajectory]}) + "\n")


# -- blocking maze ------------------------------------------------------------

@dataclass
class DynaConfig:
    """Two-door maze. The right door is open before ``switch_step``, the left one after."""

    width: int = 11
    height: int = 7
    wall_row: int = 3
    door_width: int = 2
    switch_step: int = 1000
    total_steps: int = 3000
    gamma_step: float = 0.999
    gamma_switch: float = 1.0
    clamp: float | None = 10.0
    max_episode_steps: int = 500
    seed: int = 0

    def maps(self) -> tuple[GridMap, GridMap]:
        cells = np.full((self.height, self.width), FREE, np.int8)
        cells[self.wall_row, :] = OCCUPIED
        right, left = cells.copy(), cells.copy()
        right[self.wall_row, self.width - self.door_width:] = FREE
        left[self.wall_row, :self.door_width] = FREE
        return GridMap(right), GridMap(left)

    @property
    def start(self) -> State:
        return State(self.width // 2, self.height - 1)

    @property
    def goal(self) -> State:
        return State(self.width // 2, 0)

    @property
    def doors(self) -> dict:
        r = self.wall_row
        return {"right": {State(self.width - 1 - k, r) for k in range(self.door_width)},
                "left": {State(k, r) for k in range(self.door_width)}}


@dataclass
class DynaResult:
    curve: list  # (env_step, episodes_completed)
    episodes: list  # dicts: end_step, length, door, phase


def dyna_blocking_maze(theta, config: DynaConfig | None = None, sensor_cfg: SensorConfig | None = None,
                       eps_h: float = 1.0) -> DynaResult:
    """Online episodes in the blocking maze with a belief kept across episodes.

    A move into a wall or off the map leaves the agent in place. The agent
    is not told when the doors swap; only fresh scans can overturn its map.
    """
    cfg = config or DynaConfig()
    scfg = sensor_cfg or SensorConfig()
    phase_maps = cfg.maps()
    shape = phase_maps[0].shape
    belief = BeliefState(shape, theta.sensor, scfg.max_range, clamp=cfg.clamp)
    cp = theta.cost
    G = g_cap(cp, shape)
    doors = cfg.doors
    s = prev = cfg.start
    ep_len, ep_cells, ep_phase = 0, {s}, 0
    curve, episodes = [], []
    done = 0
    for t in range(cfg.total_steps):
        phase = 0 if t < cfg.switch_step else 1
        grid = phase_maps[phase]
        if t == cfg.switch_step:
            belief.decay(cfg.gamma_switch)
            if not grid.is_free(s):  # the closing door pushes the agent back
                s = prev
        belief.observe(s, observe(grid, s, scfg, _step_seed(cfg.seed, t)).ranges)
        c = cost_field(belief.h, shape, cp)
        plan = astar_backward(c, shape, s, cfg.goal, eps_h)
        u = int(np.argmax(boltzmann_policy(q_values(plan, c, s, G))))
        nxt = step(grid, s, u)
        prev = s
        if nxt is not None and grid.is_free(nxt):
            s = nxt
        ep_len += 1
        ep_cells.add(s)
        belief.decay(cfg.gamma_step)
        if s == cfg.goal or ep_len >= cfg.max_episode_steps:
            door = next((k for k, d in doors.items() if d & ep_cells), None)
            episodes.append({"end_step": t + 1, "length": ep_len, "door": door, "phase": phase,
                             "reached": s == cfg.goal, "start_phase": ep_phase})
            done += s == cfg.goal
            s, ep_len, ep_cells = cfg.start, 0, {cfg.start}
            ep_phase = 0 if t + 1 < cfg.switch_step else 1
        curve.append((t + 1, done))
    return DynaResult(curve, episodes)


def dyna_adaptation(result: DynaResult, switch_step: int) -> dict:
    """Episodes after the swap until the new door is used and until the old length is regained."""
    before = [e for e in result.episodes if e["end_step"] <= switch_step and e["reached"]]
    after = [e for e in result.episodes if e["end_step"] > switch_step]
    ref = before[-1]["length"] if before else None
    first_new = next((k + 1 for k, e in enumerate(after) if e["reached"] and e["door"] == "left"), None)
    regained = None
    if ref is not None:
        regained = next((k + 1 for k, e in enumerate(after)
                         if e["reached"] and e["start_phase"] == 1 and e["length"] <= ref), None)
    return {"pre_switch_length": ref, "episodes_to_new_door": first_new, "episodes_to_regain": regained}


def write_curve_csv(result: DynaResult, fh) -> None:
    fh.write("env_step,episodes_completed\n")
    for t, n in result.curve:
        fh.write(f"{t},{n}\n")


# -- planner benchmark ----------------------------------------------------------

@dataclass
class BenchRow:
    width: int
    height: int
    astar_expansions: int
    dp_backups: int
    astar_ms: float
    dp_ms: float

    @property
    def backup_ratio(self) -> float:
        return self.dp_backups / max(self.astar_expansions, 1)

    @property
    def speedup(self) -> float:
        return self.dp_ms / self.astar_ms

    def to_dict(self) -> dict:
        return {**asdict(self), "backup_ratio": self.backup_ratio, "speedup": self.speedup}


def bench_instance(size: int, seed: int, obstacle_density: float = 0.2, confidence: float = 10.0,
                   cost_params: CostEncoderParams | None = None):
    """Random map with free, connected corners and a converged-belief cost field."""
    cp = cost_params or CostEncoderParams()
    for attempt in range(100):
        map_seed = int(np.random.SeedSequence(seed, spawn_key=(size, attempt)).generate_state(1)[0])
        cells = generate_map(map_seed, size, size, obstacle_density).cells.copy()
        cells[0, 0] = cells[-1, -1] = FREE
        grid = GridMap(cells)
        goal, start = State(size - 1, size - 1), State(0, 0)
        if np.isfinite(oracle_cost_to_go(grid, goal)[0, 0]):
            break
    else:  # pragma: no cover
        raise RuntimeError("no connected benchmark map found")
    c = cost_field(true_map_log_odds(grid.cells, confidence), grid.shape, cp)
    return grid, c, start, goal


def bench_planner(sizes=(16, 100), reps: int = 20, seed: int = 0, obstacle_density: float = 0.2) -> list[BenchRow]:
    """Median wall time of A* and a full DP solve (T = width + height) on corner-to-corner tasks."""
    sizes = list(sizes)
    if not sizes:
        raise ValueError("sizes is empty")
    rows = []
    for n in sizes:
        grid, c, start, goal = bench_instance(n, seed, obstacle_density)
        T = grid.width + grid.height
        plan = astar_backward(c, grid.shape, start, goal)  # also warms the jit cache
        ta, td = [], []
        for _ in range(reps):
            t0 = time.perf_counter()
            astar_backward(c, grid.shape, start, goal)
            ta.append(time.perf_counter() - t0)
        for _ in range(reps):
            t0 = time.perf_counter()
            dp_backward(c, grid.shape, goal, T)
            td.append(time.perf_counter() - t0)
        rows.append(BenchRow(grid.width, grid.height, plan.expansions, dp_backups(grid.shape, T),
                             1e3 * float(np.median(ta)), 1e3 * float(np.median(td))))
    return rows


def write_bench_csv(rows: list[BenchRow], fh) -> None:
    cols = ["width", "height", "astar_expansions", "dp_backups", "backup_ratio", "astar_ms", "dp_ms", "speedup"]
    fh.write(",".join(cols) + "\n")
    for r in rows:
        d = r.to_dict()
        fh.write(",".join(repr(d[k]) if isinstance(d[k], float) else str(d[k]) for k in cols) + "\n")


# -- figure dumps ------------------------------------------------------------

def write_pgm(path, values: np.ndarray) -> None:
    """Binary greyscale image of a field in [0, 1]; 1 renders black."""
    v = np.clip(np.nan_to_num(np.asarray(values, dtype=float), nan=1.0, posinf=1.0), 0.0, 1.0)
    H, W = v.shape
    pix = np.round(255.0 * (1.0 - v)).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode())
        fh.write(pix.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    W, H = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(H, W)


def belief_image(belief: BeliefState) -> np.ndarray:
    return occupancy_prob(belief.grid())


def value_image(g: np.ndarray, shape) -> np.ndarray:
    """Cost-to-go scaled to [0, 1]; unvisited states render black."""
    g = np.asarray(g, dtype=float).reshape(shape)
    finite = np.isfinite(g)
    out = np.ones(shape)
    if finite.any():
        hi = g[finite].max()
        out[finite] = g[finite] / hi if hi > 0 else 0.0
    return out


def default_theta(psi: float = 1.0, h0: float = 0.0, s: float = 1.0, l: float = 100.0,
                  epsilon: float = 0.5):
    """Hand-set parameters (shared psi) for planner-only and scenario runs."""
    from .trainer import ThetaParams

    return ThetaParams(SensorModelParams(np.full(1, psi), h0, epsilon), CostEncoderParams(s, l))


def dyna_theta():
    """Optimistic-prior parameters for the blocking maze (unknown cells look cheap)."""
    return default_theta(psi=10.0, h0=-2.0, epsilon=0.5)
