"""Backward A* and finite-horizon DP over a per-(state, control) cost array.

Both planners compute costs-to-go toward a goal. A* expands predecessors
from the goal, ordered by ``g + eps_h * h`` with ties broken by smaller
``g`` and then by row-major index, and stops right after expanding the
query state, so each of its in-grid neighbours holds a value. The heuristic is Chebyshev distance to the query state times the
smallest transition cost in the field, which is consistent for
8-connected moves.

The optimal ``Q(x_t, u)`` is the cost of one state-control path, so its
subgradient with respect to the cost array is that path's visitation
indicator. It is recovered by walking ``parent`` links from the successor.
"""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np
from numba import njit

from .cost import successor_table
from .gridworld import DELTAS, N_CONTROLS

_DX = np.ascontiguousarray(DELTAS[:, 0])
_DY = np.ascontiguousarray(DELTAS[:, 1])


@njit(cache=True)
def _astar_kernel(cost, width, height, goal, target, eps_h, h_scale, dxs, dys):
    n = width * height
    g = np.full(n, np.inf)
    parent = np.full(n, -1, np.int64)
    parent_u = np.full(n, -1, np.int64)
    closed = np.zeros(n, np.bool_)
    in_open = np.zeros(n, np.bool_)
    order = np.empty(n, np.int64)
    n_exp = 0
    tx = target % width
    ty = target // width
    w = eps_h * h_scale

    g[goal] = 0.0
    in_open[goal] = True
    h_goal = max(abs(goal % width - tx), abs(goal // width - ty))
    heap = [(w * h_goal, 0.0, goal)]
    while len(heap) > 0:
        _, gv, x = heapq.heappop(heap)
        if closed[x] or gv > g[x]:
            continue
        closed[x] = True
        in_open[x] = False
        order[n_exp] = x
        n_exp += 1
        xx = x % width
        xy = x // width
        for u in range(8):
            yx = xx - dxs[u]
            yy = xy - dys[u]
            if yx < 0 or yx >= width or yy < 0 or yy >= height:
                continue
            y = yy * width + yx
            if closed[y]:
                continue
            cand = cost[y, u] + g[x]
            if cand < g[y]:
                g[y] = cand
                parent[y] = x
                parent_u[y] = u
                in_open[y] = True
                hy = max(abs(yx - tx), abs(yy - ty))
                heapq.heappush(heap, (cand + w * hy, cand, y))
        if x == target:  # x_t is expanded too, so all its neighbours carry a value
            break
    return g, parent, parent_u, closed, in_open, order[:n_exp]


@dataclass
class PlanResult:
    """Output of one backward search.

    ``parent[y]`` is the successor of ``y`` toward the goal and
    ``parent_u[y]`` the control that reaches it. ``closed`` states carry
    exact costs-to-go; ``open`` states carry upper bounds.
    """

    g: np.ndarray
    parent: np.ndarray
    parent_u: np.ndarray
    closed: np.ndarray
    open: np.ndarray
    order: np.ndarray
    goal: int
    target: int
    shape: tuple[int, int]

    @property
    def expansions(self) -> int:
        return len(self.order)

    @property
    def reached(self) -> bool:
        return bool(self.closed[self.target])

    def visited(self) -> np.ndarray:
        return np.isfinite(self.g)


def _flat(s, width: int) -> int:
    return int(s[1]) * width + int(s[0])


def astar_backward(cost: np.ndarray, shape, x_t, goal, eps_h: float = 1.0) -> PlanResult:
    """Backward A* from ``goal`` until ``x_t`` has been closed and expanded (or OPEN runs dry)."""
    if eps_h < 1.0:
        raise ValueError("eps_h must be >= 1")
    H, W = shape
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    t, gl = _flat(x_t, W), _flat(goal, W)
    h_scale = float(cost.min())
    g, parent, parent_u, closed, in_open, order = _astar_kernel(cost, W, H, gl, t, float(eps_h), h_scale, _DX, _DY)
    return PlanResult(g, parent, parent_u, closed, in_open, order, gl, t, (H, W))


def dijkstra_all(cost: np.ndarray, shape, goal) -> np.ndarray:
    """Exact costs-to-go for every state (A* with a zero heuristic, run to exhaustion)."""
    H, W = shape
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    gl = _flat(goal, W)
    g, *_ = _astar_kernel(cost, W, H, gl, -1, 1.0, 0.0, _DX, _DY)
    return g


def dp_backward(cost: np.ndarray, shape, goal, T: int) -> np.ndarray:
    """``T`` full Bellman sweeps with ``V(goal)`` clamped to 0.

    After ``T`` sweeps ``V(x)`` is the cheapest cost of reaching the goal
    in at most ``T`` moves (``inf`` if none exists).
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    H, W = shape
    succ = successor_table(H, W)
    gl = _flat(goal, W)
    V = np.full(H * W + 1, np.inf)  # trailing slot absorbs off-grid successors
    V[gl] = 0.0
    for _ in range(T):
        V[:-1] = (cost + V[succ]).min(axis=1)
        V[gl] = 0.0
    return V[:-1].copy()


def dp_backups(shape, T: int) -> int:
    return int(shape[0] * shape[1] * T)


def g_cap(params, shape) -> float:
    """Stand-in cost-to-go for successors the search never reached."""
    return float(params.l) * shape[0] * shape[1]


def q_values(plan: PlanResult, cost: np.ndarray, x_t, cap: float) -> np.ndarray:
    H, W = plan.shape
    i = _flat(x_t, W)
    succ = successor_table(H, W)[i]
    q = np.empty(N_CONTROLS)
    for u in range(N_CONTROLS):
        j = succ[u]
        gj = plan.g[j] if j >= 0 else np.inf
        q[u] = cost[i, u] + (gj if np.isfinite(gj) else cap)
    return q


def boltzmann_policy(q) -> np.ndarray:
    """Softmin over controls; degrades to uniform when every value is infinite."""
    q = np.asarray(q, dtype=float)
    finite = np.isfinite(q)
    if not finite.any():
        return np.full(q.shape, 1.0 / q.size)
    z = np.where(finite, np.exp(-(q - q[finite].min())), 0.0)
    return z / z.sum()


def log_policy(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    m = q.min()
    z = -(q - m)
    return z - np.log(np.exp(z).sum())


def visitation_subgradient(plan: PlanResult, x_t, u_t, include_open: bool = True) -> list[tuple[int, int]]:
    """State-control pairs on the path behind ``Q(x_t, u_t)``, ordered from ``x_t``.

    Empty when the successor is off-grid or has no value (its Q-entry is a
    planner constant). With ``include_open`` the walk also starts from OPEN
    successors, whose values are exact costs of their recorded parent chain.
    """
    H, W = plan.shape
    i = _flat(x_t, W)
    j = int(successor_table(H, W)[i, int(u_t)])
    if j < 0 or not np.isfinite(plan.g[j]):
        return []
    if not plan.closed[j] and not include_open:
        return []
    pairs = [(i, int(u_t))]
    while j != plan.goal:
        pairs.append((j, int(plan.parent_u[j])))
        j = int(plan.parent[j])
    return pairs


def path_cost(cost: np.ndarray, pairs) -> float:
    """Inner product of the cost array with a visitation, accumulated goal-first."""
    total = 0.0
    for i, u in reversed(pairs):
        total = cost[i, u] + total
    return total


def dp_visitation(cost: np.ndarray, V: np.ndarray, shape, x_t, u_t, goal) -> list[tuple[int, int]]:
    """Greedy path through a converged DP value field (ties to the lowest control)."""
    H, W = shape
    succ = successor_table(H, W)
    gl = _flat(goal, W)
    i = _flat(x_t, W)
    pairs = [(i, int(u_t))]
    j = int(succ[i, int(u_t)])
    if j < 0 or not np.isfinite(V[j]):
        return []
    seen = {i}
    while j != gl:
        if j in seen:  # pragma: no cover - only with zero-cost cycles
            raise RuntimeError("DP greedy walk revisited a state")
        seen.add(j)
        nxt = np.where(succ[j] >= 0, cost[j] + V[np.maximum(succ[j], 0)], np.inf)
        u = int(np.argmin(nxt))
        pairs.append((j, u))
        j = int(succ[j, u])
    return pairs


def write_trace(plan: PlanResult, fh, **extra) -> None:
    """One JSONL record: expansion order and the g-value of each expanded state."""
    rec = {
        **extra,
        "goal": plan.goal,
        "target": plan.target,
        "expansions": plan.expansions,
        "order": plan.order.tolist(),
        "g": [float(plan.g[i]) for i in plan.order],
    }
    fh.write(json.dumps(rec) + "\n")
