"""Expected traversal cost over the occupancy belief, with analytic partials.

A transition ``(x, u)`` costs ``s`` when both endpoint cells are free and
``l`` otherwise. Under the independent-cell belief the expectation is
``s * q + l * (1 - q)`` with ``q = p_free(x) * p_free(x')`` and
``p_free = sigmoid(-h)``. Moves that leave the grid cost exactly ``l``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .belief import sigmoid
from .gridworld import DELTAS, N_CONTROLS


@dataclass
class CostEncoderParams:
    s: float = 1.0
    l: float = 100.0
    trainable: bool = True

    def __post_init__(self):
        if not (0 < self.s < self.l):
            raise ValueError(f"need 0 < s < l, got s={self.s}, l={self.l}")


@lru_cache(maxsize=32)
def successor_table(height: int, width: int) -> np.ndarray:
    """``(N, 8)`` flat successor index per (state, control); -1 when off-grid."""
    ys, xs = np.divmod(np.arange(height * width), width)
    nx = xs[:, None] + DELTAS[None, :, 0]
    ny = ys[:, None] + DELTAS[None, :, 1]
    ok = (nx >= 0) & (nx < width) & (ny >= 0) & (ny < height)
    succ = np.where(ok, ny * width + nx, -1).astype(np.int64)
    succ.setflags(write=False)
    return succ


def free_prob(h) -> np.ndarray:
    return sigmoid(-np.asarray(h, dtype=float))


def cost_field(h, shape, params: CostEncoderParams) -> np.ndarray:
    """Expected cost for every (state, control) as an ``(N, 8)`` array."""
    H, W = shape
    succ = successor_table(H, W)
    pf = free_prob(np.asarray(h).reshape(-1))
    valid = succ >= 0
    q = pf[:, None] * np.where(valid, pf[np.where(valid, succ, 0)], 0.0)
    c = params.s * q + params.l * (1.0 - q)
    c[~valid] = params.l
    return c


def _endpoints(h, shape, x, u):
    H, W = shape
    succ = successor_table(H, W)
    i = int(x[1]) * W + int(x[0])
    return i, int(succ[i, int(u)])


def expected_cost(h, shape, x, u, params: CostEncoderParams) -> float:
    h = np.asarray(h).reshape(-1)
    i, j = _endpoints(h, shape, x, u)
    if j < 0:
        return float(params.l)
    q = free_prob(h[i]) * free_prob(h[j])
    return float(params.s * q + params.l * (1.0 - q))


def cost_grads(h, shape, x, u, params: CostEncoderParams) -> tuple[float, float, float, float]:
    """(dc/ds, dc/dl, dc/dh[x], dc/dh[x'])."""
    h = np.asarray(h).reshape(-1)
    i, j = _endpoints(h, shape, x, u)
    if j < 0:
        return 0.0, 1.0, 0.0, 0.0
    pi, pj = free_prob(h[i]), free_prob(h[j])
    q = pi * pj
    # d p_free / dh = -p_free * (1 - p_free)
    dq_di = -pi * (1.0 - pi) * pj
    dq_dj = -pj * (1.0 - pj) * pi
    ds_l = params.s - params.l
    return float(q), float(1.0 - q), float(ds_l * dq_di), float(ds_l * dq_dj)


def cost_grads_batch(h, shape, cells: np.ndarray, controls: np.ndarray, params: CostEncoderParams):
    """Vectorised ``cost_grads`` over flat state indices; returns arrays plus successor cells."""
    H, W = shape
    succ = successor_table(H, W)[cells, controls]
    h = np.asarray(h).reshape(-1)
    valid = succ >= 0
    pi = free_prob(h[cells])
    pj = np.where(valid, free_prob(h[np.where(valid, succ, 0)]), 0.0)
    q = pi * pj
    ds_l = params.s - params.l
    dci = np.where(valid, ds_l * (-pi * (1.0 - pi) * pj), 0.0)
    dcj = np.where(valid, ds_l * (-pj * (1.0 - pj) * pi), 0.0)
    return np.where(valid, q, 0.0), np.where(valid, 1.0 - q, 1.0), dci, dcj, succ


def write_cost_csv(c: np.ndarray, width: int, fh) -> None:
    fh.write("x,y,control,cost\n")
    from .gridworld import Control

    for i in range(c.shape[0]):
        y, x = divmod(i, width)
        for u in range(N_CONTROLS):
            fh.write(f"{x},{y},{Control(u).name},{c[i, u]!r}\n")
