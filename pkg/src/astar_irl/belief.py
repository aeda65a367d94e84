"""Recurrent log-odds occupancy filter with a learnable truncated-linear inverse sensor model.

For a cell ``j`` marched by beam ``k`` with range ``z_k`` the range
differential is ``dz = d(pose, j) - z_k`` (centre to centre). Within the
influence band ``dz <= epsilon`` the beam contributes ``psi[k] * dz`` log-odds;
outside it contributes the prior ``h0``, which the recursion

    h_{t+1} = h_t + g(pose, z; psi) - h0

cancels. Contributions of all beams touching a cell in one scan are summed.
Because no branch depends on ``psi`` or ``h0``, ``h_t`` is affine in both and
the filter keeps its exact Jacobian alongside the state.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    e = np.exp(-np.abs(x))  # never overflows; keeps relative precision in both tails
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def occupancy_prob(h) -> np.ndarray:
    return sigmoid(h)


@dataclass
class SensorModelParams:
    psi: np.ndarray
    h0: float = 0.0
    epsilon: float = 1.0
    march_step: float = 0.3

    def __post_init__(self):
        self.psi = np.atleast_1d(np.asarray(self.psi, dtype=float)).copy()
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.march_step <= 0:
            raise ValueError("march_step must be positive")

    @property
    def K(self) -> int:
        return len(self.psi)


@dataclass(frozen=True)
class RayTable:
    """Cells marched by each beam, relative to the pose cell, flattened over beams."""

    beam: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    t_first: np.ndarray  # march distance at which the cell was first entered
    dist: np.ndarray  # centre-to-centre distance from the pose cell


@lru_cache(maxsize=16)
def ray_table(K: int, max_range: float, march_step: float = 0.3) -> RayTable:
    from .sensor import beam_directions

    dirs = beam_directions(K)
    n_steps = int(np.floor(max_range / march_step + 1e-9)) + 1
    ts = np.arange(n_steps) * march_step
    cols = {k: [] for k in ("beam", "dx", "dy", "t_first", "dist")}
    for k, (cx, cy) in enumerate(dirs):
        seen = set()
        for t in ts:
            cell = (int(np.floor(0.5 + t * cx)), int(np.floor(0.5 + t * cy)))
            if cell in seen:
                continue
            seen.add(cell)
            cols["beam"].append(k)
            cols["dx"].append(cell[0])
            cols["dy"].append(cell[1])
            cols["t_first"].append(t)
            cols["dist"].append(float(np.hypot(*cell)))
    arrs = {k: np.asarray(v) for k, v in cols.items()}
    for v in arrs.values():
        v.setflags(write=False)
    return RayTable(arrs["beam"].astype(np.int64), arrs["dx"].astype(np.int64), arrs["dy"].astype(np.int64),
                    arrs["t_first"].astype(float), arrs["dist"].astype(float))


def scan_entries(pose, ranges, shape, epsilon: float, max_range: float, march_step: float = 0.3):
    """In-band (cell, beam, dz) triples for one scan taken at ``pose``.

    A beam marches cells up to ``min(z + epsilon, max_range)``; a marched
    cell is in band when ``dz <= epsilon``. Cells whose centre lies beyond
    ``max_range`` are outside the field of view and never updated, so a
    no-return beam carries no occupied evidence.
    """
    ranges = np.asarray(ranges, dtype=float)
    H, W = shape
    tab = ray_table(len(ranges), float(max_range), float(march_step))
    z = ranges[tab.beam]
    cx = tab.dx + int(pose[0])
    cy = tab.dy + int(pose[1])
    dz = tab.dist - z
    keep = (
        (cx >= 0) & (cx < W) & (cy >= 0) & (cy < H)
        & (tab.t_first <= np.minimum(z + epsilon, max_range))
        & (dz <= epsilon)
        & (tab.dist <= max_range)
    )
    return (cy[keep] * W + cx[keep]), tab.beam[keep], dz[keep]


def inverse_log_odds(pose, ranges, params: SensorModelParams, shape, max_range: float) -> np.ndarray:
    """Per-cell increment field ``g`` (flat, row-major); cells no beam reaches get ``h0``."""
    cells, beams, dz = scan_entries(pose, ranges, shape, params.epsilon, max_range, params.march_step)
    psi = _expand_psi(params.psi, len(ranges))
    n = shape[0] * shape[1]
    return params.h0 + np.bincount(cells, weights=psi[beams] * dz - params.h0, minlength=n)


def update_belief(h: np.ndarray, g: np.ndarray, h0: float) -> np.ndarray:
    return h + g - h0


def _expand_psi(psi: np.ndarray, K: int) -> np.ndarray:
    psi = np.asarray(psi, dtype=float)
    if psi.size == 1:
        return np.full(K, float(psi.reshape(-1)[0]))
    if psi.size != K:
        raise ValueError(f"psi has {psi.size} weights but the scan has {K} beams")
    return psi


@dataclass
class TapeEntry:
    cells: np.ndarray
    beams: np.ndarray
    dz: np.ndarray
    n_beams: int = 0
    scale: float = 1.0  # retention factor applied before this entry's increments


@dataclass
class BeliefState:
    """Occupancy log-odds over a ``(height, width)`` lattice plus its exact parameter Jacobian.

    ``dpsi[j, k]`` is dh[j]/dpsi_k and ``dh0[j]`` is dh[j]/dh0.
    """

    shape: tuple[int, int]
    params: SensorModelParams
    max_range: float
    clamp: float | None = None
    h: np.ndarray = field(init=False)
    dpsi: np.ndarray = field(init=False)
    dh0: np.ndarray = field(init=False)
    tape: list = field(init=False, default_factory=list)

    def __post_init__(self):
        n = self.shape[0] * self.shape[1]
        self.h = np.full(n, float(self.params.h0))
        self.dpsi = np.zeros((n, self.params.K))
        self.dh0 = np.ones(n)

    @property
    def K(self) -> int:
        return self.params.K

    def grid(self) -> np.ndarray:
        return self.h.reshape(self.shape)

    def observe(self, pose, ranges) -> None:
        p = self.params
        cells, beams, dz = scan_entries(pose, ranges, self.shape, p.epsilon, self.max_range, p.march_step)
        self._apply(cells, beams, dz, len(ranges))
        self.tape.append(TapeEntry(cells, beams, dz, len(ranges)))

    def _apply(self, cells, beams, dz, K_scan):
        p = self.params
        psi = _expand_psi(p.psi, K_scan)
        n = self.h.size
        self.h = update_belief(self.h, p.h0 + np.bincount(cells, weights=psi[beams] * dz - p.h0, minlength=n), p.h0)
        cols = beams if p.K == K_scan else np.zeros_like(beams)
        np.add.at(self.dpsi, (cells, cols), dz)
        self.dh0 -= np.bincount(cells, minlength=n)
        if self.clamp is not None:
            sat = np.abs(self.h) > self.clamp
            np.clip(self.h, -self.clamp, self.clamp, out=self.h)
            self.dpsi[sat] = 0.0  # saturated cells are locally constant
            self.dh0[sat] = 0.0

    def decay(self, gamma: float) -> None:
        """Pull every log-odds toward the prior: ``h <- h0 + gamma * (h - h0)``.

        With ``h0 = 0`` this is plain multiplication by the retention factor.
        """
        if gamma == 1.0:
            return
        h0 = self.params.h0
        self.h = h0 + gamma * (self.h - h0)
        self.dpsi *= gamma
        self.dh0 = (1.0 - gamma) + gamma * self.dh0
        self.tape.append(TapeEntry(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros(0), scale=gamma))

    def set_log_odds(self, h) -> None:
        """Inject an externally supplied belief (e.g. the true map); clears the Jacobian."""
        self.h = np.asarray(h, dtype=float).reshape(-1).copy()
        self.dpsi[:] = 0.0
        self.dh0[:] = 0.0
        self.tape.clear()

    def copy(self) -> "BeliefState":
        other = BeliefState(self.shape, self.params, self.max_range, self.clamp)
        other.h = self.h.copy()
        other.dpsi = self.dpsi.copy()
        other.dh0 = self.dh0.copy()
        other.tape = list(self.tape)
        return other


def replay(tape: list, shape, params: SensorModelParams, max_range: float, clamp: float | None = None) -> BeliefState:
    """Rebuild a belief from its tape; reproduces the recorded state bit for bit."""
    b = BeliefState(tuple(shape), params, max_range, clamp)
    for e in tape:
        if e.scale != 1.0:
            b.decay(e.scale)
        else:
            b._apply(e.cells, e.beams, e.dz, e.n_beams)
            b.tape.append(e)
    return b


def belief_param_grad(tape: list, cell: int, K: int) -> tuple[np.ndarray, float]:
    """(dh[cell]/dpsi, dh[cell]/dh0) from the tape alone.

    A cell the tape never touched keeps the prior-only gradient (0, 1).
    """
    dpsi = np.zeros(K)
    dh0 = 1.0
    for e in tape:
        if e.scale != 1.0:
            dpsi *= e.scale
            dh0 = (1.0 - e.scale) + e.scale * dh0
        hit = e.cells == cell
        if np.any(hit):
            b = e.beams[hit] if K > 1 else np.zeros(int(hit.sum()), np.int64)
            np.add.at(dpsi, b, e.dz[hit])
            dh0 -= float(hit.sum())
    return dpsi, dh0


def true_map_log_odds(cells: np.ndarray, confidence: float = 20.0) -> np.ndarray:
    """Log-odds field encoding a fully known map (occupied -> +confidence)."""
    return confidence * np.asarray(cells, dtype=float).reshape(-1)
