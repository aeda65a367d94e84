"""Simulated planar lidar: exact ray casting on the true grid plus Gaussian range noise."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gridworld import OCCUPIED, GridMap

# ray-march corner coincidence tolerance (cell units)
_CORNER_TOL = 1e-9


@dataclass(frozen=True)
class SensorConfig:
    beams: int = 72
    max_range: float = 2.5
    noise_sigma: float = 0.05

    def __post_init__(self):
        if self.beams < 1:
            raise ValueError("beams must be >= 1")
        if self.max_range <= 0:
            raise ValueError("max_range must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


# Reported settings for the two grid sizes.
SENSOR_16 = SensorConfig(beams=72, max_range=2.5, noise_sigma=0.05)
SENSOR_100 = SensorConfig(beams=72, max_range=10.0, noise_sigma=0.2)


@dataclass(frozen=True)
class LidarScan:
    ranges: np.ndarray
    max_range: float

    @property
    def K(self) -> int:
        return len(self.ranges)


def beam_angles(K: int) -> np.ndarray:
    return 2.0 * np.pi * np.arange(K) / K


def beam_directions(K: int) -> np.ndarray:
    """Unit direction per beam, with float dust on exact axes snapped to zero."""
    ang = beam_angles(K)
    d = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    d[np.abs(d) < 1e-12] = 0.0
    return d


def _cast(cells: np.ndarray, ox: float, oy: float, dx: float, dy: float, max_range: float) -> float:
    H, W = cells.shape
    cx, cy = int(math.floor(ox)), int(math.floor(oy))
    if dx > 0:
        sx, tmx, tdx = 1, (cx + 1 - ox) / dx, 1.0 / dx
    elif dx < 0:
        sx, tmx, tdx = -1, (cx - ox) / dx, -1.0 / dx
    else:
        sx, tmx, tdx = 0, math.inf, math.inf
    if dy > 0:
        sy, tmy, tdy = 1, (cy + 1 - oy) / dy, 1.0 / dy
    elif dy < 0:
        sy, tmy, tdy = -1, (cy - oy) / dy, -1.0 / dy
    else:
        sy, tmy, tdy = 0, math.inf, math.inf
    while True:
        if abs(tmx - tmy) <= _CORNER_TOL:
            # passing exactly through a corner touches the side cells in a
            # single point only; those tangencies are not hits
            t = tmx
            cx += sx
            cy += sy
            tmx += tdx
            tmy += tdy
        elif tmx < tmy:
            t = tmx
            cx += sx
            tmx += tdx
        else:
            t = tmy
            cy += sy
            tmy += tdy
        if t > max_range:
            return max_range
        if not (0 <= cx < W and 0 <= cy < H):
            # free beyond the boundary, and a ray never re-enters the grid
            return max_range
        if cells[cy, cx] == OCCUPIED:
            return t


def cast_rays(grid: GridMap, pose, K: int = 72, max_range: float = 2.5) -> LidarScan:
    """Noiseless ranges from the centre of ``pose``; beam ``k`` points at angle 2*pi*k/K.

    Angles are measured from +x toward +y (row index), so with north at row 0
    the beams sweep clockwise on screen.
    """
    if not grid.in_bounds(pose):
        raise ValueError(f"pose {tuple(pose)} out of bounds")
    if grid.cells[pose[1], pose[0]] == OCCUPIED:
        raise ValueError(f"pose {tuple(pose)} is inside an obstacle")
    ox, oy = pose[0] + 0.5, pose[1] + 0.5
    dirs = beam_directions(K)
    ranges = np.array([_cast(grid.cells, ox, oy, float(dx), float(dy), max_range) for dx, dy in dirs])
    return LidarScan(ranges, float(max_range))


def add_noise(scan: LidarScan, sigma: float, seed: int) -> LidarScan:
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return LidarScan(scan.ranges.copy(), scan.max_range)
    rng = np.random.default_rng(seed)
    noisy = scan.ranges + rng.normal(0.0, sigma, size=scan.ranges.shape)
    return LidarScan(np.clip(noisy, 0.0, scan.max_range), scan.max_range)


def observe(grid: GridMap, pose, cfg: SensorConfig, seed: int) -> LidarScan:
    return add_noise(cast_rays(grid, pose, cfg.beams, cfg.max_range), cfg.noise_sigma, seed)
