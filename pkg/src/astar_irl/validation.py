"""Input checks shared by the estimator, evaluation and CLI layers."""
from __future__ import annotations

import numbers

import numpy as np

from .gridworld import Demonstration, GridMap


def check_demos(X, name: str = "X") -> list[Demonstration]:
    """Accept a non-empty iterable of ``Demonstration`` sharing one grid shape."""
    if isinstance(X, Demonstration):
        X = [X]
    demos = list(X)
    if not demos:
        raise ValueError(f"{name} is empty")
    for i, d in enumerate(demos):
        if not isinstance(d, Demonstration):
            raise TypeError(f"{name}[{i}] is {type(d).__name__}, expected Demonstration")
    shapes = {(d.height, d.width) for d in demos}
    if len(shapes) != 1:
        raise ValueError(f"{name} mixes grid shapes {sorted(shapes)}")
    ranges = {d.max_range for d in demos}
    if len(ranges) != 1:
        raise ValueError(f"{name} mixes sensor ranges {sorted(ranges)}")
    return demos


def check_maps(maps, name: str = "maps") -> list[GridMap]:
    maps = list(maps)
    if not maps:
        raise ValueError(f"{name} is empty")
    for i, m in enumerate(maps):
        if not isinstance(m, GridMap):
            raise TypeError(f"{name}[{i}] is {type(m).__name__}, expected GridMap")
    return maps


def check_positive(value, name: str, strict: bool = True) -> float:
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real, got {value!r}")
    if (value <= 0) if strict else (value < 0):
        raise ValueError(f"{name} must be {'>' if strict else '>='} 0, got {value!r}")
    return float(value)


def check_int(value, name: str, minimum: int = 0) -> int:
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise TypeError(f"{name} must be an integer, got {value!r}")
    if value < minimum:
        raise ValueError(f"{name} must be >= {minimum}, got {value}")
    return int(value)


def check_unit_interval(value, name: str, open_right: bool = True) -> float:
    value = float(value)
    if not (0.0 <= value < 1.0 if open_right else 0.0 <= value <= 1.0):
        raise ValueError(f"{name} must lie in [0, 1{')' if open_right else ']'}, got {value}")
    return value


def check_seed(seed) -> np.random.Generator:
    """Turn ``None``, an int or a ``Generator`` into a ``Generator``."""
    if isinstance(seed, np.random.Generator):
        return seed
    if seed is None or isinstance(seed, numbers.Integral):
        return np.random.default_rng(seed)
    raise TypeError(f"cannot seed a generator from {seed!r}")
