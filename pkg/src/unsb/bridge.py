"""Brownian-bridge conditionals and the discretised bridge Markov chain.

All samplers accept a single point (shape (d,)) or a batch (shape (B, d)) and
return the same shape.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Protocol

import numpy as np

from .errors import ParameterError, ShapeError
from .numerics import Rng


@dataclass(frozen=True)
class TimeGrid:
    times: tuple[float, ...]

    def __post_init__(self):
        t = tuple(float(x) for x in self.times)
        if len(t) < 2 or t[0] != 0.0 or t[-1] != 1.0:
            raise ParameterError("grid must start at 0 and end at 1")
        if any(b <= a for a, b in zip(t[:-1], t[1:])):
            raise ParameterError("grid times must be strictly increasing")
        object.__setattr__(self, "times", t)

    @classmethod
    def uniform(cls, n_steps: int) -> "TimeGrid":
        if n_steps < 1:
            raise ParameterError("n_steps must be >= 1")
        return cls(tuple(i / n_steps for i in range(n_steps)) + (1.0,))

    @property
    def n_steps(self) -> int:
        return len(self.times) - 1

    def __getitem__(self, i: int) -> float:
        return self.times[i]


@dataclass(frozen=True)
class BridgeConfig:
    tau: float
    grid: TimeGrid

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError("tau must be positive")


class Predictor(Protocol):
    def __call__(self, x_t: np.ndarray, t: float, rng: Rng) -> np.ndarray: ...


def restricted_step_fraction(grid: TimeGrid, i: int) -> float:
    if not 0 <= i < grid.n_steps:
        raise IndexError(f"step index {i} outside [0, {grid.n_steps})")
    t_i, t_next = grid[i], grid[i + 1]
    if t_next == 1.0:
        return 1.0
    return (t_next - t_i) / (1.0 - t_i)


def _gaussian_interp(x_from, x_to, s, var, rng):
    x_from = np.asarray(x_from, dtype=np.float64)
    x_to = np.asarray(x_to, dtype=np.float64)
    if x_from.shape != x_to.shape:
        raise ShapeError(f"shape mismatch {x_from.shape} vs {x_to.shape}")
    if s == 0.0:
        return x_from.copy()
    if s == 1.0:
        return x_to.copy()
    mean = s * x_to + (1.0 - s) * x_from
    if var == 0.0:
        return mean
    return mean + np.sqrt(var) * rng.normal(mean.shape)


def bridge_conditional_sample(x0, x1, t: float, tau: float, rng: Rng) -> np.ndarray:
    """Draw from N(t x1 + (1 - t) x0, t (1 - t) tau I)."""
    if not 0.0 <= t <= 1.0:
        raise ParameterError(f"t={t} outside [0, 1]")
    if tau < 0:
        raise ParameterError("tau must be non-negative")
    return _gaussian_interp(x0, x1, t, t * (1.0 - t) * tau, rng)


def restricted_interp_sample(x_ti, x1_pred, grid: TimeGrid, i: int, tau: float, rng: Rng) -> np.ndarray:
    """Bridge step from ``x_ti`` at ``t_i`` to ``t_{i+1}`` towards the endpoint ``x1_pred``."""
    s = restricted_step_fraction(grid, i)
    var = s * (1.0 - s) * tau * (1.0 - grid[i])
    return _gaussian_interp(x_ti, x1_pred, s, var, rng)


def simulate_chain(x0, predictor: Callable, grid: TimeGrid, tau: float, stop_index: int, rng: Rng):
    """Run the chain ``x_{t_j} -> x1_pred -> x_{t_{j+1}}`` for ``j < stop_index``.

    Returns ``(trajectory, predictions)`` with ``stop_index + 1`` states and
    ``stop_index`` predictions. Predictions are used as plain values; nothing
    downstream differentiates through them.
    """
    if not 0 <= stop_index <= grid.n_steps:
        raise IndexError(f"stop_index {stop_index} outside [0, {grid.n_steps}]")
    x = np.asarray(x0, dtype=np.float64)
    trajectory = [x]
    predictions = []
    for j in range(stop_index):
        pred = np.asarray(predictor(x, grid[j], rng), dtype=np.float64)
        if pred.shape != x.shape:
            raise ShapeError(f"predictor returned {pred.shape}, expected {x.shape}")
        predictions.append(pred)
        x = restricted_interp_sample(x, pred, grid, j, tau, rng)
        trajectory.append(x)
    return trajectory, predictions


def trajectory_to_csv(path, trajectory: list[np.ndarray], grid: TimeGrid) -> None:
    """One row per (step, chain) with columns step, t, [chain,] x_0..x_{d-1}."""
    first = np.asarray(trajectory[0])
    batched = first.ndim == 2
    d = first.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "t"] + (["chain"] if batched else []) + [f"x_{k}" for k in range(d)])
        for step, x in enumerate(trajectory):
            rows = np.atleast_2d(x)
            for c, row in enumerate(rows):
                w.writerow([step, repr(grid[step])] + ([c] if batched else []) + [repr(float(v)) for v in row])
