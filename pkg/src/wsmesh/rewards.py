"""Nonnegative reward functions g_l(x) on the step grid.

Discounting is folded into the reward: for an option payoff f and
continuously compounded rate r, ``g_l(x) = exp(-r l h) f(x)``, so the
backward induction and all policies work with undiscounted comparisons.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import RewardError


@dataclass(frozen=True)
class RewardFunction:
    """Evaluator (l, states (n, d)) -> values (n,), plus diagnostics.

    ``growth`` is the constant c with g_l(x) <= c (1 + |x|), used by the
    theory-driven parameter selection. ``cap`` is a uniform upper bound
    sup_l sup_x g_l(x) when one exists (K for a put); it feeds the mesh
    value-cap invariant and is None for unbounded payoffs.
    """

    fn: Callable[[int, np.ndarray], np.ndarray]
    growth: Optional[float] = None
    cap: Optional[float] = None
    label: str = "custom"

    def __call__(self, l: int, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        g = np.asarray(self.fn(l, x), dtype=float)
        if g.shape != (x.shape[0],):
            raise RewardError(f"reward returned shape {g.shape}, expected ({x.shape[0]},)")
        return g


def check_reward_values(g: np.ndarray, l: int):
    """Raise RewardError at the first negative or non-finite entry."""
    bad = ~np.isfinite(g) | (g < 0)
    if np.any(bad):
        n = int(np.argmax(bad))
        raise RewardError(f"reward at step {l}, path {n} is {g[n]!r}; must be finite and >= 0")


def put_reward(strike: float, rate: float, step_size: float) -> RewardFunction:
    """Discounted American put payoff on a single asset."""
    K, r, h = float(strike), float(rate), float(step_size)

    def fn(l, x):
        return np.exp(-r * l * h) * np.maximum(K - x[:, 0], 0.0)

    return RewardFunction(fn=fn, growth=K, cap=K, label="put")


def call_reward(strike: float, rate: float, step_size: float) -> RewardFunction:
    """Discounted American call payoff on a single asset (no uniform cap)."""
    K, r, h = float(strike), float(rate), float(step_size)

    def fn(l, x):
        return np.exp(-r * l * h) * np.maximum(x[:, 0] - K, 0.0)

    return RewardFunction(fn=fn, growth=max(K, 1.0), cap=None, label="call")


def hat_reward(width: float) -> RewardFunction:
    """Undiscounted tent payoff max(width - |x|, 0), any step."""
    c = float(width)

    def fn(l, x):
        return np.maximum(c - np.linalg.norm(x, axis=-1), 0.0)

    return RewardFunction(fn=fn, growth=c, cap=c, label="hat")
