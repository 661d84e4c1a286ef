"""Suboptimal stopping rules from a mesh value surface, evaluated as
unbiased lower bounds on a fresh, independently seeded set of paths.

Two continuation estimators are provided. The direct variant evaluates
the mesh weight formula at the query state; the k-nearest-neighbor
variant averages the weight rows of the k closest training points, which
(row averaging being linear) equals the average of their precomputed
training continuation values. Stopping uses ``g >= continuation``: ties
go to stopping.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from . import _kernels
from .errors import ConfigError, ContaminationError
from .mesh import MeshValue
from .models import ChainModel, PathSet, simulate_paths
from .rewards import RewardFunction, check_reward_values
from .rng import as_seed_record

_BRUTE_FORCE_DIM = 16  # exact tree below this, exact brute force above


@dataclass(frozen=True)
class LowerBoundEstimate:
    """Monte Carlo value of a stopping rule on independent test paths."""

    mean: float
    std_error: float
    n_test: int
    stop_histogram: np.ndarray  # counts per stopping step, length L+1
    label: str = ""

    def __post_init__(self):
        assert int(self.stop_histogram.sum()) == self.n_test


class ContinuationEstimator:
    """Maps (step, state) to an estimated continuation value.

    Pure: the same (l, x) always yields the same value, and only training
    data for steps >= l is consulted, so the induced rule is a genuine
    stopping time.
    """

    def __init__(self, paths: PathSet, mesh: MeshValue, model: ChainModel,
                 variant: str = "direct", k: Optional[int] = None):
        if mesh.n_paths != paths.n_paths or mesh.n_steps != paths.n_steps:
            raise ValueError("mesh and paths disagree on N or L")
        if variant not in ("direct", "knn"):
            raise ValueError(f"unknown variant {variant!r}")
        if variant == "knn":
            if k is None or k < 1:
                raise ConfigError("knn variant needs k >= 1")
            if k > paths.n_paths:
                raise ConfigError(f"k={k} exceeds the number of training paths {paths.n_paths}")
        self.paths = paths
        self.mesh = mesh
        self.model = model
        self.variant = variant
        self.k = k
        self._trees: dict = {}

    @property
    def n_steps(self) -> int:
        return self.paths.n_steps

    def _tree(self, l: int):
        if l not in self._trees:
            pts = self.paths.states(l)
            self._trees[l] = cKDTree(pts) if pts.shape[1] <= _BRUTE_FORCE_DIM else pts
        return self._trees[l]

    def _neighbors(self, l: int, x: np.ndarray) -> np.ndarray:
        tree = self._tree(l)
        if isinstance(tree, cKDTree):
            _, idx = tree.query(x, k=self.k)
        else:
            d2 = np.sum((x[:, None, :] - tree[None, :, :]) ** 2, axis=-1)
            idx = np.argpartition(d2, self.k - 1, axis=1)[:, : self.k]
        return np.atleast_2d(idx.reshape(x.shape[0], self.k))

    def continuation(self, l: int, x) -> np.ndarray:
        """Estimated continuation value at states x, shape (n, d) -> (n,)."""
        if not 0 <= l < self.n_steps:
            raise ValueError(f"step {l} outside [0, {self.n_steps})")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.variant == "direct":
            return _kernels.continuation_at_targets(
                self.model,
                self.paths.states(l + 1),
                self.mesh.values[:, l + 1],
                self.mesh.log_denominators[l],
                x,
            )
        idx = self._neighbors(l, x)
        return self.mesh.continuation[:, l][idx].mean(axis=1)


def continuation_direct(est: ContinuationEstimator, l: int, x) -> np.ndarray:
    """Mesh-weight continuation at arbitrary states (direct variant)."""
    if est.variant != "direct":
        raise ConfigError("estimator is not the direct variant")
    return est.continuation(l, x)


def continuation_knn(est: ContinuationEstimator, l: int, x) -> np.ndarray:
    """Average of the k nearest training weight rows applied to the mesh."""
    if est.variant != "knn":
        raise ConfigError("estimator is not the knn variant")
    return est.continuation(l, x)


def evaluate_stopping_rule(continuation_fn, reward: RewardFunction, model: ChainModel,
                           x0, L: int, n_test: int, seed,
                           train_seed=None, label: str = "") -> LowerBoundEstimate:
    """Simulate fresh paths and stop at the first l with g_l >= continuation.

    The terminal step always stops. The seed must differ from the training
    seed record: a collision would bias the bound and raises instead.
    """
    record = as_seed_record(seed)
    if train_seed is not None and record == train_seed:
        raise ContaminationError(
            "test seed equals the training seed record; lower bounds need "
            "independent trajectories"
        )
    test = simulate_paths(model, x0, L, n_test, record)
    states = test.values
    value = np.empty(n_test)
    stop_step = np.full(n_test, L, dtype=np.int64)
    alive = np.arange(n_test)
    for l in range(L):
        if alive.size == 0:
            break
        x = states[alive, l, :]
        g = reward(l, x)
        check_reward_values(g, l)
        stop = g >= continuation_fn(l, x)
        hit = alive[stop]
        value[hit] = g[stop]
        stop_step[hit] = l
        alive = alive[~stop]
    if alive.size:
        g = reward(L, states[alive, L, :])
        check_reward_values(g, L)
        value[alive] = g
    hist = np.bincount(stop_step, minlength=L + 1)
    se = float(np.std(value, ddof=1) / np.sqrt(n_test)) if n_test > 1 else 0.0
    return LowerBoundEstimate(
        mean=float(np.mean(value)),
        std_error=se,
        n_test=n_test,
        stop_histogram=hist,
        label=label,
    )


def evaluate_lower_bound(est: ContinuationEstimator, reward: RewardFunction,
                         model: ChainModel, n_test: int, seed) -> LowerBoundEstimate:
    """Lower bound for the mesh-induced policy on independent paths."""
    return evaluate_stopping_rule(
        est.continuation,
        reward,
        model,
        est.paths.x0,
        est.n_steps,
        n_test,
        seed,
        train_seed=est.paths.seed_record,
        label=f"wsm-{est.variant}",
    )
