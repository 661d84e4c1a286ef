"""Regression baselines and reference pricers.

Longstaff-Schwartz (realized-cashflow regression) and Tsitsiklis-Van Roy
(value-function regression) with total-degree monomial bases, plus a CRR
binomial tree for the American put and the Black-Scholes European closed
forms used as sanity oracles.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from itertools import product as _iterprod
from math import comb

import numpy as np
from scipy.stats import norm

from .models import ChainModel, PathSet
from .policy import LowerBoundEstimate, evaluate_stopping_rule
from .rewards import RewardFunction, check_reward_values
from .rng import SeedRecord


@dataclass(frozen=True)
class PolyBasis:
    """All monomials of total degree <= degree in d variables.

    Feature 0 is the constant 1; feature count is C(d + degree, degree).
    """

    degree: int
    dimension: int

    def __post_init__(self):
        if self.degree < 0 or self.dimension < 1:
            raise ValueError("degree must be >= 0 and dimension >= 1")

    @property
    def exponents(self) -> np.ndarray:
        exps = [
            e
            for e in _iterprod(range(self.degree + 1), repeat=self.dimension)
            if sum(e) <= self.degree
        ]
        exps.sort(key=lambda e: (sum(e), e))
        return np.array(exps, dtype=np.int64)

    @property
    def feature_count(self) -> int:
        return comb(self.dimension + self.degree, self.degree)

    def features(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.prod(x[:, None, :] ** self.exponents[None, :, :], axis=-1)


@dataclass(frozen=True)
class RegressionPolicy:
    """Per-step continuation coefficients from a regression fit."""

    betas: np.ndarray  # (L, feature_count)
    basis: PolyBasis
    method: str  # "ls" or "vf"
    x0: np.ndarray
    train_seed: SeedRecord

    @property
    def n_steps(self) -> int:
        return self.betas.shape[0]

    def continuation(self, l: int, x) -> np.ndarray:
        return self.basis.features(x) @ self.betas[l]


def _fit_least_squares(feats: np.ndarray, target: np.ndarray) -> np.ndarray:
    # column scaling to unit RMS for conditioning; minimum-norm solution
    # absorbs rank deficiency (constant states, collinear monomials)
    scale = np.sqrt(np.mean(feats**2, axis=0))
    scale[scale == 0] = 1.0
    beta_s, _, rank, _ = np.linalg.lstsq(feats / scale, target, rcond=None)
    if rank < feats.shape[1]:
        warnings.warn(
            f"rank-deficient regression design ({rank} < {feats.shape[1]}); "
            "using the minimum-norm solution",
            stacklevel=3,
        )
    return beta_s / scale


def fit_ls(paths: PathSet, reward: RewardFunction, basis: PolyBasis,
           in_the_money_only: bool = False) -> RegressionPolicy:
    """Longstaff-Schwartz: regress realized future cashflows on the basis.

    With ``in_the_money_only`` the regression and the exercise decision are
    restricted to paths with positive immediate reward (off by default).
    """
    Z = paths.values
    N, L = paths.n_paths, paths.n_steps
    if N < basis.feature_count:
        raise ValueError("need at least as many paths as basis features")
    betas = np.zeros((L, basis.feature_count))
    cashflow = reward(L, Z[:, L, :])
    check_reward_values(cashflow, L)
    for l in range(L - 1, -1, -1):
        x = Z[:, l, :]
        g = reward(l, x)
        check_reward_values(g, l)
        feats = basis.features(x)
        fit_mask = (g > 0) if in_the_money_only else slice(None)
        if in_the_money_only and not np.any(fit_mask):
            continue
        betas[l] = _fit_least_squares(feats[fit_mask], cashflow[fit_mask])
        exercise = g >= feats @ betas[l]
        if in_the_money_only:
            exercise &= g > 0
        cashflow = np.where(exercise, g, cashflow)
    return RegressionPolicy(betas=betas, basis=basis, method="ls",
                            x0=paths.x0, train_seed=paths.seed_record)


def fit_vf(paths: PathSet, reward: RewardFunction, basis: PolyBasis) -> RegressionPolicy:
    """Tsitsiklis-Van Roy: regress the value iterate max(g, fitted) instead
    of realized cashflows."""
    Z = paths.values
    N, L = paths.n_paths, paths.n_steps
    if N < basis.feature_count:
        raise ValueError("need at least as many paths as basis features")
    betas = np.zeros((L, basis.feature_count))
    value = reward(L, Z[:, L, :])
    check_reward_values(value, L)
    for l in range(L - 1, -1, -1):
        x = Z[:, l, :]
        g = reward(l, x)
        check_reward_values(g, l)
        feats = basis.features(x)
        betas[l] = _fit_least_squares(feats, value)
        value = np.maximum(g, feats @ betas[l])
    return RegressionPolicy(betas=betas, basis=basis, method="vf",
                            x0=paths.x0, train_seed=paths.seed_record)


def evaluate_regression_policy(policy: RegressionPolicy, reward: RewardFunction,
                               model: ChainModel, n_test: int, seed) -> LowerBoundEstimate:
    """Lower bound of the fitted exercise rule on independent paths."""
    return evaluate_stopping_rule(
        policy.continuation,
        reward,
        model,
        policy.x0,
        policy.n_steps,
        n_test,
        seed,
        train_seed=policy.train_seed,
        label=f"{policy.method}-{policy.basis.degree}",
    )


def binomial_american_put(s0, strike, rate, sigma, dividend, maturity, steps) -> float:
    """Cox-Ross-Rubinstein binomial price of an American put.

    Backward induction with early exercise at every node; converges to the
    continuous-time price at rate O(1/steps).
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if sigma <= 0 or maturity <= 0 or s0 <= 0:
        raise ValueError("sigma, maturity and s0 must be positive")
    dt = maturity / steps
    a = sigma * np.sqrt(dt)
    u = np.exp(a)
    d = 1.0 / u
    p = (np.exp((rate - dividend) * dt) - d) / (u - d)
    disc = np.exp(-rate * dt)
    # lattice of attainable prices: s0 * exp(k a), k = -steps..steps
    lattice = s0 * np.exp(a * np.arange(-steps, steps + 1))
    values = np.maximum(strike - lattice[::2], 0.0)
    for i in range(steps - 1, -1, -1):
        values = disc * (p * values[1:] + (1.0 - p) * values[:-1])
        level = lattice[steps - i : steps + i + 1 : 2]
        np.maximum(values, strike - level, out=values)
    return float(values[0])


def _bs_d1_d2(s0, strike, rate, sigma, dividend, maturity):
    st = sigma * np.sqrt(maturity)
    d1 = (np.log(s0 / strike) + (rate - dividend + 0.5 * sigma**2) * maturity) / st
    return d1, d1 - st


def black_scholes_put(s0, strike, rate, sigma, dividend, maturity) -> float:
    """Black-Scholes European put."""
    if sigma <= 0 or maturity <= 0:
        raise ValueError("sigma and maturity must be positive")
    if strike <= 0:
        return 0.0
    d1, d2 = _bs_d1_d2(s0, strike, rate, sigma, dividend, maturity)
    return float(
        strike * np.exp(-rate * maturity) * norm.cdf(-d2)
        - s0 * np.exp(-dividend * maturity) * norm.cdf(-d1)
    )


def black_scholes_call(s0, strike, rate, sigma, dividend, maturity) -> float:
    """Black-Scholes European call."""
    if sigma <= 0 or maturity <= 0:
        raise ValueError("sigma and maturity must be positive")
    if strike <= 0:
        return float(s0 * np.exp(-dividend * maturity) - strike * np.exp(-rate * maturity))
    d1, d2 = _bs_d1_d2(s0, strike, rate, sigma, dividend, maturity)
    return float(
        s0 * np.exp(-dividend * maturity) * norm.cdf(d1)
        - strike * np.exp(-rate * maturity) * norm.cdf(d2)
    )
