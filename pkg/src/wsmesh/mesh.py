"""Weighted stochastic mesh: likelihood weights with Chapman-Kolmogorov
normalization, the truncated backward dynamic program, theory-driven
parameter selection, and the second-moment diagnostic of the weight ratio.

The backward induction values a discrete optimal stopping problem on the
simulated grid: at each step the continuation value at a grid point is a
convex combination of next-step values with weights
``p(Z_{l+1}^(j) | Z_l^(i)) / sum_m p(Z_{l+1}^(j) | Z_l^(m))``, renormalized
to sum to one, and the value is zeroed outside the ball of radius R around
the start point. At the root all parents coincide with x0, so the weights
collapse to 1/N exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .errors import CapabilityError, DegenerateDenominatorError, ParameterSelectionError
from .models import ChainModel, PathSet
from .rewards import RewardFunction, check_reward_values


@dataclass(frozen=True)
class Truncation:
    """Ball |z - x0| <= radius outside which mesh values are zeroed.

    ``radius=inf`` disables truncation (the default in practical runs).
    """

    radius: float = np.inf

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("truncation radius must be positive")


@dataclass(frozen=True)
class WeightRow:
    """Mesh weights of one grid point over all next-step grid points."""

    step: int
    row: int
    log_numerators: np.ndarray  # log p(y_j | x_row) - log D_j
    weights: np.ndarray  # normalized to sum exactly 1


@dataclass(frozen=True)
class MeshValue:
    """Value surface of the truncated backward dynamic program.

    ``values[n, l]`` approximates the stopping value at grid point
    Z_l^(n); column 0 is the root value at x0. ``continuation[n, l]`` is
    the pre-max weighted continuation for l < L, kept so policies can be
    built without repeating the N^2 passes. ``log_denominators[l, j]`` is
    ``log sum_m p(Z_{l+1}^(j) | Z_l^(m))``.
    """

    values: np.ndarray  # (N, L+1)
    u0: float
    truncation: Truncation
    cap: Optional[float]
    continuation: np.ndarray  # (N, L)
    log_denominators: np.ndarray  # (L, N)

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1] - 1

    def save(self, path):
        """Versioned binary artifact: header, dimensions, row-major arrays."""
        n, lp1 = self.values.shape
        cap = np.nan if self.cap is None else float(self.cap)
        with open(path, "wb") as fh:
            fh.write(b"WSMESHV\x00")
            fh.write(struct.pack("<IQQ", 1, n, lp1 - 1))
            fh.write(struct.pack("<ddd", self.u0, self.truncation.radius, cap))
            fh.write(np.ascontiguousarray(self.values).tobytes())
            fh.write(np.ascontiguousarray(self.continuation).tobytes())
            fh.write(np.ascontiguousarray(self.log_denominators).tobytes())

    @classmethod
    def load(cls, path) -> "MeshValue":
        with open(path, "rb") as fh:
            magic = fh.read(8)
            if magic != b"WSMESHV\x00":
                raise ValueError(f"not a mesh artifact (magic {magic!r})")
            version, n, L = struct.unpack("<IQQ", fh.read(20))
            if version != 1:
                raise ValueError(f"unsupported mesh artifact version {version}")
            u0, radius, cap = struct.unpack("<ddd", fh.read(24))

            def arr(shape):
                count = int(np.prod(shape))
                a = np.frombuffer(fh.read(count * 8), dtype="<f8", count=count).reshape(shape)
                a = a.copy()
                a.flags.writeable = False
                return a

            values = arr((n, L + 1))
            continuation = arr((n, L))
            log_d = arr((L, n))
        return cls(
            values=values,
            u0=u0,
            truncation=Truncation(radius),
            cap=None if np.isnan(cap) else cap,
            continuation=continuation,
            log_denominators=log_d,
        )


def _ck_log_denominators_factored(f: _kernels.GaussianFactors) -> np.ndarray:
    J, M = f.gy.shape[0], f.gx.shape[0]
    gy_ext = np.ascontiguousarray(np.hstack([f.gy, np.ones((J, 1))]))
    gx_ext = np.ascontiguousarray(np.hstack([f.gx, f.bx[:, None]]))
    log_d = np.empty(J)
    B = _kernels._block_rows(M)
    for j0 in range(0, J, B):
        sl = slice(j0, min(j0 + B, J))
        E = gy_ext[sl] @ gx_ext.T
        rmax = E.max(axis=1)
        K = np.empty(E.shape, dtype=np.float32)
        np.subtract(E, rmax[:, None], out=K, casting="unsafe")
        np.exp(K, out=K)
        log_d[sl] = f.ay[sl] + rmax + np.log(K.sum(axis=1, dtype=np.float64))
    return log_d


def ck_denominators(paths: PathSet, model: ChainModel, l: int) -> np.ndarray:
    """log D_j = log sum_m p(Z_{l+1}^(j) | Z_l^(m)), computed stably."""
    if not 0 <= l < paths.n_steps:
        raise ValueError(f"step {l} outside [0, {paths.n_steps})")
    ys = paths.states(l + 1)
    xs = paths.states(l)
    f = model.gaussian_factors(ys, xs)
    if f is not None:
        return _ck_log_denominators_factored(f)
    return _kernels.ck_log_denominators_generic(model, ys, xs)


def weight_row(paths: PathSet, model: ChainModel, l: int, i: int,
               log_denominators: Optional[np.ndarray] = None) -> WeightRow:
    """Mesh weights of grid point i at step l over all step-l+1 points."""
    if not 0 <= l < paths.n_steps:
        raise ValueError(f"step {l} outside [0, {paths.n_steps})")
    if not 0 <= i < paths.n_paths:
        raise ValueError(f"row {i} outside [0, {paths.n_paths})")
    if log_denominators is None:
        log_denominators = ck_denominators(paths, model, l)
    ys = paths.states(l + 1)
    x = paths.states(l)[i]
    logp = model.log_density(ys, np.broadcast_to(x, ys.shape))
    lam = logp - log_denominators
    norm = logsumexp(lam)
    if not np.isfinite(norm):
        raise DegenerateDenominatorError(f"all weights vanish for row {i} at step {l}")
    w = np.exp(lam - norm)
    w /= w.sum()
    return WeightRow(step=l, row=i, log_numerators=lam, weights=w)


def backward_induction(paths: PathSet, reward: RewardFunction, model: ChainModel,
                       truncation: Optional[Truncation] = None,
                       cap: Optional[float] = None) -> MeshValue:
    """Run the truncated backward dynamic program on the simulated grid.

    Total work is O(N^2 L) density evaluations: the Chapman-Kolmogorov
    denominators are computed once per step and shared across all rows.
    """
    trunc = truncation if truncation is not None else Truncation()
    if cap is None:
        cap = reward.cap
    Z = paths.values
    N, Lp1, _ = Z.shape
    L = Lp1 - 1
    in_ball = np.linalg.norm(Z - paths.x0, axis=-1) <= trunc.radius  # (N, L+1)

    u = np.zeros((N, L + 1))
    continuation = np.zeros((N, max(L, 1)))[:, :L]
    log_d = np.zeros((max(L, 1), N))[:L]

    g = reward(L, Z[:, L, :])
    check_reward_values(g, L)
    u[:, L] = np.where(in_ball[:, L], g, 0.0)

    for l in range(L - 1, 0, -1):
        ld, cont = _kernels.mesh_step(model, Z[:, l + 1, :], Z[:, l, :], u[:, l + 1])
        log_d[l] = ld
        continuation[:, l] = cont
        g = reward(l, Z[:, l, :])
        check_reward_values(g, l)
        u[:, l] = np.where(in_ball[:, l], np.maximum(g, cont), 0.0)

    g0 = reward(0, paths.x0[None, :])
    check_reward_values(g0, 0)
    if L >= 1:
        # all parents equal x0, so D_j = N p(Z_1^(j) | x0) and the weights
        # collapse to 1/N exactly
        logp1 = model.log_density(Z[:, 1, :], np.broadcast_to(paths.x0, Z[:, 1, :].shape))
        log_d[0] = np.log(N) + logp1
        cont0 = float(np.mean(u[:, 1]))
        continuation[:, 0] = cont0
        u0 = max(float(g0[0]), cont0)
    else:
        u0 = float(g0[0])
    u[:, 0] = u0

    u.flags.writeable = False
    continuation.flags.writeable = False
    log_d.flags.writeable = False
    return MeshValue(
        values=u,
        u0=u0,
        truncation=trunc,
        cap=cap,
        continuation=continuation,
        log_denominators=log_d,
    )


@dataclass(frozen=True)
class MeshParameters:
    """Truncation radius and path count meeting an accuracy target."""

    radius: float
    n_paths: int
    log_argument: float


def select_parameters(epsilon: float, d: int, L: int, *, alpha: float, kappa: float,
                      c_g: float, c_z: float, x0) -> MeshParameters:
    """Accuracy-driven choice of (R, N).

    R grows like sqrt(L log(1/eps)) and N like eps^-2 up to the dimension-
    dependent log factor; the proportionality constant in N is taken as 1.
    Both outputs are strictly increasing as epsilon decreases.
    """
    if not 0 < epsilon < 1:
        raise ValueError("epsilon must lie in (0, 1)")
    for name, v in (("alpha", alpha), ("kappa", kappa), ("c_g", c_g), ("c_z", c_z)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    x0_norm = float(np.linalg.norm(np.atleast_1d(np.asarray(x0, dtype=float))))
    A = 1.0 + c_z + c_z * x0_norm + c_z * np.sqrt(d * alpha * L)
    log_arg = L * c_g * kappa * A * 2.0 ** (1.0 + d / 4.0) / epsilon
    if log_arg <= 1.0:
        raise ParameterSelectionError(
            f"log argument {log_arg:.3g} <= 1: epsilon too large for these "
            "constants, choose a smaller epsilon"
        )
    radius = float(np.sqrt(8.0 * alpha * L * np.log(log_arg)))
    n = (
        alpha
        * c_g**2
        * kappa
        * (8.0 * np.e / d) ** (d / 2.0)
        * L ** (d / 2.0 + 3.0)
        * epsilon**-2
        * np.log(log_arg) ** (d / 2.0 + 1.0)
    )
    return MeshParameters(radius=radius, n_paths=int(np.ceil(n)), log_argument=float(log_arg))


def check_mesh_invariants(paths: PathSet, reward: RewardFunction, model: ChainModel,
                          mesh: MeshValue, n_weight_rows: int = 64) -> list:
    """Verify the mesh value surface against its structural contracts.

    Checks, for every grid point: zero outside the truncation ball, value
    at least the reward inside it, and value at most the cap when one is
    supplied. Also re-derives a sample of weight rows and confirms each
    sums to 1 within 1e-12 with all weights in [0, 1]. Returns a list of
    violation strings (empty when clean).
    """
    violations = []
    Z = paths.values
    N, L = paths.n_paths, paths.n_steps
    in_ball = np.linalg.norm(Z - paths.x0, axis=-1) <= mesh.truncation.radius
    u = mesh.values
    outside_bad = np.flatnonzero(np.any((~in_ball) & (u != 0.0), axis=1))
    if outside_bad.size:
        violations.append(f"nonzero value outside the ball on {outside_bad.size} paths")
    for l in range(L + 1):
        g = reward(l, Z[:, l, :])
        low = in_ball[:, l] & (u[:, l] < g - 1e-9)
        if np.any(low):
            violations.append(f"value below reward inside the ball at step {l}")
    if mesh.cap is not None and np.any(u > mesh.cap + 1e-9):
        violations.append("value exceeds the supplied cap")
    if L >= 1:
        rows = np.linspace(0, N - 1, min(n_weight_rows, N)).astype(int)
        for l in range(L):
            for i in rows:
                wr = weight_row(paths, model, l, i, mesh.log_denominators[l])
                s = float(wr.weights.sum())
                if abs(s - 1.0) > 1e-12:
                    violations.append(f"weight row ({l}, {i}) sums to {s!r}")
                if wr.weights.min() < 0 or wr.weights.max() > 1 + 1e-15:
                    violations.append(f"weight row ({l}, {i}) leaves [0, 1]")
    return violations


@dataclass(frozen=True)
class FrEstimate:
    """Monte Carlo estimate of the squared weight-ratio moment F_R^2."""

    fr: float
    fr2_mean: float
    fr2_std_error: float
    n_pairs: int
    radius: float

    def noise_controlled(self, n_paths: int) -> bool:
        """True when (1 + F_R) / sqrt(N) < 1, the mesh error premise."""
        return (1.0 + self.fr) / np.sqrt(n_paths) < 1.0


def estimate_fr(paths: PathSet, model: ChainModel, truncation: Truncation, l: int,
                use_ck_surrogate: bool = False) -> FrEstimate:
    """Estimate F_R^2 = E[ 1{|Z'_{l+1} - x0| <= R} (p(Z'_{l+1}|Z_l) /
    p_{l+1}(Z'_{l+1}|x0))^2 ] over independent path pairs.

    Needs the exact multi-step density; pass ``use_ck_surrogate=True`` to
    substitute the Chapman-Kolmogorov estimate on models without one.
    """
    if not 0 <= l < paths.n_steps:
        raise ValueError(f"step {l} outside [0, {paths.n_steps})")
    if paths.n_paths < 2:
        raise ValueError("need at least two paths to form independent pairs")
    half = paths.n_paths // 2
    xs = paths.states(l)[:half]
    ys = paths.states(l + 1)[half : 2 * half]
    logp = model.log_density(ys, xs)
    if model.has_exact_multistep_density:
        logq = model.log_multistep_density(l + 1, ys, np.broadcast_to(paths.x0, ys.shape))
    elif use_ck_surrogate:
        logq = ck_denominators(paths, model, l)[half : 2 * half] - np.log(paths.n_paths)
    else:
        raise CapabilityError(
            "exact multi-step density unavailable; pass use_ck_surrogate=True "
            "to use the Chapman-Kolmogorov estimate"
        )
    inside = np.linalg.norm(ys - paths.x0, axis=-1) <= truncation.radius
    vals = np.where(inside, np.exp(2.0 * (logp - logq)), 0.0)
    mean = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(half)) if half > 1 else 0.0
    return FrEstimate(
        fr=float(np.sqrt(max(mean, 0.0))),
        fr2_mean=mean,
        fr2_std_error=se,
        n_pairs=half,
        radius=truncation.radius,
    )
