"""Markov chain models for the underlying dynamics.

Two concrete chains are provided: exact multi-asset geometric Brownian
motion (lognormal one-step and multi-step densities) and the Euler
discretization of a general SDE ``dX = b(X)dt + sigma(X)dW`` (Gaussian
one-step density with mean ``x + b(x)h`` and covariance ``h sigma sigma^T``).
All densities are handled in log space throughout; ``-inf`` encodes a
density of zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import CapabilityError, DensityError, SimulationError
from .rng import SeedRecord, as_seed_record, path_noise
from ._kernels import GaussianFactors

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class PathSet:
    """N simulated trajectories over L+1 steps in d dimensions.

    ``values`` has shape (n_paths, n_steps + 1, dimension) and is frozen
    (read-only) after construction. ``values[n, 0] == x0`` for every path.
    Regenerating with the same ``seed_record`` reproduces the array bit
    for bit.
    """

    values: np.ndarray
    x0: np.ndarray
    step_size: Optional[float]
    seed_record: SeedRecord

    @property
    def n_paths(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1] - 1

    @property
    def dimension(self) -> int:
        return self.values.shape[2]

    def states(self, l: int) -> np.ndarray:
        """All path states at step l, shape (n_paths, dimension)."""
        return self.values[:, l, :]

    def save(self, path):
        np.savez_compressed(
            path,
            values=self.values,
            x0=self.x0,
            step_size=np.nan if self.step_size is None else self.step_size,
            seed=self.seed_record.seed,
            stream_kind=self.seed_record.kind,
        )

    @classmethod
    def load(cls, path) -> "PathSet":
        with np.load(path) as f:
            h = float(f["step_size"])
            values = f["values"]
            values.flags.writeable = False
            return cls(
                values=values,
                x0=f["x0"],
                step_size=None if np.isnan(h) else h,
                seed_record=SeedRecord(int(f["seed"]), str(f["stream_kind"])),
            )


class ChainModel:
    """One-step sampler plus one-step (log-)transition density.

    Subclasses must be immutable after construction; density evaluation is
    pure and reentrant. ``has_exact_multistep_density`` advertises whether
    ``log_multistep_density`` is available (true for GBM only).
    """

    dimension: int
    step_size: Optional[float]
    noise_dim: int
    has_exact_multistep_density: bool = False

    def step_from_noise(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Advance states (n, d) one step using standard-normal noise (n, m)."""
        raise NotImplementedError

    def log_density(self, y, x):
        """log p(y | x) for paired states; shapes (d,) or (n, d)."""
        raise NotImplementedError

    def log_density_matrix(self, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
        """Cross matrix log p(ys[j] | xs[m]), shape (len(ys), len(xs))."""
        ys = np.atleast_2d(ys)
        xs = np.atleast_2d(xs)
        out = np.empty((ys.shape[0], xs.shape[0]))
        for m in range(xs.shape[0]):
            out[:, m] = self.log_density(ys, np.broadcast_to(xs[m], ys.shape))
        return out

    def gaussian_factors(self, ys: np.ndarray, xs: np.ndarray) -> Optional[GaussianFactors]:
        """Rank-factored form of the cross density matrix, if the one-step
        kernel is Gaussian with state-independent covariance. None otherwise."""
        return None

    def log_multistep_density(self, l: int, ys, x0):
        raise CapabilityError(
            f"{type(self).__name__} has no exact multi-step density; "
            "use the Chapman-Kolmogorov mesh estimate instead"
        )


def _as_states(x, d):
    arr = np.asarray(x, dtype=float)
    squeeze = arr.ndim == 1
    arr = np.atleast_2d(arr)
    if arr.shape[-1] != d:
        raise ValueError(f"state dimension mismatch: expected {d}, got {arr.shape[-1]}")
    return arr, squeeze


class GbmModel(ChainModel):
    """Multi-asset geometric Brownian motion sampled exactly on the step grid.

    Each coordinate follows ``X_t = X_0 exp(sigma W_t + (r - delta - sigma^2/2) t)``;
    coordinates are driven by Brownian motions with the given correlation
    matrix (identity by default). Both the one-step and the l-step
    transition densities are lognormal and available in closed form.

    Parameters
    ----------
    rate : float
        Risk-free drift r (per year).
    sigma : float or array (d,)
        Volatility per coordinate, all entries > 0.
    step_size : float
        Time step h between consecutive chain indices.
    dividend : float
        Continuous dividend yield; enters the drift as r - delta.
    correlation : array (d, d), optional
        Correlation of the driving Brownian motions.
    """

    has_exact_multistep_density = True

    def __init__(self, rate, sigma, step_size, dividend=0.0, correlation=None):
        sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
        if np.any(sigma <= 0):
            raise ValueError("all volatilities must be positive")
        if step_size <= 0:
            raise ValueError("step_size must be positive")
        self.rate = float(rate)
        self.dividend = float(dividend)
        self.sigma = sigma
        self.step_size = float(step_size)
        self.dimension = int(sigma.size)
        self.noise_dim = self.dimension
        d = self.dimension
        if correlation is None:
            corr = np.eye(d)
        else:
            corr = np.asarray(correlation, dtype=float)
            if corr.shape != (d, d) or not np.allclose(corr, corr.T):
                raise ValueError("correlation must be a symmetric (d, d) matrix")
        self._corr_chol = np.linalg.cholesky(corr)
        # covariance of the log-increment over one step of length h
        self._sig_outer = np.outer(sigma, sigma) * corr
        self._drift = (self.rate - self.dividend - 0.5 * sigma**2)

    def step_from_noise(self, x, z):
        xi = z @ self._corr_chol.T
        h = self.step_size
        return x * np.exp(self._drift * h + np.sqrt(h) * self.sigma * xi)

    def _log_density_horizon(self, ys, xs, tau):
        d = self.dimension
        ys, squeeze = _as_states(ys, d)
        xs, _ = _as_states(xs, d)
        ys, xs = np.broadcast_arrays(ys, xs)
        if np.any(xs <= 0):
            raise DensityError("GBM density conditioned on a nonpositive state")
        out = np.full(ys.shape[0], -np.inf)
        ok = np.all(ys > 0, axis=-1)
        if np.any(ok):
            cov = tau * self._sig_outer
            chol = np.linalg.cholesky(cov)
            w = np.log(ys[ok]) - np.log(xs[ok]) - self._drift * tau
            zsol = np.linalg.solve(chol, w.T).T
            quad = np.einsum("ni,ni->n", zsol, zsol)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
            out[ok] = (
                -0.5 * quad
                - 0.5 * (d * LOG_2PI + logdet)
                - np.sum(np.log(ys[ok]), axis=-1)
            )
        return out[0] if squeeze else out

    def log_density(self, y, x):
        return self._log_density_horizon(y, x, self.step_size)

    def log_multistep_density(self, l, ys, x0):
        if l < 1:
            raise ValueError("l must be >= 1")
        return self._log_density_horizon(ys, x0, l * self.step_size)

    def log_density_matrix(self, ys, xs):
        f = self.gaussian_factors(ys, xs)
        return f.ay[:, None] + f.bx[None, :] + f.gy @ f.gx.T

    def gaussian_factors(self, ys, xs):
        ys, _ = _as_states(ys, self.dimension)
        xs, _ = _as_states(xs, self.dimension)
        if np.any(ys <= 0) or np.any(xs <= 0):
            raise DensityError("GBM factored density requires positive states")
        h = self.step_size
        chol = np.linalg.cholesky(h * self._sig_outer)
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        w = np.log(ys)
        mu = np.log(xs) + self._drift * h
        gy = np.linalg.solve(chol, w.T).T
        gx = np.linalg.solve(chol, mu.T).T
        const = -0.5 * (self.dimension * LOG_2PI + logdet)
        ay = const - 0.5 * np.einsum("ni,ni->n", gy, gy) - np.sum(w, axis=-1)
        bx = -0.5 * np.einsum("ni,ni->n", gx, gx)
        return GaussianFactors.centered(gy, gx, ay, bx)


@dataclass(frozen=True)
class SdeModel:
    """Coefficients of ``dX = b(X)dt + sigma(X)dW`` with vectorized callables.

    ``drift`` maps states (n, d) to (n, d); ``diffusion`` maps (n, d) to
    (n, d, m). ``lipschitz`` optionally records user-declared Lipschitz
    bounds for diagnostics; it is never used in computation.
    """

    drift: Callable[[np.ndarray], np.ndarray]
    diffusion: Callable[[np.ndarray], np.ndarray]
    dimension: int
    noise_dim: int
    lipschitz: dict = field(default_factory=dict)


class EulerChain(ChainModel):
    """Euler scheme for an SdeModel on a uniform grid with step h.

    One step: ``X' = X + b(X)h + sigma(X) sqrt(h) Z`` with Z standard
    normal in R^m. The one-step density is Gaussian with mean
    ``x + b(x)h`` and covariance ``h Sigma(x)``, ``Sigma = sigma sigma^T``,
    which must be positive definite wherever the density is evaluated.

    Set ``constant_diffusion=True`` when sigma does not depend on the
    state; this unlocks a much faster factored density path.  The flag is
    verified at two probe points on construction.
    """

    def __init__(self, sde: SdeModel, step_size: float, constant_diffusion: bool = False):
        if step_size <= 0:
            raise ValueError("step_size must be positive")
        self.sde = sde
        self.step_size = float(step_size)
        self.dimension = sde.dimension
        self.noise_dim = sde.noise_dim
        self.constant_diffusion = bool(constant_diffusion)
        self._const_sig = None
        if self.constant_diffusion:
            d = self.dimension
            probes = np.vstack([np.zeros(d), np.ones(d)])
            sig = np.asarray(sde.diffusion(probes), dtype=float)
            if not np.allclose(sig[0], sig[1], rtol=0, atol=1e-12):
                raise ValueError("diffusion marked constant but varies between probe points")
            self._const_sig = sig[0]

    def _drift_at(self, x):
        b = np.asarray(self.sde.drift(x), dtype=float)
        if b.shape != x.shape:
            raise ValueError(f"drift returned shape {b.shape}, expected {x.shape}")
        return b

    def _diffusion_at(self, x):
        if self._const_sig is not None:
            return np.broadcast_to(self._const_sig, x.shape + (self.noise_dim,))
        s = np.asarray(self.sde.diffusion(x), dtype=float)
        if s.shape != x.shape + (self.noise_dim,):
            raise ValueError(
                f"diffusion returned shape {s.shape}, expected {x.shape + (self.noise_dim,)}"
            )
        return s

    def step_from_noise(self, x, z):
        h = self.step_size
        b = self._drift_at(x)
        s = self._diffusion_at(x)
        return x + b * h + np.sqrt(h) * np.einsum("ndm,nm->nd", s, z)

    def log_density(self, y, x):
        d = self.dimension
        ys, squeeze = _as_states(y, d)
        xs, _ = _as_states(x, d)
        ys, xs = np.broadcast_arrays(ys, xs)
        xs = np.ascontiguousarray(xs)
        h = self.step_size
        mean = xs + h * self._drift_at(xs)
        sig = self._diffusion_at(xs)
        cov = h * np.einsum("nim,njm->nij", sig, sig)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as e:
            raise DensityError("sigma sigma^T is singular at a conditioning point") from e
        diff = ys - mean
        zsol = np.linalg.solve(chol, diff[..., None])[..., 0]
        quad = np.einsum("ni,ni->n", zsol, zsol)
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
        out = -0.5 * (quad + d * LOG_2PI + logdet)
        return out[0] if squeeze else out

    def log_density_matrix(self, ys, xs):
        if self._const_sig is not None:
            f = self.gaussian_factors(ys, xs)
            return f.ay[:, None] + f.bx[None, :] + f.gy @ f.gx.T
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        xs = np.atleast_2d(np.asarray(xs, dtype=float))
        d = self.dimension
        h = self.step_size
        mean = xs + h * self._drift_at(xs)
        sig = self._diffusion_at(xs)
        cov = h * np.einsum("nim,njm->nij", sig, sig)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as e:
            raise DensityError("sigma sigma^T is singular at a conditioning point") from e
        logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=-2, axis2=-1)), axis=-1)
        out = np.empty((ys.shape[0], xs.shape[0]))
        for m in range(xs.shape[0]):
            diff = ys - mean[m]
            zsol = np.linalg.solve(chol[m], diff.T).T
            quad = np.einsum("ji,ji->j", zsol, zsol)
            out[:, m] = -0.5 * (quad + d * LOG_2PI + logdet[m])
        return out

    def gaussian_factors(self, ys, xs):
        if self._const_sig is None:
            return None
        ys, _ = _as_states(ys, self.dimension)
        xs, _ = _as_states(xs, self.dimension)
        h = self.step_size
        cov = h * (self._const_sig @ self._const_sig.T)
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as e:
            raise DensityError("constant sigma sigma^T is singular") from e
        logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        mean = xs + h * self._drift_at(xs)
        gy = np.linalg.solve(chol, ys.T).T
        gx = np.linalg.solve(chol, mean.T).T
        const = -0.5 * (self.dimension * LOG_2PI + logdet)
        ay = const - 0.5 * np.einsum("ni,ni->n", gy, gy)
        bx = -0.5 * np.einsum("ni,ni->n", gx, gx)
        return GaussianFactors.centered(gy, gx, ay, bx)


def simulate_paths(model: ChainModel, x0, L: int, N: int, seed) -> PathSet:
    """Simulate N paths of the chain over L steps from x0.

    Path n consumes only the stream keyed by (seed, n), so the result is
    independent of N and of any parallel split over paths.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    if L < 0:
        raise ValueError("L must be >= 0")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (model.dimension,):
        raise ValueError(f"x0 must have shape ({model.dimension},), got {x0.shape}")
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    record = as_seed_record(seed)
    values = np.empty((N, L + 1, model.dimension))
    values[:, 0, :] = x0
    if L > 0:
        noise = path_noise(record, N, L, model.noise_dim)
        for l in range(L):
            values[:, l + 1, :] = model.step_from_noise(values[:, l, :], noise[:, l, :])
            bad = ~np.isfinite(values[:, l + 1, :])
            if np.any(bad):
                n_bad = int(np.argwhere(np.any(bad, axis=-1))[0, 0])
                raise SimulationError(
                    f"non-finite state at path {n_bad}, step {l + 1}"
                )
    values.flags.writeable = False
    return PathSet(values=values, x0=x0, step_size=model.step_size, seed_record=record)


def log_density(model: ChainModel, y, x):
    """Natural log of the one-step transition density p(y | x)."""
    return model.log_density(y, x)


def log_multistep_density(model: ChainModel, l: int, y, x0):
    """Natural log of the l-step transition density, exact models only."""
    if not model.has_exact_multistep_density:
        return model.log_multistep_density(l, y, x0)  # raises CapabilityError
    return model.log_multistep_density(l, y, x0)


# ---------------------------------------------------------------------------
# assumption diagnostics


@dataclass
class AssumptionReport:
    """Empirical checks of the growth and Gaussian-domination assumptions.

    Diagnostic only: violations are listed, nothing is raised. ``c_z`` is
    the largest no-intercept regression slope of the running future max
    |Z| against 1 + |Z_l| over all steps. ``ap_max_ratio`` is the largest
    observed ratio of the transition density to the Gaussian envelope
    ``kappa (2 pi alpha l h)^(-d/2) exp(-|x-y|^2 / (2 alpha l h))``.
    """

    c_z: float
    c_z_by_step: np.ndarray
    ap_alpha: float
    ap_kappa: float
    ap_max_ratio: float
    ap_violations: int
    n_density_samples: int
    notes: list

    def __str__(self):
        lines = [
            f"c_Z estimate: {self.c_z:.4g}",
            f"(AP) envelope: alpha={self.ap_alpha:.4g} kappa={self.ap_kappa:.4g} "
            f"max ratio={self.ap_max_ratio:.4g} "
            f"violations={self.ap_violations}/{self.n_density_samples}",
        ]
        lines += [f"note: {n}" for n in self.notes]
        return "\n".join(lines)


def _default_ap_alpha(model: ChainModel, paths: PathSet) -> float:
    # scale of one-step squared displacement per unit time, from the paths
    inc = np.diff(paths.values, axis=1)
    if inc.size == 0:
        return 1.0
    ms = float(np.mean(np.sum(inc**2, axis=-1)))
    h = model.step_size or 1.0
    return max(ms / (model.dimension * h), 1e-12)


def check_assumptions(model: ChainModel, paths: PathSet, alpha=None, kappa=None,
                      n_samples=500, seed=0) -> AssumptionReport:
    """Estimate the growth constant c_Z and probe the Gaussian domination
    of the transition densities at randomly sampled (x, y, l) triples."""
    if paths.n_paths < 1:
        raise ValueError("paths must be nonempty")
    notes = []
    Z = paths.values
    L = paths.n_steps
    norms = np.linalg.norm(Z, axis=-1)  # (N, L+1)
    run_max = np.maximum.accumulate(norms[:, ::-1], axis=1)[:, ::-1]
    slopes = np.empty(L + 1)
    for l in range(L + 1):
        pred = 1.0 + norms[:, l]
        slopes[l] = float(np.dot(run_max[:, l], pred) / np.dot(pred, pred))
    c_z = float(np.max(slopes))

    h = model.step_size or 1.0
    d = model.dimension
    if alpha is None:
        alpha = _default_ap_alpha(model, paths)
    rng = np.random.default_rng(seed)
    ratios = []
    if L >= 1:
        max_lag = L if model.has_exact_multistep_density else 1
        for _ in range(n_samples):
            lag = int(rng.integers(1, max_lag + 1))
            l0 = int(rng.integers(0, L - lag + 1))
            i = int(rng.integers(0, paths.n_paths))
            j = int(rng.integers(0, paths.n_paths))
            x = Z[i, l0]
            y = Z[j, l0 + lag]
            if lag == 1:
                logp = float(model.log_density(y, x))
            else:
                logp = float(model.log_multistep_density(lag, y, x))
            t = alpha * lag * h
            log_env = -0.5 * d * np.log(2 * np.pi * t) - np.sum((x - y) ** 2) / (2 * t)
            ratios.append(np.exp(logp - log_env))
    ratios = np.asarray(ratios) if ratios else np.zeros(0)
    max_ratio = float(ratios.max()) if ratios.size else 0.0
    if kappa is None:
        kappa = 2.0 * max_ratio if max_ratio > 0 else 1.0
        notes.append("kappa defaulted to 2x the empirical max ratio")
    violations = int(np.sum(ratios > kappa))
    if violations:
        notes.append(f"(AP) envelope exceeded at {violations} sampled triples")
    if not np.all(np.isfinite(slopes)):
        notes.append("non-finite c_Z regression slope")
    return AssumptionReport(
        c_z=c_z,
        c_z_by_step=slopes,
        ap_alpha=float(alpha),
        ap_kappa=float(kappa),
        ap_max_ratio=max_ratio,
        ap_violations=violations,
        n_density_samples=int(ratios.size),
        notes=notes,
    )


# ---------------------------------------------------------------------------
# named coefficient functions for config files


def make_drift(spec: str, dimension: int):
    """Build a named drift: 'zero', 'const:c', or 'ou:theta' (b = -theta x)."""
    name, _, arg = spec.partition(":")
    if name == "zero":
        return lambda x: np.zeros_like(x)
    if name == "const":
        c = float(arg)
        return lambda x: np.full_like(x, c)
    if name == "ou":
        theta = float(arg)
        return lambda x: -theta * x
    raise ValueError(f"unknown drift spec {spec!r}")


def make_diffusion(spec: str, dimension: int, noise_dim: int):
    """Build a named diffusion: 'const:c' (c on the diagonal) or
    'sine:a,b' (d = 1 only, sigma(x) = a + b sin x)."""
    name, _, arg = spec.partition(":")
    if name == "const":
        c = float(arg)
        base = c * np.eye(dimension, noise_dim)

        def diffusion(x):
            return np.broadcast_to(base, x.shape + (noise_dim,))

        return diffusion, True
    if name == "sine":
        if dimension != 1 or noise_dim != 1:
            raise ValueError("sine diffusion is one-dimensional")
        a, b = (float(v) for v in arg.split(","))

        def diffusion(x):
            return (a + b * np.sin(x))[..., None]

        return diffusion, False
    raise ValueError(f"unknown diffusion spec {spec!r}")
