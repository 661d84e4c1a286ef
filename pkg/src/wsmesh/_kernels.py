"""Blocked kernels for the N x N likelihood-weight passes.

The hot path exploits Gaussian one-step kernels with state-independent
covariance: the log-density cross matrix factors as
``log p(y_j | x_m) = ay[j] + bx[m] + gy[j] . gx[m]``, so each block is a
small-rank GEMM followed by a single float32 ``exp``. Row shifting by the
row max keeps every exponential in [0, 1]; the same shifted block serves
both the Chapman-Kolmogorov denominators (row sums) and the renormalized
weight reductions (column sums), because the unnormalized weight is
exactly ``K[j, m] / rowsum(K)[j]``. Accumulation across blocks is float64
in fixed block order, so results do not depend on the block size chosen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateDenominatorError

_BLOCK_BYTES = 96 * 1024 * 1024


def _block_rows(n_cols: int) -> int:
    return int(np.clip(_BLOCK_BYTES // max(n_cols * 8, 1), 16, 8192))


@dataclass(frozen=True)
class GaussianFactors:
    """Factored cross log-density: ay[j] + bx[m] + gy[j] . gx[m]."""

    gy: np.ndarray  # (J, k)
    gx: np.ndarray  # (M, k)
    ay: np.ndarray  # (J,)
    bx: np.ndarray  # (M,)

    @classmethod
    def centered(cls, gy, gx, ay, bx) -> "GaussianFactors":
        """Shift both point clouds by their common centroid; keeps the
        exponents of the cross terms small without changing the matrix."""
        c = 0.5 * (gy.mean(axis=0) + gx.mean(axis=0))
        ay = ay + gy @ c - 0.5 * (c @ c)
        bx = bx + gx @ c - 0.5 * (c @ c)
        return cls(gy=gy - c, gx=gx - c, ay=np.asarray(ay), bx=np.asarray(bx))

    def log_entry(self, j, m) -> float:
        return float(self.ay[j] + self.bx[m] + self.gy[j] @ self.gx[m])

    def log_column(self, m) -> np.ndarray:
        """log p(. | x_m) over all j."""
        return self.ay + self.bx[m] + self.gy @ self.gx[m]


def mesh_step_factored(f: GaussianFactors, u_next: np.ndarray):
    """One backward-induction step on a factored kernel.

    Returns ``(log_denominators (J,), continuation (M,))`` where
    continuation[m] is the weight-renormalized average of ``u_next`` under
    the mesh weights of parent m.
    """
    J = f.gy.shape[0]
    M = f.gx.shape[0]
    gy_ext = np.ascontiguousarray(np.hstack([f.gy, np.ones((J, 1))]))
    gx_ext = np.ascontiguousarray(np.hstack([f.gx, f.bx[:, None]]))
    log_d = np.empty(J)
    colsum = np.zeros(M)
    colnum = np.zeros(M)
    B = _block_rows(M)
    K = np.empty((min(B, J), M), dtype=np.float32)
    for j0 in range(0, J, B):
        sl = slice(j0, min(j0 + B, J))
        E = gy_ext[sl] @ gx_ext.T  # (b, M)
        rmax = E.max(axis=1)
        Kb = K[: E.shape[0]]
        np.subtract(E, rmax[:, None], out=Kb, casting="unsafe")
        np.exp(Kb, out=Kb)
        S = Kb.sum(axis=1, dtype=np.float64)  # >= 1: the row max contributes 1
        log_d[sl] = f.ay[sl] + rmax + np.log(S)
        t = (1.0 / S).astype(np.float32)
        ut = (u_next[sl] / S).astype(np.float32)
        colsum += Kb.T @ t
        colnum += Kb.T @ ut
    cont = np.zeros(M)
    ok = colsum > 0
    cont[ok] = colnum[ok] / colsum[ok]
    for m in np.flatnonzero(~ok):  # float32 underflowed a whole column; redo exactly
        logw = f.log_column(m) - log_d
        shift = logw.max()
        w = np.exp(logw - shift)
        cont[m] = (u_next @ w) / w.sum()
    return log_d, cont


def continuation_targets_factored(f: GaussianFactors, u_next, log_d):
    """Renormalized-weight continuation at arbitrary targets.

    ``f`` factors the matrix log p(y_j | target_a); weights are
    ``softmax_j(log p(y_j | target) - log_d[j])`` dotted with ``u_next``.
    """
    J = f.gy.shape[0]
    A = f.gx.shape[0]
    gt_ext = np.ascontiguousarray(np.hstack([f.gx, np.ones((A, 1))]))
    gy_ext = np.ascontiguousarray(np.hstack([f.gy, (f.ay - log_d)[:, None]]))
    u32 = u_next.astype(np.float32)
    cont = np.empty(A)
    ssum = np.empty(A)
    B = _block_rows(J)
    for a0 in range(0, A, B):
        sl = slice(a0, min(a0 + B, A))
        E = gt_ext[sl] @ gy_ext.T  # (b, J)
        rmax = E.max(axis=1)
        K = np.empty(E.shape, dtype=np.float32)
        np.subtract(E, rmax[:, None], out=K, casting="unsafe")
        np.exp(K, out=K)
        s = K.sum(axis=1, dtype=np.float64)
        n = (K @ u32).astype(np.float64)
        cont[sl] = n / s  # s >= 1
        ssum[sl] = s
    return cont


def ck_log_denominators_generic(model, ys, xs):
    """log sum_m p(ys[j] | xs[m]) via blocked log-sum-exp, any model."""
    J = ys.shape[0]
    M = xs.shape[0]
    log_d = np.empty(J)
    B = _block_rows(M)
    for j0 in range(0, J, B):
        sl = slice(j0, min(j0 + B, J))
        log_d[sl] = logsumexp(model.log_density_matrix(ys[sl], xs), axis=1)
    bad = np.flatnonzero(~np.isfinite(log_d) | np.isnan(log_d))
    if bad.size:
        raise DegenerateDenominatorError(
            f"all density summands vanished for grid point {int(bad[0])}; "
            "the paths are inconsistent with the supplied model"
        )
    return log_d


def continuation_targets_generic(model, ys, u_next, log_d, targets):
    """Float64 log-space version of continuation_targets_factored."""
    A = targets.shape[0]
    cont = np.empty(A)
    B = _block_rows(ys.shape[0])
    for a0 in range(0, A, B):
        sl = slice(a0, min(a0 + B, A))
        logw = model.log_density_matrix(ys, targets[sl]).T - log_d[None, :]  # (b, J)
        rmax = logw.max(axis=1)
        W = np.exp(logw - rmax[:, None])
        cont[sl] = (W @ u_next) / W.sum(axis=1)
    return cont


def mesh_step(model, ys, xs, u_next):
    """Dispatch one backward step: factored fast path when available."""
    f = model.gaussian_factors(ys, xs)
    if f is not None:
        return mesh_step_factored(f, u_next)
    log_d = ck_log_denominators_generic(model, ys, xs)
    cont = continuation_targets_generic(model, ys, u_next, log_d, xs)
    return log_d, cont


def continuation_at_targets(model, ys, u_next, log_d, targets):
    """Dispatch continuation evaluation at arbitrary target states."""
    f = model.gaussian_factors(ys, targets)
    if f is not None:
        return continuation_targets_factored(f, u_next, log_d)
    return continuation_targets_generic(model, ys, u_next, log_d, targets)
