"""Experiment orchestration: single runs, Fig-1-style exercise-date sweeps,
convergence-rate sweeps against a quadrature oracle, and cost-model sweeps."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import __version__
from .baselines import (
    PolyBasis,
    binomial_american_put,
    black_scholes_call,
    black_scholes_put,
    evaluate_regression_policy,
    fit_ls,
    fit_vf,
)
from .config import ExperimentConfig, build_model, build_reward, parse_method, step_size
from .errors import CapabilityError, ConfigError
from .expansion import delta_max, density_pn_grid, ratio_decay_check
from .mesh import Truncation, backward_induction, check_mesh_invariants, estimate_fr, select_parameters
from .models import ChainModel, check_assumptions, simulate_paths, _default_ap_alpha
from .policy import ContinuationEstimator, evaluate_lower_bound
from .results import ResultRow, config_digest
from .rewards import RewardFunction

log = logging.getLogger("wsmesh")


def artifact_version(cfg: ExperimentConfig) -> str:
    return f"{__version__}+g{config_digest(cfg.as_dict())}"


def _resolve_truncation(cfg: ExperimentConfig, model, paths, reward) -> Truncation:
    spec = cfg.solver.get("truncation")
    if spec is None or spec == "inf" or spec == np.inf:
        return Truncation()
    if spec == "auto":
        epsilon = float(cfg.solver.get("epsilon", 0.1))
        report = check_assumptions(model, paths)
        alpha = (
            float(np.max(model.sigma)) ** 2
            if hasattr(model, "sigma")
            else _default_ap_alpha(model, paths)
        )
        c_g = reward.growth if reward.growth else 1.0
        sel = select_parameters(
            epsilon, model.dimension, paths.n_steps,
            alpha=alpha, kappa=2.0, c_g=c_g, c_z=max(report.c_z, 1e-6), x0=paths.x0,
        )
        log.info(
            "auto parameters: R=%.4g, theory N=%d (configured n_train=%d)",
            sel.radius, sel.n_paths, paths.n_paths,
        )
        return Truncation(sel.radius)
    return Truncation(float(spec))


def _wsm_run(cfg: ExperimentConfig, variant: str):
    model, x0 = build_model(cfg)
    reward = build_reward(cfg)
    L = int(cfg.solver["steps"])
    n_train = int(cfg.solver["n_train"])
    n_test = int(cfg.solver["n_test"])
    paths = simulate_paths(model, x0, L, n_train, int(cfg.seeds["train"]))
    trunc = _resolve_truncation(cfg, model, paths, reward)
    mesh = backward_induction(paths, reward, model, trunc)
    k = int(cfg.solver.get("neighbors", 500)) if variant == "knn" else None
    est = ContinuationEstimator(paths, mesh, model, variant, k=k)
    lb = evaluate_lower_bound(est, reward, model, n_test, int(cfg.seeds["test"]))
    report = check_assumptions(model, paths)
    log.info("assumption diagnostics:\n%s", report)
    if L >= 1:
        try:
            fr = estimate_fr(paths, model, trunc, max(L // 2 - 1, 0))
            if not fr.noise_controlled(n_train):
                log.warning(
                    "(1 + F_R)/sqrt(N) = %.3g >= 1: mesh noise may dominate",
                    (1.0 + fr.fr) / np.sqrt(n_train),
                )
        except CapabilityError:
            pass
    return paths, reward, model, mesh, lb


def run_experiment(cfg: ExperimentConfig) -> list:
    """Execute one configured method; returns result rows (usually one)."""
    method = cfg.solver.get("method")
    if method is None:
        raise ConfigError("solver.method is required")
    family, degree = parse_method(method)
    version = artifact_version(cfg)
    L = int(cfg.solver["steps"])
    t0 = time.perf_counter()

    if family == "binomial":
        if cfg.model.get("kind") != "gbm" or cfg.reward.get("payoff") != "put":
            raise ConfigError("binomial reference needs a gbm model and a put payoff")
        horizon = L * step_size(cfg)
        price = binomial_american_put(
            float(np.atleast_1d(cfg.model["x0"])[0]),
            float(cfg.reward["strike"]),
            float(cfg.model.get("rate", 0.0)),
            float(cfg.model.get("sigma")),
            float(cfg.model.get("dividend", 0.0)),
            horizon,
            int(cfg.solver.get("tree_steps", 20_000)),
        )
        return [ResultRow(
            method=method, d=1, L=L, n_train=None, n_test=None, k_or_degree=None,
            mean=price, std_error=0.0, mesh_u0=None,
            wall_time_s=time.perf_counter() - t0, seed=None, artifact_version=version,
        )]

    if family == "bs-european":
        if cfg.model.get("kind") != "gbm":
            raise ConfigError("bs-european needs a gbm model")
        horizon = L * step_size(cfg)
        args = (
            float(np.atleast_1d(cfg.model["x0"])[0]),
            float(cfg.reward["strike"]),
            float(cfg.model.get("rate", 0.0)),
            float(cfg.model.get("sigma")),
            float(cfg.model.get("dividend", 0.0)),
            horizon,
        )
        payoff = cfg.reward.get("payoff")
        if payoff == "put":
            price = black_scholes_put(*args)
        elif payoff == "call":
            price = black_scholes_call(*args)
        else:
            raise ConfigError("bs-european needs a put or call payoff")
        return [ResultRow(
            method=method, d=1, L=L, n_train=None, n_test=None, k_or_degree=None,
            mean=price, std_error=0.0, mesh_u0=None,
            wall_time_s=time.perf_counter() - t0, seed=None, artifact_version=version,
        )]

    if "train" not in cfg.seeds or "test" not in cfg.seeds:
        raise ConfigError("seeds.train and seeds.test are required")

    if family in ("wsm-direct", "wsm-knn"):
        variant = family.split("-")[1]
        paths, reward, model, mesh, lb = _wsm_run(cfg, variant)
        k = int(cfg.solver.get("neighbors", 500)) if variant == "knn" else None
        return [ResultRow(
            method=method, d=model.dimension, L=L,
            n_train=paths.n_paths, n_test=lb.n_test, k_or_degree=k,
            mean=lb.mean, std_error=lb.std_error, mesh_u0=mesh.u0,
            wall_time_s=time.perf_counter() - t0,
            seed=int(cfg.seeds["train"]), artifact_version=version,
        )]

    # regression baselines
    model, x0 = build_model(cfg)
    reward = build_reward(cfg)
    n_train = int(cfg.solver["n_train"])
    n_test = int(cfg.solver["n_test"])
    degree = int(cfg.solver.get("degree", degree))
    paths = simulate_paths(model, x0, L, n_train, int(cfg.seeds["train"]))
    basis = PolyBasis(degree=degree, dimension=model.dimension)
    if family == "ls":
        pol = fit_ls(paths, reward, basis,
                     in_the_money_only=bool(cfg.solver.get("in_the_money_only", False)))
    else:
        pol = fit_vf(paths, reward, basis)
    lb = evaluate_regression_policy(pol, reward, model, n_test, int(cfg.seeds["test"]))
    return [ResultRow(
        method=method, d=model.dimension, L=L,
        n_train=n_train, n_test=n_test, k_or_degree=degree,
        mean=lb.mean, std_error=lb.std_error, mesh_u0=None,
        wall_time_s=time.perf_counter() - t0,
        seed=int(cfg.seeds["train"]), artifact_version=version,
    )]


def run_with_invariant_check(cfg: ExperimentConfig) -> tuple:
    """run_experiment for a wsm method, returning (rows, violations)."""
    family, _ = parse_method(cfg.solver["method"])
    if family not in ("wsm-direct", "wsm-knn"):
        return run_experiment(cfg), []
    t0 = time.perf_counter()
    variant = family.split("-")[1]
    paths, reward, model, mesh, lb = _wsm_run(cfg, variant)
    violations = check_mesh_invariants(paths, reward, model, mesh)
    k = int(cfg.solver.get("neighbors", 500)) if variant == "knn" else None
    rows = [ResultRow(
        method=cfg.solver["method"], d=model.dimension, L=paths.n_steps,
        n_train=paths.n_paths, n_test=lb.n_test, k_or_degree=k,
        mean=lb.mean, std_error=lb.std_error, mesh_u0=mesh.u0,
        wall_time_s=time.perf_counter() - t0,
        seed=int(cfg.seeds["train"]), artifact_version=artifact_version(cfg),
    )]
    return rows, violations


def sweep_exercise_dates(cfg: ExperimentConfig, l_values, methods=None, jobs: int = 1) -> list:
    """One run per (L, method): the exercise-date stability table."""
    l_values = list(l_values)
    if not l_values:
        raise ConfigError("sweep needs at least one L value")
    methods = list(methods) if methods else [cfg.solver["method"]]
    tasks = [
        cfg.with_solver(steps=int(L), method=m)
        for L in l_values
        for m in methods
    ]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(run_experiment, tasks))
    else:
        results = [run_experiment(t) for t in tasks]
    return [row for rows in results for row in rows]


def snell_quadrature_1d(model: ChainModel, reward: RewardFunction, x0, L: int,
                        lo: float, hi: float, n_nodes: int = 4001) -> float:
    """Dense-grid quadrature value of the 1D discrete stopping problem.

    Independent of the mesh machinery: backward induction on a uniform
    grid with trapezoid weights against the model's one-step density.
    """
    if model.dimension != 1:
        raise ConfigError("quadrature oracle is one-dimensional")
    x = np.linspace(lo, hi, n_nodes)[:, None]
    dx = float(x[1, 0] - x[0, 0])
    wts = np.full(n_nodes, dx)
    wts[0] = wts[-1] = dx / 2.0
    kernel = np.exp(model.log_density_matrix(x, x))  # [j, i] = p(x_j | x_i)
    kernel = kernel * wts[:, None]
    v = reward(L, x)
    for l in range(L - 1, 0, -1):
        cont = kernel.T @ v
        v = np.maximum(reward(l, x), cont)
    p0 = np.exp(model.log_density(x, np.broadcast_to(np.atleast_1d(x0), x.shape)))
    cont0 = float(np.sum(p0 * wts * v))
    g0 = float(reward(0, np.atleast_2d(x0))[0])
    return max(g0, cont0)


@dataclass(frozen=True)
class ConvergenceReport:
    n_values: np.ndarray
    mean_abs_error: np.ndarray
    oracle: float
    n_seeds: int
    slope: Optional[float]
    slope_ci95: Optional[float]
    insufficient: bool

    def as_dict(self) -> dict:
        return {
            "n_values": [int(n) for n in self.n_values],
            "mean_abs_error": [float(e) for e in self.mean_abs_error],
            "oracle": self.oracle,
            "n_seeds": self.n_seeds,
            "slope": self.slope,
            "slope_ci95": self.slope_ci95,
            "insufficient": self.insufficient,
        }


def sweep_convergence(cfg: ExperimentConfig, n_values, n_seeds: int = 20,
                      oracle_nodes: int = 4001) -> ConvergenceReport:
    """Mesh root-value error against the quadrature oracle as N grows.

    Fits the log-log slope of the mean absolute error over ``n_seeds``
    independent mesh runs per N. A single N yields no slope and the
    report is marked insufficient.
    """
    n_values = [int(n) for n in n_values]
    if not n_values:
        raise ConfigError("sweep needs at least one N value")
    model, x0 = build_model(cfg)
    reward = build_reward(cfg)
    L = int(cfg.solver["steps"])
    trunc_spec = cfg.solver.get("truncation")
    trunc = Truncation() if trunc_spec in (None, "inf") else Truncation(float(trunc_spec))
    h = model.step_size or 1.0
    pilot = simulate_paths(model, x0, L, 2000, int(cfg.seeds.get("train", 1)))
    span = float(np.max(np.abs(pilot.values - x0)))
    kernel_width = 10.0 * np.sqrt(h) * np.sqrt(_default_ap_alpha(model, pilot))
    lo = float(x0[0] - 1.5 * span - kernel_width)
    hi = float(x0[0] + 1.5 * span + kernel_width)
    oracle = snell_quadrature_1d(model, reward, x0, L, lo, hi, oracle_nodes)
    base_seed = int(cfg.seeds.get("train", 1))
    errors = np.empty((len(n_values), n_seeds))
    for i, n in enumerate(n_values):
        for s in range(n_seeds):
            paths = simulate_paths(model, x0, L, n, base_seed + 7919 * (s + 1))
            mesh = backward_induction(paths, reward, model, trunc)
            errors[i, s] = abs(mesh.u0 - oracle)
    mae = errors.mean(axis=1)
    if len(n_values) < 2:
        return ConvergenceReport(np.array(n_values), mae, oracle, n_seeds, None, None, True)
    lx = np.log(np.asarray(n_values, dtype=float))
    ly = np.log(mae)
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, res, _, _ = np.linalg.lstsq(A, ly, rcond=None)
    dof = max(len(n_values) - 2, 1)
    resid = ly - A @ coef
    s2 = float(resid @ resid) / dof
    se = float(np.sqrt(s2 / np.sum((lx - lx.mean()) ** 2)))
    return ConvergenceReport(
        np.array(n_values), mae, oracle, n_seeds,
        float(coef[0]), 1.96 * se, False,
    )


@dataclass(frozen=True)
class ComplexityReport:
    entries: list  # dicts: d, N, L, seconds
    slope_vs_n: dict  # d -> slope of log time vs log N
    slope_vs_l: Optional[float]
    per_eval_cost: dict  # d -> seconds per density evaluation

    def as_dict(self) -> dict:
        return {
            "entries": self.entries,
            "slope_vs_n": {str(k): v for k, v in self.slope_vs_n.items()},
            "slope_vs_l": self.slope_vs_l,
            "per_eval_cost": {str(k): v for k, v in self.per_eval_cost.items()},
        }


def _time_mesh(cfg: ExperimentConfig, d: int, n: int, L: int, repeats: int) -> float:
    base_d = len(np.atleast_1d(cfg.model.get("x0", 0.0)))
    cfg_d = cfg
    if d != base_d and cfg.model.get("kind") == "gbm":
        x0 = float(np.atleast_1d(cfg.model["x0"])[0])
        sigma = float(cfg.model.get("sigma"))
        cfg_d = ExperimentConfig(
            model={**cfg.model, "x0": [x0] * d, "sigma": [sigma] * d},
            reward=cfg.reward, solver=cfg.solver, seeds=cfg.seeds,
            output=cfg.output, expansion=cfg.expansion,
            diffusion=cfg.diffusion, density_check=cfg.density_check,
        )
    cfg_d = cfg_d.with_solver(steps=L)
    model, x0 = build_model(cfg_d, steps=L)
    # multi-asset grids price the put on the first coordinate
    reward = build_reward(cfg_d, steps=L)
    paths = simulate_paths(model, x0, L, n, int(cfg.seeds.get("train", 1)))
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        backward_induction(paths, reward, model)
        best = min(best, time.perf_counter() - t0)
    return best


def _loglog_slope(xs, ys) -> float:
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


def sweep_complexity(cfg: ExperimentConfig, n_values, d_values=None, l_values=None,
                     repeats: int = 3) -> ComplexityReport:
    """Wall-time scaling of the backward dynamic program.

    Times the N^2 L mesh pass for each (d, N) at fixed L, and optionally
    along an L grid at fixed N. Runs sequentially for timing fidelity.
    """
    n_values = [int(n) for n in n_values]
    if not n_values:
        raise ConfigError("sweep needs at least one N value")
    d_values = [int(d) for d in (d_values or [len(np.atleast_1d(cfg.model.get("x0", 0.0)))])]
    L = int(cfg.solver["steps"])
    entries = []
    slope_vs_n = {}
    per_eval = {}
    for d in d_values:
        times = []
        for n in n_values:
            t = _time_mesh(cfg, d, n, L, repeats)
            entries.append({"d": d, "N": n, "L": L, "seconds": t})
            times.append(t)
        if len(n_values) >= 2:
            slope_vs_n[d] = _loglog_slope(n_values, times)
        per_eval[d] = float(times[-1] / (n_values[-1] ** 2 * max(L - 1, 1)))
    slope_vs_l = None
    if l_values:
        l_values = [int(v) for v in l_values]
        n_fix = max(n_values)
        tl = []
        for Lv in l_values:
            t = _time_mesh(cfg, d_values[0], n_fix, Lv, repeats)
            entries.append({"d": d_values[0], "N": n_fix, "L": Lv, "seconds": t})
            tl.append(t)
        if len(l_values) >= 2:
            slope_vs_l = _loglog_slope(l_values, tl)
    return ComplexityReport(entries, slope_vs_n, slope_vs_l, per_eval)


def density_check(cfg: ExperimentConfig) -> dict:
    """Expansion-density report: probe values, normalization, decay ratios."""
    from .config import build_diffusion, build_expansion

    diff = build_diffusion(cfg)
    exp = build_expansion(cfg)
    block = cfg.density_check
    x = float(block.get("probe_x", 0.0))
    lo = float(block.get("probe_lo", -2.0))
    hi = float(block.get("probe_hi", 2.0))
    count = int(block.get("probe_count", 21))
    ys = np.linspace(lo, hi, count)
    pn = density_pn_grid(exp, diff, x, ys)
    width = 10.0 * np.sqrt(exp.delta) * diff.sigma_hi
    grid = np.linspace(x - width, x + width, 401)
    norm = float(np.trapezoid(density_pn_grid(exp, diff, x, grid, m_samples=20_000), grid))
    pair_ys = np.linspace(lo, hi, 5)
    decay = ratio_decay_check(
        diff, exp.delta, max(exp.order, 1),
        [(x, float(y)) for y in pair_ys],
        m_samples=min(exp.n_bridges, 20_000),
    )
    return {
        "schema": "wsmesh-density-check v1",
        "diffusion": dict(cfg.diffusion),
        "delta": exp.delta,
        "delta_max": delta_max(diff),
        "order": exp.order,
        "probe_x": x,
        "probe_grid": [float(v) for v in ys],
        "pn_values": [float(v) for v in pn],
        "normalization": norm,
        "decay": {
            "rel_diffs": [float(v) for v in decay.rel_diffs],
            "decay_ratios": [float(v) for v in decay.decay_ratios],
            "bound": decay.bound,
            "margin": decay.margin,
            "violations": decay.violations,
        },
    }
