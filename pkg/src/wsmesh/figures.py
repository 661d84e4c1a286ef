"""Figure rendering for the report paths: each sweep writes a PNG next to
its delimited output. Batch use only, so the Agg backend is forced."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_METHOD_STYLE = {
    "wsm-direct": dict(color="tab:blue", marker="o"),
    "wsm-knn": dict(color="tab:cyan", marker="s"),
    "ls-2": dict(color="tab:green", marker="^"),
    "ls-4": dict(color="tab:olive", marker="v"),
    "vf-2": dict(color="tab:orange", marker="D"),
    "vf-4": dict(color="tab:red", marker="x"),
}


def plot_exercise_date_sweep(rows, out_path, reference=None):
    """Lower bounds vs number of exercise dates, one line per method."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    by_method = {}
    for r in rows:
        by_method.setdefault(r["method"], []).append(r)
    for method, rs in sorted(by_method.items()):
        rs = sorted(rs, key=lambda r: int(r["L"]))
        L = [int(r["L"]) for r in rs]
        mean = [float(r["mean"]) for r in rs]
        err = [3.0 * float(r["std_error"]) for r in rs]
        style = _METHOD_STYLE.get(method, dict(marker="."))
        ax.errorbar(L, mean, yerr=err, label=method, capsize=3, **style)
    if reference is not None:
        ax.axhline(reference, color="k", ls="--", lw=1, label="reference")
    ax.set_xlabel("exercise dates L")
    ax.set_ylabel("lower bound")
    ax.set_title("Policy lower bounds vs exercise dates (3 SE bars)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_convergence(report, out_path):
    """Log-log mean absolute error vs N with the fitted slope."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    n = np.asarray(report.n_values, dtype=float)
    err = np.asarray(report.mean_abs_error, dtype=float)
    ax.loglog(n, err, "o-", label="mean |u0 - oracle|")
    if report.slope is not None:
        fit = err[0] * (n / n[0]) ** report.slope
        ax.loglog(n, fit, "k--", lw=1,
                  label=f"slope {report.slope:.2f} (ci95 {report.slope_ci95:.2f})")
    ax.set_xlabel("training paths N")
    ax.set_ylabel("error")
    ax.set_title(f"Mesh convergence ({report.n_seeds} seeds, oracle {report.oracle:.5g})")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_complexity(report, out_path):
    """Log-log wall time of the backward pass vs N, one line per d."""
    fig, ax = plt.subplots(figsize=(6, 4.5))
    by_d = {}
    for e in report.entries:
        by_d.setdefault(e["d"], []).append(e)
    for d, es in sorted(by_d.items()):
        es = [e for e in es if e["L"] == es[0]["L"]]
        ns = [e["N"] for e in es]
        ts = [e["seconds"] for e in es]
        label = f"d={d}"
        if d in report.slope_vs_n:
            label += f" (slope {report.slope_vs_n[d]:.2f})"
        ax.loglog(ns, ts, "o-", label=label)
    ax.set_xlabel("training paths N")
    ax.set_ylabel("backward pass seconds")
    ax.set_title("Cost scaling of the mesh dynamic program")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def plot_density_check(report, out_path):
    """Expansion density on the probe grid plus decay ratios."""
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    ax1.plot(report["probe_grid"], report["pn_values"], "o-")
    ax1.set_xlabel("y")
    ax1.set_ylabel(f"p^{report['order']}(y | x={report['probe_x']:g})")
    ax1.set_title(f"normalization {report['normalization']:.4f}")
    diffs = report["decay"]["rel_diffs"]
    ax2.semilogy(range(len(diffs)), np.maximum(diffs, 1e-300), "o-")
    ax2.axhline(report["decay"]["bound"], color="k", ls="--", lw=1,
                label=f"bound {report['decay']['bound']:.3g}")
    ax2.set_xlabel("truncation order n")
    ax2.set_ylabel("max rel |p^{n+1} - p^n| / p^{n+1}")
    ax2.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
