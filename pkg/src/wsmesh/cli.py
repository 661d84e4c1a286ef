"""Command line interface.

Subcommands: ``simulate``, ``price``, ``sweep-l``, ``sweep-n``,
``sweep-complexity``, ``density-check``, ``reference``. Exit codes: 0 ok,
2 config error, 3 numerical error, 4 check violation in ``--check`` mode.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import ConfigError, WsmError
from .results import ResultTable, write_manifest

log = logging.getLogger("wsmesh")


def _int_list(text: str):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"expected a comma-separated integer list, got {text!r}") from e


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seeds(train=int(args.seed))
    if getattr(args, "test_seed", None) is not None:
        cfg = cfg.with_seeds(test=int(args.test_seed))
    if getattr(args, "method", None):
        cfg = cfg.with_solver(method=args.method)
    return cfg


def _out_path(cfg: ExperimentConfig, args, default: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(cfg.output.get("csv", default))


def _figures_enabled(cfg: ExperimentConfig, args) -> bool:
    if getattr(args, "no_figures", False):
        return False
    return bool(cfg.output.get("figures", True))


def _write_rows(cfg, args, rows, command, extra_outputs=()):
    out = _out_path(cfg, args, "results.csv")
    table = ResultTable(out)
    table.append(rows)
    outputs = [out, *extra_outputs]
    manifest_path = out.with_suffix(out.suffix + ".manifest.json")
    write_manifest(manifest_path, cfg.as_dict(), command, outputs, len(rows), __version__)
    for row in rows:
        rec = row.as_record()
        print(
            f"{rec['method']}: mean={rec['mean']} std_error={rec['std_error']} "
            f"(L={rec['L']}, wall={float(rec['wall_time_s']):.2f}s)"
        )
    print(f"wrote {len(rows)} row(s) to {out}")
    return out


def cmd_simulate(cfg: ExperimentConfig, args) -> int:
    from .config import build_model
    from .models import simulate_paths

    L = int(cfg.solver["steps"])
    model, x0 = build_model(cfg)
    n = int(cfg.solver.get("n_train", 1000))
    seed = args.seed if args.seed is not None else cfg.model.get("seed", cfg.seeds.get("train"))
    if seed is None:
        raise ConfigError("simulate needs a seed (model.seed, seeds.train, or --seed)")
    paths = simulate_paths(model, x0, L, n, int(seed))
    out = Path(args.out or "paths.npz")
    paths.save(out)
    print(f"wrote {n} paths x {L} steps to {out}")
    return 0


def cmd_price(cfg: ExperimentConfig, args) -> int:
    from .experiments import run_experiment, run_with_invariant_check

    if args.check:
        rows, violations = run_with_invariant_check(cfg)
    else:
        rows = run_experiment(cfg)
        violations = []
    _write_rows(cfg, args, rows, "price")
    if args.check:
        failures = list(violations)
        if cfg.model.get("kind") == "gbm" and cfg.reward.get("payoff") == "put":
            from .baselines import binomial_american_put
            from .config import step_size

            L = int(cfg.solver["steps"])
            ref = binomial_american_put(
                float(np.atleast_1d(cfg.model["x0"])[0]),
                float(cfg.reward["strike"]),
                float(cfg.model.get("rate", 0.0)),
                float(cfg.model.get("sigma")),
                float(cfg.model.get("dividend", 0.0)),
                L * step_size(cfg),
                int(cfg.solver.get("tree_steps", 20_000)),
            )
            for row in rows:
                if row.std_error and row.mean > ref + 3.0 * row.std_error:
                    failures.append(
                        f"lower bound {row.mean:.4f} exceeds reference {ref:.4f} + 3 SE"
                    )
        if failures:
            for f in failures:
                print(f"CHECK FAILED: {f}", file=sys.stderr)
            return 4
        print("checks passed: mesh invariants and lower-bound validity")
    return 0


def cmd_sweep_l(cfg: ExperimentConfig, args) -> int:
    from .experiments import sweep_exercise_dates

    methods = args.methods.split(",") if args.methods else None
    rows = sweep_exercise_dates(cfg, _int_list(args.steps), methods, jobs=args.jobs)
    extra = []
    out = _out_path(cfg, args, "sweep_l.csv")
    if _figures_enabled(cfg, args):
        from .figures import plot_exercise_date_sweep

        fig_path = out.with_suffix(".png")
        out.parent.mkdir(parents=True, exist_ok=True)
        plot_exercise_date_sweep([r.as_record() for r in rows], fig_path)
        extra.append(fig_path)
    _write_rows(cfg, args, rows, "sweep-l", extra)
    return 0


def cmd_sweep_n(cfg: ExperimentConfig, args) -> int:
    from .experiments import sweep_convergence

    report = sweep_convergence(cfg, _int_list(args.paths), n_seeds=args.sweep_seeds)
    out = Path(args.out or cfg.output.get("csv", "sweep_n.json")).with_suffix(".json")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(report.as_dict(), fh, indent=2)
    outputs = [out]
    if _figures_enabled(cfg, args) and not report.insufficient:
        from .figures import plot_convergence

        outputs.append(plot_convergence(report, out.with_suffix(".png")))
    write_manifest(out.with_suffix(".manifest.json"), cfg.as_dict(), "sweep-n",
                   outputs, len(report.n_values), __version__)
    if report.insufficient:
        print("insufficient N values for a slope estimate; report written anyway")
    else:
        print(f"convergence slope {report.slope:.3f} (ci95 {report.slope_ci95:.3f})")
    print(f"wrote {out}")
    return 0


def cmd_sweep_complexity(cfg: ExperimentConfig, args) -> int:
    from .experiments import sweep_complexity

    report = sweep_complexity(
        cfg,
        _int_list(args.paths),
        d_values=_int_list(args.dims) if args.dims else None,
        l_values=_int_list(args.l_grid) if args.l_grid else None,
        repeats=args.repeats,
    )
    out = Path(args.out or cfg.output.get("csv", "sweep_complexity.json")).with_suffix(".json")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(report.as_dict(), fh, indent=2)
    outputs = [out]
    if _figures_enabled(cfg, args):
        from .figures import plot_complexity

        outputs.append(plot_complexity(report, out.with_suffix(".png")))
    write_manifest(out.with_suffix(".manifest.json"), cfg.as_dict(), "sweep-complexity",
                   outputs, len(report.entries), __version__)
    for d, slope in report.slope_vs_n.items():
        print(f"time vs N slope (d={d}): {slope:.3f}")
    if report.slope_vs_l is not None:
        print(f"time vs L slope: {report.slope_vs_l:.3f}")
    print(f"wrote {out}")
    return 0


def cmd_density_check(cfg: ExperimentConfig, args) -> int:
    from .experiments import density_check

    report = density_check(cfg)
    out = Path(args.out or "density_check.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(report, fh, indent=2)
    outputs = [out]
    if _figures_enabled(cfg, args):
        from .figures import plot_density_check

        outputs.append(plot_density_check(report, out.with_suffix(".png")))
    write_manifest(out.with_suffix(".manifest.json"), cfg.as_dict(), "density-check",
                   outputs, 1, __version__)
    print(f"normalization {report['normalization']:.4f}, "
          f"decay violations: {len(report['decay']['violations'])}")
    print(f"wrote {out}")
    return 0


def cmd_reference(cfg: ExperimentConfig, args) -> int:
    from .experiments import run_experiment

    rows = []
    for method in ("binomial", "bs-european"):
        rows.extend(run_experiment(cfg.with_solver(method=method)))
    _write_rows(cfg, args, rows, "reference")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="wsmesh",
        description="Weighted stochastic mesh solver for optimal stopping problems",
    )
    parser.add_argument("--version", action="version", version=f"wsmesh {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seeds=True):
        p.add_argument("config", help="YAML experiment config")
        p.add_argument("--out", help="output path override")
        if seeds:
            p.add_argument("--seed", type=int, help="training seed override")
            p.add_argument("--test-seed", type=int, help="test seed override")
        p.add_argument("--no-figures", action="store_true", help="skip figure rendering")
        p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("simulate", help="simulate and store a path set")
    common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("price", help="run one pricing method")
    common(p)
    p.add_argument("--method", help="method override (wsm-knn, ls-2, binomial, ...)")
    p.add_argument("--check", action="store_true",
                   help="verify mesh invariants and lower-bound validity (exit 4 on failure)")
    p.set_defaults(fn=cmd_price)

    p = sub.add_parser("sweep-l", help="sweep the number of exercise dates")
    common(p)
    p.add_argument("--steps", required=True, help="comma-separated L values")
    p.add_argument("--methods", help="comma-separated method list")
    p.add_argument("--jobs", type=int, default=1, help="parallel configurations")
    p.set_defaults(fn=cmd_sweep_l)

    p = sub.add_parser("sweep-n", help="convergence sweep against the quadrature oracle")
    common(p)
    p.add_argument("--paths", required=True, help="comma-separated N values")
    p.add_argument("--sweep-seeds", type=int, default=20, help="seeds per N")
    p.set_defaults(fn=cmd_sweep_n)

    p = sub.add_parser("sweep-complexity", help="wall-time scaling of the mesh pass")
    common(p)
    p.add_argument("--paths", required=True, help="comma-separated N values")
    p.add_argument("--dims", help="comma-separated dimensions")
    p.add_argument("--l-grid", help="comma-separated L values for the L-scaling fit")
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(fn=cmd_sweep_complexity)

    p = sub.add_parser("density-check", help="expansion-density report (JSON)")
    common(p, seeds=False)
    p.set_defaults(fn=cmd_density_check)

    p = sub.add_parser("reference", help="binomial and Black-Scholes reference prices")
    common(p)
    p.set_defaults(fn=cmd_reference)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        cfg = _apply_overrides(cfg, args)
        return args.fn(cfg, args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except WsmError as e:
        print(f"numerical error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
