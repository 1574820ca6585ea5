"""Batch command-line entry point.

Subcommands: ``solve`` (Picard solve, CSV solution + JSON metadata),
``lambda`` (smoothing-norm grid + blow-up fit), ``simulate`` (policy costs
and dominance report), ``check`` (invariant suite).  Exit codes: 0 ok,
1 config error, 2 no contraction, 3 inclusion/rank violation, 4 dominance
violation, 5 invariant failure.

All numeric CSV output uses 17 significant digits so identical configs and
seeds reproduce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .config import RunConfig, load_config
from .checks import run_invariant_suite
from .errors import (
    ConfigError,
    DominanceViolated,
    InclusionViolated,
    NoContraction,
    PshjbError,
    RankDeficient,
)
from .harness import Policy, random_open_loop_policies, value_dominance_check
from .hjb import picard_solve
from .smoothing import fit_blowup

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NO_CONTRACTION = 2
EXIT_INCLUSION = 3
EXIT_DOMINANCE = 4
EXIT_INVARIANT = 5

FLOAT_FMT = "%.17g"


def _fmt(x: float) -> str:
    return FLOAT_FMT % float(x)


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_json(path: str, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")


def _say(args, msg: str) -> None:
    if not args.quiet:
        print(msg)


def cmd_solve(args, run: RunConfig) -> int:
    try:
        sol = picard_solve(
            run.model, run.cost.ham, run.cost.phi, run.cost.ell0, run.solver
        )
    except NoContraction as exc:
        _say(args, f"no contraction: {exc}")
        _write_json(
            os.path.join(args.out_dir, "solve_meta.json"),
            {"status": "no_contraction", "detail": str(exc)},
        )
        return EXIT_NO_CONTRACTION
    except (InclusionViolated, RankDeficient) as exc:
        _say(args, f"smoothing hypothesis violated: {exc}")
        return EXIT_INCLUSION

    it = sol.iterate
    mesh = np.stack(
        [g.ravel() for g in np.meshgrid(*it.space_axes, indexing="ij")], axis=-1
    )
    n_pts = mesh.shape[0]
    m = it.control_dim
    rows = []
    for i, t in enumerate(it.time_grid):
        fbar = (
            np.zeros((n_pts, m))
            if i == 0
            else it.fbar_values[i - 1].reshape(n_pts, m)
        )
        fvals = it.f_values[i].reshape(n_pts)
        for p in range(n_pts):
            rows.append([t, *mesh[p], fvals[p], *fbar[p]])
    header = (
        ["t"]
        + [f"y{d + 1}" for d in range(run.model.proj_dim)]
        + ["f"]
        + [f"fbar{k + 1}" for k in range(m)]
    )
    _write_csv(os.path.join(args.out_dir, "solution.csv"), header, rows)
    meta = {
        "status": "ok",
        "gamma": sol.gamma,
        "eta_weight": sol.eta_weight,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "contraction_ratios": sol.contraction_estimates,
        "diagnostics": {
            k: v for k, v in sol.diagnostics.items() if k != "residual_history"
        },
        "residual_history": sol.diagnostics.get("residual_history", []),
    }
    _write_json(os.path.join(args.out_dir, "solve_meta.json"), meta)
    _say(
        args,
        f"solved: residual {sol.residual:.3e} after {sol.iterations} iterations "
        f"(gamma={sol.gamma:.3f}, eta={sol.eta_weight:g})",
    )
    return EXIT_OK if sol.residual <= run.solver.tol else EXIT_NO_CONTRACTION


def cmd_lambda(args, run: RunConfig) -> int:
    t_grid = np.geomspace(1e-4, 0.1 * run.cost.horizon, 20)
    windows = tuple((0.9 * d, 1.1 * d) for d in run.model.control_discontinuities)
    fit = fit_blowup(run.model, t_grid, exclude_windows=windows)
    _write_csv(
        os.path.join(args.out_dir, "lambda_norms.csv"),
        ["t", "norm"],
        zip(fit.times, fit.norms),
    )
    gamma_ok = 0.0 < fit.gamma < 1.0
    _write_json(
        os.path.join(args.out_dir, "lambda_fit.json"),
        {
            "slope": fit.slope,
            "intercept": fit.intercept,
            "residual": fit.residual,
            "gamma": fit.gamma,
            "gamma_in_range": gamma_ok,
        },
    )
    _say(args, f"fitted slope {fit.slope:.4f} (gamma {fit.gamma:.4f})")
    if not gamma_ok:
        _say(args, "fitted exponent outside (0, 1): smoothing hypothesis fails")
        return EXIT_INCLUSION
    return EXIT_OK


def cmd_simulate(args, run: RunConfig) -> int:
    try:
        sol = picard_solve(
            run.model, run.cost.ham, run.cost.phi, run.cost.ell0, run.solver
        )
    except NoContraction as exc:
        _say(args, f"no contraction: {exc}")
        return EXIT_NO_CONTRACTION
    policies = random_open_loop_policies(
        run.cost.ham, run.time_steps, run.n_random_policies, seed=run.seed
    )
    if args.policy == "greedy":
        policies.append(Policy.greedy(sol))
    elif args.policy == "constant":
        policies.append(Policy.constant(0))
    report = value_dominance_check(
        run.model,
        run.cost,
        sol,
        policies,
        run.t0,
        run.x0,
        n_samples=run.n_samples,
        time_steps=run.time_steps,
        seed=run.seed,
        keep_samples=True,
    )
    sample_rows = []
    for i, p in enumerate(report["policies"]):
        for j, c in enumerate(p.pop("samples")):
            sample_rows.append([i, j, c])
    _write_csv(
        os.path.join(args.out_dir, "simulate_samples.csv"),
        ["policy", "sample", "cost"],
        sample_rows,
    )
    _write_json(os.path.join(args.out_dir, "simulate_report.json"), report)
    rows = [
        [i, p["mean"], p["std_error"], p["gap"]]
        for i, p in enumerate(report["policies"])
    ]
    _write_csv(
        os.path.join(args.out_dir, "simulate_policies.csv"),
        ["policy", "mean", "std_error", "gap"],
        rows,
    )
    _say(args, f"value {report['value']:.6g}; dominance holds for all policies")
    if report["greedy_gap"] is not None:
        _say(args, f"greedy gap (diagnostic): {report['greedy_gap']:.4g}")
    return EXIT_OK


def cmd_check(args, run: RunConfig) -> int:
    report = run_invariant_suite(run)
    _write_json(os.path.join(args.out_dir, "check_report.json"), report)
    for inv in report["invariants"]:
        _say(args, f"[{'ok' if inv['ok'] else 'FAIL'}] {inv['name']}: {inv['detail']}")
    if not report["ok"]:
        _say(args, f"failing invariants: {', '.join(report['failing'])}")
        return EXIT_INVARIANT
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pshjb",
        description="HJB mild-solution solver for boundary/delayed control models",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn in (
        ("solve", cmd_solve),
        ("lambda", cmd_lambda),
        ("simulate", cmd_simulate),
        ("check", cmd_check),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--out-dir", default=".")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=None)
        p.add_argument("--quiet", action="store_true")
        if name == "simulate":
            p.add_argument(
                "--policy", choices=["greedy", "constant", "none"], default="greedy"
            )
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    os.makedirs(args.out_dir, exist_ok=True)
    try:
        run = load_config(
            args.config,
            seed_override=args.seed,
            force_model=args.command == "check",
        )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InclusionViolated, RankDeficient) as exc:
        print(f"model build failed: {exc}", file=sys.stderr)
        return EXIT_INCLUSION
    try:
        return args.func(args, run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NoContraction as exc:
        print(f"no contraction: {exc}", file=sys.stderr)
        return EXIT_NO_CONTRACTION
    except (InclusionViolated, RankDeficient) as exc:
        print(f"smoothing hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_INCLUSION
    except DominanceViolated as exc:
        print(f"dominance violated: {exc}", file=sys.stderr)
        return EXIT_DOMINANCE
    except PshjbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    raise SystemExit(main())
