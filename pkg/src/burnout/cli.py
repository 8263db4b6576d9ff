"""Command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 configuration or argument error
(nothing is written), 3 numeric failure during computation.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, bundled_scenarios, load_config, validate
from .errors import ArgumentError, BurnoutError, ConvergenceError, NonnegativityError, NumericError
from .frailty_analytics import (
    calibrate_gamma,
    gamma_pool_hazard,
    gamma_posterior,
    lognormal_pool_hazard_laplace,
    lognormal_pool_hazard_quadrature,
    truncated_normal_pool_hazard,
)
from .identities import make_grid
from .scenario import (
    ScenarioResult,
    compute_path,
    dumps_report,
    resolve_output,
    run_checks,
    run_scenario,
    simulate,
    write_outputs,
)
from .tables import compare_runs, read_csv, write_csv

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p.add_argument("--out", default=None, help="directory for output files")
    p.add_argument("--quiet", action="store_true", help="print nothing on success")
    p.add_argument("--threads", type=int, default=1, help="worker threads (never changes results)")
    return p


def build_parser():
    common = _common()
    parser = argparse.ArgumentParser(prog="burnout", description="Pool hazard burnout under heterogeneity.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    scen_help = "scenario JSON file or bundled name (%s)" % ", ".join(bundled_scenarios())
    for name, text in (
        ("run", "compute the pool path, run checks, write CSV and report"),
        ("check", "run the configured checks and write the report"),
        ("simulate", "simulate borrowers and write the Monte Carlo CSV"),
    ):
        sp = sub.add_parser(name, parents=[common], help=text, description=text)
        sp.add_argument("config", help=scen_help)

    fr = sub.add_parser("frailty", parents=[common], help="closed-form and approximate frailty pool hazards")
    fr.add_argument("family", choices=("gamma", "lognormal", "normal"))
    fr.add_argument("--lam", type=float, default=0.2, help="common factor lambda")
    fr.add_argument("--t-end", type=float, default=10.0)
    fr.add_argument("--dt", type=float, default=0.5)
    fr.add_argument("--k", type=float, default=2.0, help="gamma shape")
    fr.add_argument("--theta", type=float, default=1.0, help="gamma scale")
    fr.add_argument("--mu", type=float, default=0.0, help="lognormal log-mean")
    fr.add_argument("--sigma", type=float, default=0.1, help="lognormal log-sd")
    fr.add_argument("--m", type=float, default=1.0, help="normal location")
    fr.add_argument("--s", type=float, default=0.1, help="normal scale")

    ca = sub.add_parser("calibrate", parents=[common], help="fit a/(1 + c t) to a hazard curve CSV")
    ca.add_argument("csv", help="CSV with a t column and a hazard column")
    ca.add_argument("--column", default=None, help="hazard column (default pool_hazard or empirical_hazard)")

    co = sub.add_parser("compare", parents=[common], help="max column deltas between two runs")
    co.add_argument("csv_a")
    co.add_argument("csv_b")
    co.add_argument("--tolerance", type=float, default=0.0)
    return parser


def _say(args, text):
    if not args.quiet:
        print(text, end="" if text.endswith("\n") else "\n")


def _load(args):
    cfg, built = load_config(args.config)
    if args.seed is not None:
        data = cfg.to_dict()
        data["seed"] = args.seed
        cfg, built = validate(data)
    return cfg, built


def cmd_run(args):
    cfg, built = _load(args)
    result = run_scenario(cfg, built, threads=args.threads)
    for p in write_outputs(result, args.out):
        _say(args, f"wrote {p}")
    _say(args, dumps_report(result.report()))
    return EXIT_OK if result.passed else EXIT_CHECK


def cmd_check(args):
    cfg, built = _load(args)
    path = compute_path(cfg, built)
    result = ScenarioResult(cfg, path, run_checks(cfg, built, path))
    report_path = resolve_output(cfg.outputs["report_path"], args.out)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(dumps_report(result.report()))
    _say(args, dumps_report(result.report()))
    return EXIT_OK if result.passed else EXIT_CHECK


def cmd_simulate(args):
    cfg, built = _load(args)
    mc = simulate(cfg, built, args.threads)
    p = write_csv(resolve_output(cfg.outputs["mc_csv_path"], args.out), mc.columns())
    _say(args, f"wrote {p}")
    _say(args, f"{mc.n_borrowers} borrowers, {int(mc.events.sum())} prepaid over {mc.events.size} periods")
    return EXIT_OK


def cmd_frailty(args):
    t = make_grid(args.t_end, args.dt)
    if args.family == "gamma":
        theta_t = np.array([gamma_posterior(args.k, args.theta, args.lam, s).theta_t for s in t])
        cols = {"t": t, "pool_hazard": gamma_pool_hazard(args.k, args.theta, args.lam, t),
                "posterior_mean_f": args.k * theta_t, "posterior_theta": theta_t}
    elif args.family == "lognormal":
        quad = np.array([lognormal_pool_hazard_quadrature(args.mu, args.sigma, args.lam, s) for s in t])
        lap = lognormal_pool_hazard_laplace(args.mu, args.sigma, args.lam, t)
        cols = {"t": t, "quadrature": quad, "laplace": lap, "rel_error": np.abs(lap - quad) / quad}
    else:
        res = [truncated_normal_pool_hazard(args.m, args.s, args.lam, s) for s in t]
        exact = np.array([r.exact for r in res])
        lin = np.array([r.linear_approx for r in res])
        cols = {"t": t, "exact": exact, "linear": lin, "rel_error": np.abs(exact - lin) / exact}
    if args.out is None:
        write_csv(sys.stdout, cols)
    else:
        p = write_csv(Path(args.out) / f"frailty_{args.family}.csv", cols)
        _say(args, f"wrote {p}")
    return EXIT_OK


def cmd_calibrate(args):
    table = read_csv(args.csv)
    if "t" not in table:
        raise ArgumentError(f"{args.csv}: no 't' column")
    column = args.column
    if column is None:
        column = next((c for c in ("pool_hazard", "empirical_hazard") if c in table), None)
        if column is None:
            raise ArgumentError(f"{args.csv}: no pool_hazard or empirical_hazard column; use --column")
    if column not in table:
        raise ArgumentError(f"{args.csv}: no column {column!r}")
    t, y = table["t"], table[column]
    ok = np.isfinite(y)
    fit = calibrate_gamma(t[ok], y[ok])
    out = {
        "column": column,
        "lambda0_bar": fit.lambda0_bar,
        "theta_lambda": fit.theta_lambda,
        "rms_error": fit.rms_error,
        "iterations": fit.iterations,
        "converged": fit.converged,
        "note": fit.note,
    }
    text = json.dumps(out, indent=2, sort_keys=True) + "\n"
    if args.out is not None:
        p = Path(args.out) / "calibration.json"
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
    _say(args, text)
    return EXIT_OK


def cmd_compare(args):
    rep = compare_runs(args.csv_a, args.csv_b, args.tolerance)
    _say(args, json.dumps(rep.summary(), indent=2, sort_keys=True))
    return EXIT_OK if rep.passed else EXIT_CHECK


COMMANDS = {
    "run": cmd_run,
    "check": cmd_check,
    "simulate": cmd_simulate,
    "frailty": cmd_frailty,
    "calibrate": cmd_calibrate,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ArgumentError("--threads must be >= 1")
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, NonnegativityError, ConvergenceError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BurnoutError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
