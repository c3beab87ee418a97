"""Command-line entry point: sweep experiments and direct theory queries.

Exit codes: 0 on success, 2 for configuration or domain errors, 3 when a
required numerical computation fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import warnings

from .config import EXPERIMENTS, ConfigError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
SADDLE_RESIDUAL_TOL = 1e-7


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int, help="worker processes")
    p.add_argument("--config", help="INI file with a section named after the experiment")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override one parameter (repeatable)")
    p.add_argument("--full-scale", action="store_true",
                   help="use the full-size dimension (phase-diagram and slice only)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tamlab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        _add_run_args(sub.add_parser(name, help=f"run the {name} sweep"))
    rp = sub.add_parser("replot", help="regenerate SVG figures from an existing run directory")
    rp.add_argument("out")

    th = sub.add_parser("theory", help="scalar-theory queries (JSON on stdout)")
    ts = th.add_subparsers(dest="query", required=True)
    q = ts.add_parser("alpha-c")
    q.add_argument("--r", type=float, required=True)
    q = ts.add_parser("kappa")
    q.add_argument("--r", type=float, required=True)
    q = ts.add_parser("rho")
    q.add_argument("--alpha", type=float, required=True)
    q.add_argument("--r", type=float, required=True)
    q = ts.add_parser("classify")
    q.add_argument("--alpha", type=float, required=True)
    q.add_argument("--r", type=float, required=True)
    q = ts.add_parser("saddle")
    q.add_argument("--alpha", type=float, required=True)
    q.add_argument("--r", type=float, required=True)
    q.add_argument("--beta", type=float, default=30.0)
    q.add_argument("--lambda", dest="lam", type=float, default=1e-7)
    q = ts.add_parser("unsat")
    q.add_argument("--alpha", type=float, required=True)
    q.add_argument("--r", type=float, required=True)
    q.add_argument("--beta", type=float, default=30.0)
    return parser


def _theory(args) -> dict:
    from .phase import alpha_c, classify_phase, rho_alpha, unsat_ridgeless
    from .scalar import ScalarParams, kappa_r, solve_saddle

    if args.query == "alpha-c":
        return {"r": args.r, "alpha_c": alpha_c(args.r)}
    if args.query == "kappa":
        return {"r": args.r, "kappa": kappa_r(args.r)}
    if args.query == "rho":
        return {"alpha": args.alpha, "r": args.r, "rho_alpha": rho_alpha(args.alpha, args.r)}
    if args.query == "classify":
        pp = classify_phase(args.alpha, args.r)
        return {"alpha": pp.alpha, "r": pp.r, "phase": pp.phase, "alpha_c": pp.alpha_c,
                "rho_alpha": pp.rho_alpha, "p_alpha": pp.p_alpha}
    if args.query == "saddle":
        params = ScalarParams(args.alpha, args.r, args.beta, args.lam)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            sol = solve_saddle(params)
        worst = max(abs(sol.residual_nu), abs(sol.residual_chi))
        if not math.isfinite(worst) or worst > SADDLE_RESIDUAL_TOL:
            raise ArithmeticError(f"saddle residual {worst:.3g} exceeds {SADDLE_RESIDUAL_TOL}")
        return {"alpha": args.alpha, "r": args.r, "beta": args.beta, "lambda": args.lam,
                "nu_star": sol.nu_star, "chi_star": sol.chi_star, "mu_star": sol.mu_star,
                "c_star": sol.c_star, "loss": sol.loss, "residual_nu": sol.residual_nu,
                "residual_chi": sol.residual_chi, "capped": sol.capped, "small_nu": sol.small_nu}
    if args.query == "unsat":
        prof = unsat_ridgeless(args.alpha, args.r, args.beta)
        return {"alpha": args.alpha, "r": args.r, "beta": prof.beta, "nu0": prof.nu0,
                "chi0": prof.chi0, "c0": prof.c0, "loss": prof.loss,
                "trace": [{"lambda": lam, "nu": sol.nu_star, "loss": sol.loss} for lam, sol in prof.trace]}
    raise ConfigError(f"unknown theory query {args.query!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .sweeps import PLOTTERS, RUNNERS, NumericalFailure

    try:
        if args.command == "theory":
            try:
                result = _theory(args)
            except RuntimeError as exc:
                raise NumericalFailure(str(exc)) from exc
            except ArithmeticError as exc:
                raise NumericalFailure(str(exc)) from exc
            json.dump(result, sys.stdout, indent=2, sort_keys=True)
            sys.stdout.write("\n")
            return EXIT_OK
        if args.command == "replot":
            import configparser
            import os

            cp = configparser.ConfigParser()
            cp.read(os.path.join(args.out, "config.resolved"))
            experiment = cp["run"]["experiment"]
            cfg = load_config(experiment, os.path.join(args.out, "config.resolved"))
            PLOTTERS[experiment](args.out, cfg.params)
            return EXIT_OK
        overrides = list(args.overrides)
        if args.full_scale:
            if args.command not in ("phase-diagram", "slice"):
                raise ConfigError("--full-scale applies to phase-diagram and slice only")
            overrides.append("full_scale=true")
        cfg = load_config(args.command, args.config, overrides, args.seed, args.workers, args.out)
        summary = RUNNERS[args.command](cfg)
        json.dump(summary.get("acceptance", {}), sys.stdout, sort_keys=True)
        sys.stdout.write("\n")
        return EXIT_OK
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
