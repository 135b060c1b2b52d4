#!/usr/bin/env python3
"""mi-lifecycle CLI - life-cycle strategies under money illusion.

Usage:
    mi-lifecycle market yield-curve --preset us-1961-2023 --tau 0.25..10
    mi-lifecycle solve gammas --gamma 10 --theta 0 --T 60
    mi-lifecycle policy eval --t 5 --x1 0 --x2 0 --gamma 10 --theta 0
    mi-lifecycle simulate welfare --gamma 3,5,10 --theta-grid 0:1:0.05 --paths 20000
    mi-lifecycle calibrate --data panel.csv --restarts 10 --out params.json
    mi-lifecycle verify hjb --samples 200 --gamma 10 --theta 0

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""
import argparse
import logging
import shutil
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERICAL = 3
RANGE_STEP = 0.25
CALIBRATE_COMMANDS = ("fit", "filter", "synthetic")


def float_list(text: str) -> list[float]:
    """Parse "a,b,c", "start:stop:step" (inclusive) or "start..stop" (quarter-year steps)."""
    text = text.strip()
    try:
        if ".." in text:
            start, stop = (float(v) for v in text.split(".."))
            step = RANGE_STEP
        elif ":" in text:
            start, stop, step = (float(v) for v in text.split(":"))
        else:
            return [float(v) for v in text.split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"Invalid number list: {text!r}") from None
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError(f"Invalid range: {text!r}")
    n = int(np.floor((stop - start) / step + 1e-9)) + 1
    return [round(start + i * step, 12) for i in range(n)]


def float_pair(text: str) -> tuple[float, float]:
    """Parse "lo:hi"."""
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected lo:hi, got {text!r}") from None
    if hi <= lo:
        raise argparse.ArgumentTypeError(f"Empty range: {text!r}")
    return lo, hi


def grid_shape(text: str) -> tuple[int, int]:
    """Parse "41x41"."""
    try:
        n1, n2 = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"Expected N1xN2, got {text!r}") from None
    if n1 < 2 or n2 < 2:
        raise argparse.ArgumentTypeError("Grid needs at least 2 points per axis")
    return n1, n2


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("market")
    g.add_argument("--preset", default=None, help="Built-in parameter preset (default: us-1961-2023)")
    g.add_argument("--params", type=Path, default=None, help="JSON parameter file (overrides the preset)")
    g.add_argument("--kappa-factor-1", type=float, default=None, help="Override mean reversion of X1")
    g.add_argument("--kappa-factor-2", type=float, default=None, help="Override mean reversion of X2")
    g.add_argument("--ode-step", type=float, default=None, help="RK4 step for bond and Gamma ODEs")
    p.add_argument("--out", type=Path, default=None, help="Output directory (default: $MI_LIFECYCLE_OUT or ./out)")
    p.add_argument("--seed", type=int, default=42, help="Random seed (default: 42)")
    p.add_argument("-v", "--verbose", action="store_true", help="Log progress at INFO level")
    return p


def _household_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("household")
    g.add_argument("--gamma", type=float_list, default=[10.0], help="Risk aversion (list allowed for welfare)")
    g.add_argument("--theta", type=float, default=0.0, help="Degree of money illusion in [0, 1]")
    g.add_argument("--delta", type=float, default=0.10, help="Subjective discount rate")
    g.add_argument("--kappa-weight-1", type=float, default=0.5, help="Weight of the breadwinner's consumption")
    g.add_argument("--kappa-weight-2", type=float, default=0.5, help="Weight of the household's consumption")
    g.add_argument("--W0", type=float, default=35.0, help="Initial real wealth (thousands)")
    g.add_argument("--Y0", type=float, default=25.0, help="Initial real income (thousands per year)")
    g.add_argument("--age", type=float, default=35.0, help="Age at t = 0")
    g.add_argument("--T-R", dest="T_R", type=float, default=30.0, help="Years to retirement")
    g.add_argument("--T", type=float, default=60.0, help="Planning horizon in years")
    g.add_argument("--gompertz-b", type=float, default=9.5, help="Gompertz dispersion")
    g.add_argument("--gompertz-m", type=float, default=86.3, help="Gompertz modal age")
    return p


def _sim_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("simulation")
    g.add_argument("--paths", type=int, default=100_000, help="Monte Carlo paths (default: 100000)")
    g.add_argument("--dt", type=float, default=1.0 / 12.0, help="Time step in years (default: 1/12)")
    g.add_argument("--workers", type=int, default=1, help="Worker threads over path blocks")
    g.add_argument("--antithetic", action="store_true", help="Antithetic path pairs")
    g.add_argument("--x-scheme", default="exact", choices=["exact", "euler"], help="Factor transition scheme")
    g.add_argument("--block-size", type=int, default=8192, help="Paths per random-stream block")
    return p


def _default_calibrate_command(argv: list[str]) -> list[str]:
    """`calibrate --data ...` means `calibrate fit --data ...`."""
    if argv[:1] == ["calibrate"] and (len(argv) == 1 or argv[1] not in (*CALIBRATE_COMMANDS, "-h", "--help")):
        return ["calibrate", "fit", *argv[1:]]
    return argv


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    """Parse command line arguments."""
    argv = _default_calibrate_command(list(sys.argv[1:] if argv is None else argv))
    common, household, sim = _common_parser(), _household_parser(), _sim_parser()
    parser = argparse.ArgumentParser(
        prog="mi-lifecycle",
        description="Consumption, investment and life insurance under money illusion",
    )
    groups = parser.add_subparsers(dest="group", required=True)

    market = groups.add_parser("market", help="Bond market").add_subparsers(dest="command", required=True)
    p = market.add_parser("yield-curve", parents=[common], help="Nominal and real zero yields")
    p.add_argument("--tau", type=float_list, default=float_list("0.25..10"), help="Maturities (default: 0.25..10)")
    p.add_argument("--x1", type=float, default=0.0)
    p.add_argument("--x2", type=float, default=0.0)

    actuarial = groups.add_parser("actuarial", help="Mortality and income").add_subparsers(dest="command", required=True)
    p = actuarial.add_parser("table", parents=[common, household], help="Hazard, survival, income, human capital")
    p.add_argument("--from-age", type=float, default=35.0)
    p.add_argument("--to-age", type=float, default=95.0)
    p.add_argument("--step", type=float, default=1.0)

    solve = groups.add_parser("solve", help="Riccati system").add_subparsers(dest="command", required=True)
    solve.add_parser("gammas", parents=[common, household], help="Gamma trajectories and existence report")

    policy = groups.add_parser("policy", help="Closed-form controls").add_subparsers(dest="command", required=True)
    for name, text in (("eval", "Controls at one state"), ("surface", "Controls over a factor grid")):
        p = policy.add_parser(name, parents=[common, household], help=text)
        p.add_argument("--t", type=float, default=0.0, help="Years since t = 0")
        p.add_argument("--W-R", dest="W_R", type=float, default=None, help="Real wealth (default: W0)")
        p.add_argument("--dead", action="store_true", help="Evaluate the post-death controls")
        if name == "eval":
            p.add_argument("--x1", type=float, default=0.0)
            p.add_argument("--x2", type=float, default=0.0)
        else:
            p.add_argument("--grid", type=grid_shape, default=(41, 41), help="Grid points N1xN2 (default: 41x41)")
            p.add_argument("--x1-range", type=float_pair, default=(-0.1454, 0.1454))
            p.add_argument("--x2-range", type=float_pair, default=(-0.1696, 0.1696))

    simulate = groups.add_parser("simulate", help="Monte Carlo").add_subparsers(dest="command", required=True)
    p = simulate.add_parser("curves", parents=[common, household, sim], help="Expected life-cycle curves")
    p.add_argument("--thetas", type=float_list, default=float_list("0,0.2,0.4,0.6,0.8,1.0"))
    p = simulate.add_parser("welfare", parents=[common, household, sim], help="Welfare loss of money illusion")
    p.add_argument("--theta-grid", type=float_list, default=float_list("0:1:0.1"))

    calibrate = groups.add_parser("calibrate", help="Kalman-filter estimation").add_subparsers(dest="command", required=True)
    p = calibrate.add_parser("fit", parents=[common], help="Maximum-likelihood fit (default action)")
    p.add_argument("--data", type=Path, required=True, help="Panel CSV")
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--workers", type=int, default=1, help="Processes over restarts")
    p.add_argument("--strict", action="store_true", help="Fail when the optimizer does not converge")
    p.add_argument("--params-out", type=Path, default=None, help="Fitted parameter file (default: --out when it ends in .json, else <out>/params.json)")
    p = calibrate.add_parser("filter", parents=[common], help="Filtered factor paths")
    p.add_argument("--data", type=Path, required=True, help="Panel CSV")
    p = calibrate.add_parser("synthetic", parents=[common], help="Synthetic panel from the parameters")
    p.add_argument("--months", type=int, default=750)

    verify = groups.add_parser("verify", help="Numerical verification").add_subparsers(dest="command", required=True)
    p = verify.add_parser("hjb", parents=[common, household], help="HJB residuals at sampled states")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--phases", nargs="+", default=["1", "2", "primary"], choices=["1", "2", "primary"])
    p.add_argument("--mode", default="closed", choices=["closed", "fd"], help="Derivative mode")
    p.add_argument("--c2-scale", type=float, default=1.1, help="Perturbation of c2 for the supremum check")
    p.add_argument("--report", type=Path, default=None, help="Extra copy of report.json")

    args = parser.parse_args(argv)
    if args.group == "calibrate" and args.command == "fit" and args.params_out is None \
            and args.out is not None and args.out.suffix == ".json":
        args.params_out, args.out = args.out, args.out.parent
    return args


def _household(args: argparse.Namespace, gamma: float | None = None):
    from engine.actuarial import IncomeModel, MortalityLaw
    from engine.errors import ValidationError
    from engine.household import HouseholdSpec

    if gamma is None:
        if len(args.gamma) != 1:
            raise ValidationError("This command takes a single --gamma value")
        gamma = args.gamma[0]
    return HouseholdSpec(
        gamma=gamma,
        theta=args.theta,
        delta=args.delta,
        kappa1_w=args.kappa_weight_1,
        kappa2_w=args.kappa_weight_2,
        W0=args.W0,
        mortality=MortalityLaw(b=args.gompertz_b, m=args.gompertz_m, x=args.age),
        income=IncomeModel(Y0=args.Y0, T_R=args.T_R, T=args.T),
    )


def _run_config(args: argparse.Namespace):
    from engine.montecarlo import SimConfig
    from engine.pipeline import RunConfig

    kwargs = {
        "preset": args.preset,
        "params_path": args.params,
        "kappa_factor": (args.kappa_factor_1, args.kappa_factor_2),
        "out_dir": args.out,
        "seed": args.seed,
    }
    if args.ode_step is not None:
        kwargs["ode_step"] = args.ode_step
    if hasattr(args, "gamma"):
        kwargs["household"] = _household(args, gamma=args.gamma[0] if args.command == "welfare" else None)
    if hasattr(args, "paths"):
        kwargs["sim"] = SimConfig(
            n_paths=args.paths,
            dt=args.dt,
            seed=args.seed,
            antithetic=args.antithetic,
            workers=args.workers,
            x_scheme=args.x_scheme,
            block_size=args.block_size,
        )
    return RunConfig(**kwargs)


def _dispatch(args: argparse.Namespace, cfg) -> dict:
    from engine import pipeline
    from engine.calibration import CalibrationConfig

    key = (args.group, args.command)
    if key == ("market", "yield-curve"):
        return pipeline.run_yield_curve(cfg, args.tau, (args.x1, args.x2))
    if key == ("actuarial", "table"):
        return pipeline.run_actuarial_table(cfg, args.from_age, args.to_age, args.step)
    if key == ("solve", "gammas"):
        return pipeline.run_solve_gammas(cfg)
    if key == ("policy", "eval"):
        return pipeline.run_policy_eval(cfg, args.t, args.W_R, (args.x1, args.x2), alive=not args.dead)
    if key == ("policy", "surface"):
        x1 = np.linspace(*args.x1_range, args.grid[0])
        x2 = np.linspace(*args.x2_range, args.grid[1])
        return pipeline.run_policy_surface(cfg, args.t, args.W_R, x1, x2, alive=not args.dead)
    if key == ("simulate", "curves"):
        return pipeline.run_simulate_curves(cfg, args.thetas)
    if key == ("simulate", "welfare"):
        return pipeline.run_simulate_welfare(cfg, args.gamma, args.theta_grid)
    if key == ("calibrate", "fit"):
        calibration = CalibrationConfig(
            restarts=args.restarts,
            max_iter=args.max_iter,
            seed=args.seed,
            workers=args.workers,
            strict=args.strict,
        )
        return pipeline.run_calibrate_fit(cfg, args.data, calibration, args.params_out)
    if key == ("calibrate", "filter"):
        return pipeline.run_calibrate_filter(cfg, args.data)
    if key == ("calibrate", "synthetic"):
        return pipeline.run_calibrate_synthetic(cfg, n_months=args.months)
    if key == ("verify", "hjb"):
        report = pipeline.run_verify_hjb(cfg, args.samples, args.phases, args.mode, args.c2_scale)
        if args.report is not None:
            args.report.parent.mkdir(parents=True, exist_ok=True)
            shutil.copyfile(cfg.out_dir / "report.json", args.report)
        return report
    raise AssertionError(f"Unhandled command {key}")


def main(argv: list[str] | None = None) -> int:
    """Main entry point.

    Returns:
        Exit code (0 = success, 2 = invalid input, 3 = numerical failure)
    """
    try:
        args = parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID

    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    from engine.errors import NumericalError, ValidationError

    try:
        cfg = _run_config(args)
        report = _dispatch(args, cfg)
    except NumericalError as e:
        print(f"Error: Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, FileNotFoundError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_INVALID

    print(f"Done: {report['command']}")
    print(f"Output dir: {cfg.out_dir}")
    for name in [*report.get("outputs", []), "report.json"]:
        print(f"  {name}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
