"""Run orchestration: resolve configuration, call the engine, write outputs.

Every run_* function writes its tables into the output directory together
with a report.json summary and returns that summary. Reports never carry
timings, so identical inputs give identical files.
"""
import logging
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from engine.actuarial import actuarial_table, human_capital
from engine.calibration import (
    DEFAULT_CHI,
    YIELD_COLUMNS,
    CalibrationConfig,
    build_state_space,
    filter_states,
    fit_mle,
    read_panel,
    simulate_panel,
    write_panel,
)
from engine.errors import QSingular, ValidationError
from engine.hjb import battery_summary, foc_check, residual_battery, sample_states
from engine.household import HouseholdSpec
from engine.io import read_json, write_csv, write_json
from engine.market import DEFAULT_ODE_STEP, Market, MarketParams, build_market, yield_curve
from engine.montecarlo import SimConfig, expected_curves, welfare_curve
from engine.presets import DEFAULT_PRESET, dump_params_file, load_params_file, load_preset
from engine.riccati import build_coefficients, radon_solve, solve_for_household
from engine.strategies import evaluate_policy, policy_surface

logger = logging.getLogger(__name__)

OUT_ENV = "MI_LIFECYCLE_OUT"
DEFAULT_OUT = "out"


@dataclass
class RunConfig:
    """Inputs shared by every subcommand.

    Market parameters resolve as flags > parameter file > preset; giving both
    a preset and a file is an error.
    """

    preset: Optional[str] = None
    params_path: Optional[Path] = None
    kappa_factor: tuple[Optional[float], Optional[float]] = (None, None)
    household: HouseholdSpec = field(default_factory=HouseholdSpec)
    sim: SimConfig = field(default_factory=SimConfig)
    out_dir: Optional[Path] = None
    seed: int = 42
    ode_step: float = DEFAULT_ODE_STEP

    def __post_init__(self):
        if self.preset is not None and self.params_path is not None:
            raise ValidationError("Give either a preset or a parameter file, not both")
        if self.preset is None and self.params_path is None:
            self.preset = DEFAULT_PRESET
        if self.params_path is not None:
            self.params_path = Path(self.params_path)
        if self.out_dir is None:
            self.out_dir = Path(os.environ.get(OUT_ENV, DEFAULT_OUT))
        self.out_dir = Path(self.out_dir)
        if self.out_dir.exists() and not self.out_dir.is_dir():
            raise ValidationError(f"Output path is not a directory: {self.out_dir}")

    def resolve_params(self) -> MarketParams:
        params = load_params_file(self.params_path) if self.params_path else load_preset(self.preset)
        k1, k2 = self.kappa_factor
        if k1 is not None:
            params = replace(params, kappa1=k1)
        if k2 is not None:
            params = replace(params, kappa2=k2)
        return params

    def build_market(self, tau_max: Optional[float] = None) -> Market:
        return build_market(self.resolve_params(), tau_max=tau_max or self.household.T, step=self.ode_step)

    def source(self) -> dict:
        """Provenance block for reports."""
        return {
            "preset": self.preset,
            "params_file": str(self.params_path) if self.params_path else None,
            "kappa_factor": list(self.kappa_factor),
        }


def _finish(cfg: RunConfig, report: dict) -> dict:
    report = {"source": cfg.source(), **report}
    write_json(cfg.out_dir / "report.json", report)
    return report


def _household_dict(hh: HouseholdSpec) -> dict:
    return {
        "gamma": hh.gamma,
        "theta": hh.theta,
        "delta": hh.delta,
        "kappa1_w": hh.kappa1_w,
        "kappa2_w": hh.kappa2_w,
        "W0": hh.W0,
        "Y0": hh.Y0,
        "T_R": hh.T_R,
        "T": hh.T,
    }


def run_yield_curve(cfg: RunConfig, taus: Sequence[float], X: Sequence[float] = (0.0, 0.0)) -> dict:
    """Nominal and real zero yields at the requested maturities."""
    taus = np.asarray(taus, dtype=float)
    market = cfg.build_market(tau_max=float(taus.max()))
    df = yield_curve(market.coeffs, taus, X)
    path = write_csv(cfg.out_dir / "yield_curve.csv", df)
    return _finish(cfg, {
        "command": "market yield-curve",
        "X": list(X),
        "outputs": [path.name],
        "n_maturities": int(len(df)),
    })


def run_actuarial_table(cfg: RunConfig, from_age: float, to_age: float, step: float = 1.0) -> dict:
    """Hazard, survival, income and human capital by age."""
    hh = cfg.household
    market = cfg.build_market()
    df = actuarial_table(hh.mortality, hh.income, market.coeffs, from_age, to_age, step=step)
    path = write_csv(cfg.out_dir / "actuarial_table.csv", df)
    return _finish(cfg, {
        "command": "actuarial table",
        "household": _household_dict(hh),
        "outputs": [path.name],
        "human_capital_t0": human_capital(hh.income, hh.mortality, market.coeffs, 0.0, (0.0, 0.0)),
    })


def run_solve_gammas(cfg: RunConfig) -> dict:
    """Gamma trajectories on the ODE grid plus the existence battery."""
    hh = cfg.household
    params = cfg.resolve_params()
    params.validate()
    sol = solve_for_household(params, hh, step=cfg.ode_step)
    df = pd.DataFrame({
        "tau": sol.tau_grid,
        "Gamma0": sol.Gamma0,
        "Gamma1_1": sol.Gamma1[:, 0],
        "Gamma1_2": sol.Gamma1[:, 1],
        "Gamma2_11": sol.Gamma2[:, 0, 0],
        "Gamma2_12": sol.Gamma2[:, 0, 1],
        "Gamma2_22": sol.Gamma2[:, 1, 1],
    })
    path = write_csv(cfg.out_dir / "gammas.csv", df)
    report = {
        "command": "solve gammas",
        "gamma": hh.gamma,
        "theta": hh.theta,
        "T": hh.T,
        "outputs": [path.name],
        "existence": sol.existence_report.to_dict() if sol.existence_report else None,
    }
    try:
        radon = radon_solve(build_coefficients(params, hh.gamma, hh.theta), hh.T, taus=sol.tau_grid[1:])
    except QSingular as e:
        logger.warning("Radon cross-check skipped: %s", e)
        report["radon_gap"] = None
    else:
        gap = np.max(np.abs(radon.Gamma2 - sol.Gamma2)) / max(1.0, float(np.max(np.abs(sol.Gamma2))))
        report["radon_gap"] = float(gap)
    return _finish(cfg, report)


def run_policy_eval(cfg: RunConfig, t: float, W_R: Optional[float], X: Sequence[float], alive: bool = True) -> dict:
    """Controls at one state; W_R defaults to the household's initial wealth."""
    hh = cfg.household
    market = cfg.build_market()
    sol = solve_for_household(market.params, hh, step=cfg.ode_step)
    W_R = hh.W0 if W_R is None else W_R
    policy = evaluate_policy(hh, market, sol, t, W_R, X, alive=alive)
    path = write_json(cfg.out_dir / "policy.json", policy.to_dict())
    return _finish(cfg, {
        "command": "policy eval",
        "household": _household_dict(hh),
        "outputs": [path.name],
        "policy": policy.to_dict(),
    })


def run_policy_surface(
    cfg: RunConfig,
    t: float,
    W_R: Optional[float],
    x1_grid: np.ndarray,
    x2_grid: np.ndarray,
    alive: bool = True,
) -> dict:
    """Static policy surfaces over a factor grid."""
    hh = cfg.household
    market = cfg.build_market()
    sol = solve_for_household(market.params, hh, step=cfg.ode_step)
    W_R = hh.W0 if W_R is None else W_R
    df = policy_surface(hh, market, sol, t, W_R, x1_grid, x2_grid, alive=alive)
    path = write_csv(cfg.out_dir / "policy_surface.csv", df)
    return _finish(cfg, {
        "command": "policy surface",
        "household": _household_dict(hh),
        "t": t,
        "W_R": W_R,
        "grid": [int(len(x1_grid)), int(len(x2_grid))],
        "outputs": [path.name],
    })


def run_simulate_curves(cfg: RunConfig, thetas: Sequence[float]) -> dict:
    """Expected life-cycle curves, one CSV per observable."""
    hh = cfg.household
    market = cfg.build_market()
    start = time.time()
    long = expected_curves(hh, market, cfg.sim, thetas)
    logger.info("Simulated curves for %d theta values in %.1fs", len(thetas), time.time() - start)
    outputs = []
    for name, group in long.groupby("observable", sort=False):
        table = group.drop(columns="observable").reset_index(drop=True)
        outputs.append(write_csv(cfg.out_dir / f"curve_{name}.csv", table).name)
    return _finish(cfg, {
        "command": "simulate curves",
        "household": _household_dict(hh),
        "thetas": [float(t) for t in thetas],
        "paths": cfg.sim.n_paths,
        "dt": cfg.sim.dt,
        "seed": cfg.sim.seed,
        "outputs": outputs,
    })


def run_simulate_welfare(cfg: RunConfig, gammas: Sequence[float], thetas: Sequence[float]) -> dict:
    """Welfare-loss curve over (gamma, theta)."""
    hh = cfg.household
    market = cfg.build_market()
    start = time.time()
    df = welfare_curve(hh, market, cfg.sim, gammas, thetas)
    logger.info("Welfare curve for %d points in %.1fs", len(df), time.time() - start)
    path = write_csv(cfg.out_dir / "welfare.csv", df)
    return _finish(cfg, {
        "command": "simulate welfare",
        "gammas": [float(g) for g in gammas],
        "thetas": [float(t) for t in thetas],
        "paths": cfg.sim.n_paths,
        "seed": cfg.sim.seed,
        "outputs": [path.name],
        "max_loss": float(df["loss"].max()),
    })


def run_calibrate_fit(
    cfg: RunConfig,
    data_path: Union[str, Path],
    calibration: CalibrationConfig,
    params_out: Optional[Union[str, Path]] = None,
) -> dict:
    """Maximum-likelihood fit; the fitted parameters go to a JSON parameter file."""
    panel = read_panel(data_path)
    init = cfg.resolve_params()
    result = fit_mle(panel, init, config=calibration)
    params_out = Path(params_out) if params_out else cfg.out_dir / "params.json"
    summary = result.to_dict()
    dump_params_file(
        params_out,
        result.params,
        chi=summary["chi"],
        loglik=summary["loglik"],
        stderrs=summary["stderrs"],
        converged=summary["converged"],
    )
    restarts = write_csv(cfg.out_dir / "restarts.csv", result.restarts)
    return _finish(cfg, {
        "command": "calibrate fit",
        "data": str(data_path),
        "n_observations": len(panel),
        "outputs": [params_out.name, restarts.name],
        **summary,
    })


def _chi_from_file(path: Optional[Path]) -> np.ndarray:
    if path is not None:
        data = read_json(path)
        if isinstance(data, dict) and "chi" in data:
            return np.asarray(data["chi"], dtype=float)
    return np.full(len(YIELD_COLUMNS), DEFAULT_CHI)


def run_calibrate_filter(cfg: RunConfig, data_path: Union[str, Path]) -> dict:
    """Filtered factor paths and implied short rates for a panel."""
    panel = read_panel(data_path)
    params = cfg.resolve_params()
    model = build_state_space(params, chi=_chi_from_file(cfg.params_path))
    df = filter_states(model, panel)
    path = write_csv(cfg.out_dir / "filtered_states.csv", df)
    return _finish(cfg, {
        "command": "calibrate filter",
        "data": str(data_path),
        "n_observations": len(panel),
        "outputs": [path.name],
    })


def run_calibrate_synthetic(cfg: RunConfig, n_months: int = 750, chi: Optional[Sequence[float]] = None) -> dict:
    """Synthetic panel from the resolved parameters plus its true states."""
    params = cfg.resolve_params()
    chi = None if chi is None else np.asarray(chi, dtype=float)
    panel, states = simulate_panel(params, n_months=n_months, seed=cfg.seed, chi=chi)
    panel_path = write_panel(cfg.out_dir / "panel.csv", panel)
    truth = pd.DataFrame(states, columns=["x1", "x2", "log_cpi", "log_equity"])
    truth.insert(0, "date", list(panel.dates))
    states_path = write_csv(cfg.out_dir / "states.csv", truth)
    return _finish(cfg, {
        "command": "calibrate synthetic",
        "n_months": n_months,
        "seed": cfg.seed,
        "outputs": [panel_path.name, states_path.name],
    })


def run_verify_hjb(
    cfg: RunConfig,
    samples: int = 200,
    phases: Sequence[str] = ("1", "2", "primary"),
    mode: str = "closed",
    c2_scale: Optional[float] = 1.1,
) -> dict:
    """Residual batteries for every phase, optionally repeated with perturbed c2."""
    hh = cfg.household
    market = cfg.build_market()
    sol = solve_for_household(market.params, hh, step=cfg.ode_step)
    frames, summaries = [], {}
    for k, phase in enumerate(phases):
        states = sample_states(samples, phase, hh, np.random.default_rng([cfg.seed, k]))
        df = residual_battery(phase, hh, market, sol, mode=mode, states=states)
        entry = battery_summary(df)
        entry["max_foc_error"] = max(foc_check(phase, hh, market, sol, s)["max"] for s in states)
        frames.append(df.assign(c2_scale=1.0))
        if c2_scale is not None and c2_scale != 1.0:
            perturbed = residual_battery(phase, hh, market, sol, mode=mode, c2_scale=c2_scale, states=states)
            entry["perturbed_fraction_nonpositive"] = battery_summary(perturbed)["fraction_nonpositive"]
            frames.append(perturbed.assign(c2_scale=c2_scale))
        summaries[phase] = entry
    path = write_csv(cfg.out_dir / "hjb_residuals.csv", pd.concat(frames, ignore_index=True))
    return _finish(cfg, {
        "command": "verify hjb",
        "household": _household_dict(hh),
        "samples": samples,
        "mode": mode,
        "c2_scale": c2_scale,
        "outputs": [path.name],
        "phases": summaries,
    })
