"""HJB residuals of the closed-form candidates.

Each residual substitutes the candidate value function and the closed-form
controls into the HJB equation of its phase and sums the generator term by
term. A relative residual divides by the largest summand in absolute value.

Phases follow engine.strategies: "1" after death (value G1 in f1), "2" in
retirement (G2 in f2) and "primary" in working life (G in f2 on the surplus).
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from statsmodels.tools.numdiff import approx_fprime, approx_hess

from engine.actuarial import hazard, human_capital
from engine.errors import DomainEdge, ValidationError
from engine.household import HouseholdSpec
from engine.market import Market, expected_inflation, price_of_risk, real_short_rate
from engine.riccati import GammaSolution, eval_f1, eval_f2, f_derivatives
from engine.strategies import (
    PHASES,
    X1_RANGE,
    X2_RANGE,
    policy_phase1,
    policy_phase2,
    policy_phase3,
    utility,
)

logger = logging.getLogger(__name__)

EDGE_GUARD = 1e-3
SAMPLE_MARGIN = 0.5
WEALTH_RANGE = (10.0, 500.0)
PI_RANGE = (0.5, 3.0)
FD_STEP = 1e-3


@dataclass(frozen=True)
class HJBState:
    t: float
    w: float
    pi: float
    X: tuple[float, float]


@dataclass(frozen=True)
class ResidualSample:
    """HJB residual at one state.

    w is W_R in phases "1" and "2" and the surplus W_Y in the primary phase.
    """

    phase: str
    state: HJBState
    residual: float
    scale: float
    terms: dict = field(default_factory=dict, compare=False)

    @property
    def relative(self) -> float:
        return self.residual / self.scale


@dataclass(frozen=True)
class _Derivatives:
    G: float
    G_t: float
    G_w: float
    G_ww: float
    G_pi: float
    G_pipi: float
    G_X: np.ndarray
    G_XX: np.ndarray
    G_wpi: float
    G_wX: np.ndarray
    G_piX: np.ndarray


def _closed_form(gamma: float, theta: float, w: float, pi: float, F: float, F_t: float,
                 F_x: np.ndarray, F_xx: np.ndarray) -> _Derivatives:
    """Partial derivatives of w^(1-g) pi^(theta (1-g)) F^g / (1 - g)."""
    g = gamma
    e = theta * (1.0 - g)
    P = pi ** e
    wl = w ** (1.0 - g)
    scale = g / (1.0 - g) * wl * P * F ** (g - 1.0)
    return _Derivatives(
        G=wl * P * F ** g / (1.0 - g),
        G_t=scale * F_t,
        G_w=w ** (-g) * P * F ** g,
        G_ww=-g * w ** (-g - 1.0) * P * F ** g,
        G_pi=theta * wl * pi ** (e - 1.0) * F ** g,
        G_pipi=theta * (e - 1.0) * wl * pi ** (e - 2.0) * F ** g,
        G_X=scale * F_x,
        G_XX=-g * wl * P * F ** (g - 2.0) * np.outer(F_x, F_x) + scale * F_xx,
        G_wpi=theta * (1.0 - g) * w ** (-g) * pi ** (e - 1.0) * F ** g,
        G_wX=g * w ** (-g) * P * F ** (g - 1.0) * F_x,
        G_piX=theta * g * wl * pi ** (e - 1.0) * F ** (g - 1.0) * F_x,
    )


def _candidate(phase: str, hh: HouseholdSpec, sol: GammaSolution, t: float, w: float, pi: float,
               X: np.ndarray) -> float:
    if phase == "1":
        F = eval_f1(sol, hh.delta, hh.gamma, X, t, hh.T)
    else:
        F = eval_f2(sol, hh, X, t, hh.T)
    g = hh.gamma
    return w ** (1.0 - g) * pi ** (hh.theta * (1.0 - g)) * F ** g / (1.0 - g)


def _finite_difference(phase: str, hh: HouseholdSpec, sol: GammaSolution, state: HJBState) -> _Derivatives:
    """Central differences of the candidate in (t, w, pi, X1, X2) with statsmodels numdiff."""
    z0 = np.array([state.t, state.w, state.pi, *state.X])
    eps = np.array([FD_STEP, FD_STEP * state.w, FD_STEP * state.pi, FD_STEP, FD_STEP])

    def value(z: np.ndarray) -> float:
        return _candidate(phase, hh, sol, z[0], z[1], z[2], z[3:5])

    grad = approx_fprime(z0, value, epsilon=eps, centered=True)
    hess = approx_hess(z0, value, epsilon=eps)
    return _Derivatives(
        G=value(z0),
        G_t=grad[0],
        G_w=grad[1],
        G_ww=hess[1, 1],
        G_pi=grad[2],
        G_pipi=hess[2, 2],
        G_X=grad[3:5],
        G_XX=hess[3:5, 3:5],
        G_wpi=hess[1, 2],
        G_wX=hess[1, 3:5],
        G_piX=hess[2, 3:5],
    )


def _check_state(phase: str, hh: HouseholdSpec, state: HJBState) -> None:
    if phase not in PHASES:
        raise ValidationError(f"Unknown phase {phase!r}; expected one of {PHASES}")
    if not 0.0 <= state.t < hh.T - EDGE_GUARD:
        raise DomainEdge(f"t = {state.t} is outside [0, T - {EDGE_GUARD})")
    if state.w <= 0 or state.pi <= 0:
        raise DomainEdge(f"Wealth {state.w} and price level {state.pi} must be positive")
    if phase == "primary" and state.t >= hh.T_R:
        raise DomainEdge(f"Working-life phase needs t < T_R = {hh.T_R}")
    if phase == "2" and state.t < hh.T_R:
        raise DomainEdge(f"Retirement phase needs t >= T_R = {hh.T_R}")


def _derivatives(phase, hh, sol, state, mode, fd=None):
    if mode == "fd":
        return _finite_difference(phase, hh, sol, state)
    if fd is None:
        fd = f_derivatives(sol, hh, np.asarray(state.X, dtype=float), state.t)
    if phase == "1":
        return _closed_form(hh.gamma, hh.theta, state.w, state.pi, fd.f1, fd.f1_t, fd.f1_x, fd.f1_xx)
    return _closed_form(hh.gamma, hh.theta, state.w, state.pi, fd.f2, fd.f2_t, fd.f2_x, fd.f2_xx)


def hjb_residual(
    phase: str,
    hh: HouseholdSpec,
    market: Market,
    sol: GammaSolution,
    state: HJBState,
    mode: str = "closed",
    c2_scale: float = 1.0,
) -> ResidualSample:
    """Evaluate the HJB equation of a phase at one state.

    Args:
        phase: "1", "2" or "primary"
        state: (t, w, pi, X) strictly inside the domain
        mode: "closed" for analytic derivatives, "fd" for finite differences
        c2_scale: Multiplier on the optimal c2 (1 = optimal control)

    Raises:
        DomainEdge: If the state lies on or outside the domain boundary
    """
    if mode not in ("closed", "fd"):
        raise ValidationError(f"Unknown derivative mode {mode!r}")
    _check_state(phase, hh, state)
    params = market.params
    t, w, pi = state.t, state.w, state.pi
    X = np.asarray(state.X, dtype=float)
    g = hh.gamma
    fd = f_derivatives(sol, hh, X, t)
    d = _derivatives(phase, hh, sol, state, mode, fd)

    if phase == "1":
        policy = policy_phase3(hh, market, sol, t, w, X)
        hc = 0.0
    elif phase == "2":
        policy = policy_phase2(hh, market, sol, t, w, X)
        hc = 0.0
    else:
        hc = human_capital(hh.income, hh.mortality, market.coeffs, t, X)
        policy = policy_phase1(hh, market, sol, t, w - hc, X)
    c2 = policy.c2 * c2_scale
    eta = market.universe.Sigma.T @ policy.beta - params.sigma_Pi
    lam_vec = price_of_risk(params, X)
    r = float(real_short_rate(params, X))
    pi_e = float(expected_inflation(params, X))
    sx = params.Sigma_X
    s_pi = params.sigma_Pi

    terms = {
        "G_t": d.G_t,
        "factor_drift": -d.G_X @ (params.K_X @ X),
        "price_drift": d.G_pi * pi * pi_e,
        "wealth_diffusion": 0.5 * d.G_ww * w ** 2 * (eta @ eta),
        "price_diffusion": 0.5 * d.G_pipi * pi ** 2 * (s_pi @ s_pi),
        "factor_diffusion": 0.5 * np.trace(sx.T @ d.G_XX @ sx),
        "wealth_factor": w * eta @ (sx.T @ d.G_wX),
        "wealth_price": d.G_wpi * w * pi * (eta @ s_pi),
        "price_factor": pi * d.G_piX @ (sx @ s_pi),
    }
    wealth_drift = w * (r + eta @ (lam_vec - s_pi))
    if phase == "1":
        terms["utility_c2"] = float(utility(c2, pi, g, hh.theta))
        terms["discount"] = -hh.delta * d.G
        terms["wealth_drift"] = d.G_w * (wealth_drift - c2)
    else:
        lam = float(hazard(hh.mortality, t))
        c1 = policy.c1
        premium = policy.premium_I
        w_dead = w - hc + premium / lam
        f1 = fd.f1
        bequest = w_dead ** (1.0 - g) * pi ** (hh.theta * (1.0 - g)) * f1 ** g / (1.0 - g)
        terms["utility_c1"] = hh.kappa1_w * float(utility(c1, pi, g, hh.theta))
        terms["utility_c2"] = hh.kappa2_w * float(utility(c2, pi, g, hh.theta))
        terms["bequest"] = hh.kappa2_w * lam * bequest
        terms["discount"] = -(lam + hh.delta) * d.G
        terms["wealth_drift"] = d.G_w * (wealth_drift + lam * hc - premium - c1 - c2)

    values = np.array(list(terms.values()), dtype=float)
    residual = float(values.sum())
    scale = float(np.max(np.abs(values)))
    return ResidualSample(phase=phase, state=state, residual=residual, scale=scale, terms=terms)


def foc_check(
    phase: str,
    hh: HouseholdSpec,
    market: Market,
    sol: GammaSolution,
    state: HJBState,
) -> dict[str, float]:
    """Relative errors of the first-order conditions at the closed-form controls.

    Keys: "c1", "c2" (marginal-utility inversion), "portfolio" (linear FOC
    for the risky weights), "insurance" (alive phases only) and "max".
    """
    _check_state(phase, hh, state)
    params = market.params
    t, w, pi = state.t, state.w, state.pi
    X = np.asarray(state.X, dtype=float)
    g, theta = hh.gamma, hh.theta
    d = _derivatives(phase, hh, sol, state, "closed")

    def marginal(c: float) -> float:
        return c ** (-g) * pi ** (theta * (1.0 - g))

    report: dict[str, float] = {}
    if phase == "1":
        policy = policy_phase3(hh, market, sol, t, w, X)
        report["c2"] = abs(marginal(policy.c2) / d.G_w - 1.0)
    else:
        if phase == "2":
            policy = policy_phase2(hh, market, sol, t, w, X)
            hc = 0.0
        else:
            hc = human_capital(hh.income, hh.mortality, market.coeffs, t, X)
            policy = policy_phase1(hh, market, sol, t, w - hc, X)
        report["c1"] = abs(hh.kappa1_w * marginal(policy.c1) / d.G_w - 1.0) if hh.kappa1_w > 0 else 0.0
        report["c2"] = abs(hh.kappa2_w * marginal(policy.c2) / d.G_w - 1.0)
        lam = float(hazard(hh.mortality, t))
        w_dead = w - hc + policy.premium_I / lam
        f1 = eval_f1(sol, hh.delta, g, X, t, hh.T)
        phi1_w = w_dead ** (-g) * pi ** (theta * (1.0 - g)) * f1 ** g
        report["insurance"] = abs(hh.kappa2_w * phi1_w / d.G_w - 1.0)

    inv = market.universe.Sigma_T_inv
    bracket = d.G_w * (price_of_risk(params, X) - params.sigma_Pi) + d.G_wpi * pi * params.sigma_Pi
    bracket = bracket + params.Sigma_X.T @ d.G_wX
    weights = -inv @ bracket / (w * d.G_ww) + inv @ params.sigma_Pi
    report["portfolio"] = float(np.max(np.abs(weights - policy.beta)) / max(np.max(np.abs(policy.beta)), 1e-300))
    report["max"] = max(report.values())
    return report


# =============================================================================
# Sampling and batteries
# =============================================================================


def sample_states(n: int, phase: str, hh: HouseholdSpec, rng: np.random.Generator) -> list[HJBState]:
    """Uniform draws from the interior sampling box of a phase."""
    if phase not in PHASES:
        raise ValidationError(f"Unknown phase {phase!r}; expected one of {PHASES}")
    if phase == "primary":
        t_range = (SAMPLE_MARGIN, hh.T_R - SAMPLE_MARGIN)
    elif phase == "2":
        t_range = (hh.T_R + SAMPLE_MARGIN, hh.T - SAMPLE_MARGIN)
    else:
        t_range = (SAMPLE_MARGIN, hh.T - SAMPLE_MARGIN)
    t = rng.uniform(*t_range, n)
    w = rng.uniform(*WEALTH_RANGE, n)
    pi = rng.uniform(*PI_RANGE, n)
    x1 = rng.uniform(*X1_RANGE, n)
    x2 = rng.uniform(*X2_RANGE, n)
    return [HJBState(float(t[i]), float(w[i]), float(pi[i]), (float(x1[i]), float(x2[i]))) for i in range(n)]


def residual_battery(
    phase: str,
    hh: HouseholdSpec,
    market: Market,
    sol: GammaSolution,
    n: int = 200,
    seed: int = 0,
    mode: str = "closed",
    c2_scale: float = 1.0,
    states: Optional[list[HJBState]] = None,
) -> pd.DataFrame:
    """Residuals at n sampled states, one row per state."""
    if states is None:
        states = sample_states(n, phase, hh, np.random.default_rng(seed))
    rows = []
    for s in states:
        r = hjb_residual(phase, hh, market, sol, s, mode=mode, c2_scale=c2_scale)
        rows.append({
            "phase": phase,
            "t": s.t,
            "w": s.w,
            "pi": s.pi,
            "x1": s.X[0],
            "x2": s.X[1],
            "residual": r.residual,
            "scale": r.scale,
            "relative": r.relative,
        })
    df = pd.DataFrame(rows)
    logger.info(
        "HJB battery phase %s (%s, c2 x %.3g): max |relative| %.3e over %d states",
        phase, mode, c2_scale, df["relative"].abs().max(), len(df),
    )
    return df


def battery_summary(df: pd.DataFrame) -> dict[str, float]:
    """Largest relative residual and the share of nonpositive residuals."""
    return {
        "n_states": int(len(df)),
        "max_abs_relative": float(df["relative"].abs().max()),
        "fraction_nonpositive": float((df["residual"] <= 0).mean()),
    }
