"""Closed-form optimal controls for the three life phases.

Phase "1": after the breadwinner's death (consumption c2 only).
Phase "2": retired, breadwinner alive (c1, c2, insurance premium).
Phase "primary": working life, with human capital folded into the surplus
W_Y = W_R + Y_tilde(t, X).

All functions are pure and evaluate over immutable solved objects.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd

from engine.actuarial import hazard, human_capital, human_capital_gradient
from engine.errors import (
    HorizonExhausted,
    InconsistentSign,
    NonpositiveSurplus,
    NonpositiveWealth,
    ValidationError,
)
from engine.household import HouseholdSpec
from engine.market import ArrayLike, Market, price_of_risk
from engine.riccati import FDerivatives, GammaSolution, eval_f1, eval_f1_gradient, eval_f2, f_derivatives

logger = logging.getLogger(__name__)

HORIZON_GUARD = 1e-6
X1_RANGE = (-0.1454, 0.1454)
X2_RANGE = (-0.1696, 0.1696)

PHASES = ("1", "2", "primary")


@dataclass(frozen=True)
class Decomposition:
    """Surplus portfolio split into myopic, inflation and intertemporal hedges."""

    smd: np.ndarray
    ifhd: np.ndarray
    ithd: np.ndarray

    @property
    def total(self) -> np.ndarray:
        return self.smd + self.ifhd + self.ithd


@dataclass(frozen=True)
class PolicyEvaluation:
    """Optimal controls at one state.

    Portfolio weights refer to (3y nominal, 10y nominal, 10y linker, equity);
    cash holds the residual. c1, premium_I, face_value and the bequest ratio
    are None after death.
    """

    phase: str
    t: float
    X: np.ndarray
    W_R: float
    human_capital: float
    c1: Optional[float]
    c2: float
    alpha: np.ndarray
    beta: np.ndarray
    premium_I: Optional[float]
    face_value: Optional[float]
    bequest_wealth_ratio: Optional[float]
    decomposition: Decomposition

    @property
    def surplus(self) -> float:
        return self.W_R + self.human_capital

    @property
    def cash_weight(self) -> float:
        return cash_weight(self.alpha)

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "t": self.t,
            "X": self.X.tolist(),
            "W_R": self.W_R,
            "human_capital": self.human_capital,
            "surplus": self.surplus,
            "c1": self.c1,
            "c2": self.c2,
            "alpha": self.alpha.tolist(),
            "cash_weight": self.cash_weight,
            "beta": self.beta.tolist(),
            "premium_I": self.premium_I,
            "face_value": self.face_value,
            "bequest_wealth_ratio": self.bequest_wealth_ratio,
            "decomposition": {
                "SMD": self.decomposition.smd.tolist(),
                "IFHD": self.decomposition.ifhd.tolist(),
                "ITHD": self.decomposition.ithd.tolist(),
            },
        }


def cash_weight(alpha: ArrayLike) -> float:
    """Fraction of real wealth in the nominal cash account."""
    return float(1.0 - np.sum(alpha))


def utility(c: ArrayLike, pi: ArrayLike, gamma: float, theta: float) -> np.ndarray:
    """CRRA utility of a real/nominal consumption mix: c^(1-g) pi^(theta (1-g)) / (1-g)."""
    c = np.asarray(c, dtype=float)
    pi = np.asarray(pi, dtype=float)
    return c ** (1.0 - gamma) * pi ** (theta * (1.0 - gamma)) / (1.0 - gamma)


# =============================================================================
# Helpers
# =============================================================================


def _check_solution(hh: HouseholdSpec, sol: GammaSolution) -> None:
    if sol.gamma != hh.gamma or sol.theta != hh.theta:
        raise ValidationError(
            f"Gamma solution solved for (gamma={sol.gamma}, theta={sol.theta}), "
            f"household has (gamma={hh.gamma}, theta={hh.theta})"
        )


def _check_time(hh: HouseholdSpec, t: float) -> None:
    if t < 0:
        raise ValidationError(f"t must be nonnegative, got {t}")
    if hh.T - t < HORIZON_GUARD:
        raise HorizonExhausted(f"t = {t} is within {HORIZON_GUARD} of the horizon T = {hh.T}")


def _hedge_terms(
    hh: HouseholdSpec,
    market: Market,
    X: np.ndarray,
    log_gradient: np.ndarray,
) -> Decomposition:
    """The three beta components for a given gradient of log f."""
    gamma, theta = hh.gamma, hh.theta
    params = market.params
    inv = market.universe.Sigma_T_inv
    smd = inv @ price_of_risk(params, X) / gamma
    ifhd = (gamma - 1.0) / gamma * (1.0 - theta) * (inv @ params.sigma_Pi)
    ithd = inv @ (params.Sigma_X.T @ log_gradient)
    return Decomposition(smd=smd, ifhd=ifhd, ithd=ithd)


def _alive_policy(
    phase: str,
    hh: HouseholdSpec,
    market: Market,
    t: float,
    W_R: float,
    X: np.ndarray,
    hc: float,
    hc_grad: np.ndarray,
    fd: FDerivatives,
) -> PolicyEvaluation:
    k1, k2 = hh.weight_roots
    w_y = W_R + hc
    dec = _hedge_terms(hh, market, X, fd.f2_x / fd.f2)
    beta = dec.total
    lam = float(hazard(hh.mortality, t))
    ratio = k2 * fd.f1 / fd.f2
    premium = lam * (ratio * w_y - W_R)
    if W_R == 0.0:
        alpha = np.full(4, np.nan)
    else:
        inv = market.universe.Sigma_T_inv
        hedge = inv @ (market.params.Sigma_X.T @ hc_grad + hc * market.params.sigma_Pi)
        alpha = (w_y * beta - hedge) / W_R
    return PolicyEvaluation(
        phase=phase,
        t=float(t),
        X=X,
        W_R=float(W_R),
        human_capital=float(hc),
        c1=float(k1 * w_y / fd.f2),
        c2=float(k2 * w_y / fd.f2),
        alpha=alpha,
        beta=beta,
        premium_I=float(premium),
        face_value=float(premium / lam),
        bequest_wealth_ratio=float(ratio),
        decomposition=dec,
    )


# =============================================================================
# Policies by phase
# =============================================================================


def policy_phase1(
    hh: HouseholdSpec,
    market: Market,
    sol: GammaSolution,
    t: float,
    W_R: float,
    X: ArrayLike,
) -> PolicyEvaluation:
    """Working-life controls (breadwinner alive, t < T_R).

    Raises:
        NonpositiveSurplus: If W_R + Y_tilde(t, X) <= 0
    """
    _check_solution(hh, sol)
    _check_time(hh, t)
    if t >= hh.T_R:
        raise ValidationError(f"Working-life policy needs t < T_R = {hh.T_R}, got {t}")
    X = np.asarray(X, dtype=float)
    hc = human_capital(hh.income, hh.mortality, market.coeffs, t, X)
    if W_R + hc <= 0:
        raise NonpositiveSurplus(f"Surplus W_R + Y_tilde = {W_R + hc:.6g} is not positive at t = {t}")
    hc_grad = human_capital_gradient(hh.income, hh.mortality, market.coeffs, t, X)
    fd = f_derivatives(sol, hh, X, t)
    return _alive_policy("primary", hh, market, t, W_R, X, hc, hc_grad, fd)


def policy_phase2(
    hh: HouseholdSpec,
    market: Market,
    sol: GammaSolution,
    t: float,
    W_R: float,
    X: ArrayLike,
) -> PolicyEvaluation:
    """Retirement controls (breadwinner alive, t >= T_R); alpha equals beta.

    Raises:
        NonpositiveWealth: If W_R <= 0
    """
    _check_solution(hh, sol)
    _check_time(hh, t)
    if t < hh.T_R:
        raise ValidationError(f"Retirement policy needs t >= T_R = {hh.T_R}, got {t}")
    if W_R <= 0:
        raise NonpositiveWealth(f"Real wealth {W_R:.6g} is not positive at t = {t}")
    X = np.asarray(X, dtype=float)
    fd = f_derivatives(sol, hh, X, t)
    return _alive_policy("2", hh, market, t, W_R, X, 0.0, np.zeros(2), fd)


def policy_phase3(
    hh: HouseholdSpec,
    market: Market,
    sol: GammaSolution,
    t: float,
    W_R: float,
    X: ArrayLike,
) -> PolicyEvaluation:
    """Controls of the surviving family after the breadwinner's death.

    Raises:
        NonpositiveWealth: If W_R <= 0
        HorizonExhausted: Within 1e-6 of T, where c2 diverges
    """
    _check_solution(hh, sol)
    _check_time(hh, t)
    if W_R <= 0:
        raise NonpositiveWealth(f"Real wealth {W_R:.6g} is not positive at t = {t}")
    X = np.asarray(X, dtype=float)
    f1 = eval_f1(sol, hh.delta, hh.gamma, X, t, hh.T)
    f1_x = eval_f1_gradient(sol, hh.delta, hh.gamma, X, t, hh.T)
    dec = _hedge_terms(hh, market, X, f1_x / f1)
    beta = dec.total
    return PolicyEvaluation(
        phase="1",
        t=float(t),
        X=X,
        W_R=float(W_R),
        human_capital=0.0,
        c1=None,
        c2=float(W_R / f1),
        alpha=beta.copy(),
        beta=beta,
        premium_I=None,
        face_value=None,
        bequest_wealth_ratio=None,
        decomposition=dec,
    )


def evaluate_policy(
    hh: HouseholdSpec,
    market: Market,
    sol: GammaSolution,
    t: float,
    W_R: float,
    X: ArrayLike,
    alive: bool = True,
) -> PolicyEvaluation:
    """Dispatch on the alive flag and on t versus the retirement time."""
    if not alive:
        return policy_phase3(hh, market, sol, t, W_R, X)
    if t < hh.T_R:
        return policy_phase1(hh, market, sol, t, W_R, X)
    return policy_phase2(hh, market, sol, t, W_R, X)


def decompose_beta(
    hh: HouseholdSpec,
    market: Market,
    sol: GammaSolution,
    t: float,
    X: ArrayLike,
) -> Decomposition:
    """(SMD, IFHD, ITHD) of the alive-phase surplus portfolio."""
    _check_solution(hh, sol)
    _check_time(hh, t)
    X = np.asarray(X, dtype=float)
    fd = f_derivatives(sol, hh, X, t)
    return _hedge_terms(hh, market, X, fd.f2_x / fd.f2)


def bequest_wealth_ratio(hh: HouseholdSpec, sol: GammaSolution, t: float, X: ArrayLike) -> float:
    """kappa2_w^(1/gamma) f1 / f2; 1 at the horizon when kappa1_w = 0."""
    if hh.kappa1_w == 0.0:
        return 1.0
    if hh.T - t < HORIZON_GUARD:
        t = hh.T - HORIZON_GUARD
    _, k2 = hh.weight_roots
    f1 = eval_f1(sol, hh.delta, hh.gamma, X, t, hh.T)
    f2 = eval_f2(sol, hh, X, t, hh.T)
    return float(k2 * f1 / f2)


# =============================================================================
# Value function and welfare
# =============================================================================


def value_function(
    phase: str,
    hh: HouseholdSpec,
    sol: GammaSolution,
    t: float,
    w: float,
    pi: float,
    X: ArrayLike,
) -> float:
    """Closed-form candidate value w^(1-g) pi^(theta (1-g)) F^g / (1 - g).

    F is f1 in phase "1" and f2 otherwise; w is W_R in phases "1" and "2"
    and the surplus W_Y in the primary phase.
    """
    if phase not in PHASES:
        raise ValidationError(f"Unknown phase {phase!r}; expected one of {PHASES}")
    if w <= 0:
        raise NonpositiveWealth(f"Wealth argument {w:.6g} is not positive")
    if phase == "1":
        F = eval_f1(sol, hh.delta, hh.gamma, X, t, hh.T)
    else:
        F = eval_f2(sol, hh, X, t, hh.T)
    g = hh.gamma
    return float(w ** (1.0 - g) * pi ** (sol.theta * (1.0 - g)) * F ** g / (1.0 - g))


def welfare_loss(
    hh: HouseholdSpec,
    market: Market,
    sol_theta0: GammaSolution,
    v_sub: float,
    X0: ArrayLike = (0.0, 0.0),
    W0: Optional[float] = None,
) -> float:
    """Fraction of initial surplus an optimizer would give up to avoid the money-illusion policy.

    Args:
        sol_theta0: Gamma solution at theta = 0 for the household's gamma
        v_sub: Value of the suboptimal policy, measured with theta = 0 utility
        X0: Initial factor state
        W0: Initial wealth (defaults to hh.W0)

    Raises:
        InconsistentSign: If (1 - gamma) v_sub <= 0
    """
    if sol_theta0.theta != 0.0 or sol_theta0.gamma != hh.gamma:
        raise ValidationError("Welfare loss needs the theta = 0 Gamma solution for the household's gamma")
    g = hh.gamma
    scaled = (1.0 - g) * v_sub
    if not scaled > 0:
        raise InconsistentSign(f"(1 - gamma) * V_sub = {scaled:.6g} must be positive")
    W0 = hh.W0 if W0 is None else W0
    X0 = np.asarray(X0, dtype=float)
    hh0 = hh.with_theta(0.0)
    w_y = W0 + human_capital(hh.income, hh.mortality, market.coeffs, 0.0, X0)
    f2 = eval_f2(sol_theta0, hh0, X0, 0.0, hh.T)
    equivalent = scaled ** (1.0 / (1.0 - g)) / f2 ** (g / (1.0 - g))
    return float(1.0 - equivalent / w_y)


# =============================================================================
# Surfaces
# =============================================================================


def policy_surface(
    hh: HouseholdSpec,
    market: Market,
    sol: GammaSolution,
    t: float,
    W_R: float,
    x1_grid: Optional[ArrayLike] = None,
    x2_grid: Optional[ArrayLike] = None,
    alive: bool = True,
) -> pd.DataFrame:
    """Controls on a factor grid at fixed (t, W_R), one row per (x1, x2)."""
    x1_grid = np.linspace(*X1_RANGE, 41) if x1_grid is None else np.asarray(x1_grid, dtype=float)
    x2_grid = np.linspace(*X2_RANGE, 41) if x2_grid is None else np.asarray(x2_grid, dtype=float)
    rows = []
    for x1 in x1_grid:
        for x2 in x2_grid:
            p = evaluate_policy(hh, market, sol, t, W_R, (x1, x2), alive=alive)
            row = {
                "x1": x1,
                "x2": x2,
                "c1": p.c1,
                "c2": p.c2,
                "premium_I": p.premium_I,
                "face_value": p.face_value,
                "bequest_wealth_ratio": p.bequest_wealth_ratio,
            }
            row.update({f"alpha_{i + 1}": a for i, a in enumerate(p.alpha)})
            row.update({f"beta_{i + 1}": b for i, b in enumerate(p.beta)})
            rows.append(row)
    logger.debug("Policy surface: %d states at t=%.3f", len(rows), t)
    return pd.DataFrame(rows)
