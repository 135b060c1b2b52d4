"""Gompertz mortality, deterministic labour income and human capital."""
import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
import pandas as pd
from scipy.integrate import simpson

from engine.errors import ValidationError
from engine.market import ArrayLike, BondCoefficients
from engine.quadrature import integrate

logger = logging.getLogger(__name__)

HUMAN_CAPITAL_RTOL = 1e-8


@dataclass(frozen=True)
class MortalityLaw:
    """Gompertz force of mortality (1/b) exp((x + t - m) / b).

    Attributes:
        b: Dispersion in years
        m: Modal age in years
        x: Age at t = 0
    """

    b: float = 9.5
    m: float = 86.3
    x: float = 35.0

    def __post_init__(self):
        if self.b <= 0:
            raise ValidationError(f"Gompertz dispersion b must be positive, got {self.b}")


@dataclass(frozen=True)
class IncomeModel:
    """Real labour income Y_t = Y0 exp(int_0^t g(s) ds) before retirement.

    The growth rate is a0 + a1 (offset + t) + a2 (offset + t)^2.

    Attributes:
        Y0: Initial income, thousands of USD per year
        growth: Polynomial coefficients (a0, a1, a2)
        age_offset: Argument offset of the growth polynomial
        T_R: Retirement time in years from t = 0
        T: Planning horizon in years
    """

    Y0: float = 25.0
    growth: tuple[float, float, float] = (0.1682, -0.00646, 0.00006)
    age_offset: float = 45.0
    T_R: float = 30.0
    T: float = 60.0

    def __post_init__(self):
        object.__setattr__(self, "growth", tuple(float(a) for a in self.growth))
        if len(self.growth) != 3:
            raise ValidationError("Income growth needs three polynomial coefficients")
        if self.Y0 < 0:
            raise ValidationError(f"Initial income must be nonnegative, got {self.Y0}")
        if not 0 < self.T_R < self.T:
            raise ValidationError(f"Need 0 < T_R < T, got T_R={self.T_R}, T={self.T}")


# =============================================================================
# Mortality
# =============================================================================


def _initial_scale(law: MortalityLaw, t: ArrayLike = 0.0) -> np.ndarray:
    """b * hazard at age x + t, i.e. exp((x + t - m) / b)."""
    return np.exp((law.x + np.asarray(t, dtype=float) - law.m) / law.b)


def hazard(law: MortalityLaw, t: ArrayLike) -> Union[float, np.ndarray]:
    """Force of mortality at age x + t."""
    return _initial_scale(law, t) / law.b


def survival(law: MortalityLaw, t: ArrayLike) -> Union[float, np.ndarray]:
    """Probability that a life aged x survives t more years."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("Survival horizon must be nonnegative")
    return np.exp(-_initial_scale(law) * np.expm1(t / law.b))


def conditional_survival(law: MortalityLaw, t: ArrayLike, u: ArrayLike) -> Union[float, np.ndarray]:
    """Probability that a life aged x + t survives u more years."""
    u = np.asarray(u, dtype=float)
    return np.exp(-_initial_scale(law, t) * np.expm1(u / law.b))


def sample_death_time(law: MortalityLaw, uniforms: ArrayLike) -> np.ndarray:
    """Invert the survival function: returns t with survival(t) = u.

    A uniform of 0 maps to +inf (the life never dies within any horizon).
    """
    u = np.asarray(uniforms, dtype=float)
    with np.errstate(divide="ignore"):
        return law.b * np.log1p(-np.log(u) / _initial_scale(law))


def life_expectancy(law: MortalityLaw, horizon: float = 120.0) -> float:
    """Expected remaining lifetime at age x, truncated at horizon."""
    return float(integrate(lambda s: np.atleast_1d(survival(law, s)), 0.0, horizon, rtol=1e-10)[0])


# =============================================================================
# Income
# =============================================================================


def income_growth(model: IncomeModel, t: ArrayLike) -> Union[float, np.ndarray]:
    """Instantaneous real income growth rate g(t)."""
    a0, a1, a2 = model.growth
    age = model.age_offset + np.asarray(t, dtype=float)
    return a0 + a1 * age + a2 * age ** 2


def cumulative_growth(model: IncomeModel, t: ArrayLike) -> Union[float, np.ndarray]:
    """int_0^t g(s) ds in closed form."""
    a0, a1, a2 = model.growth
    o = model.age_offset
    t = np.asarray(t, dtype=float)
    return a0 * t + a1 * ((o + t) ** 2 - o ** 2) / 2.0 + a2 * ((o + t) ** 3 - o ** 3) / 3.0


def income_path(model: IncomeModel, t: ArrayLike) -> Union[float, np.ndarray]:
    """Real income at time t; zero from retirement on."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("Income time must be nonnegative")
    return np.where(t < model.T_R, model.Y0 * np.exp(cumulative_growth(model, t)), 0.0)


# =============================================================================
# Human capital
# =============================================================================


def _human_capital_integrals(
    model: IncomeModel,
    law: MortalityLaw,
    coeffs: BondCoefficients,
    t: float,
    X: ArrayLike,
) -> np.ndarray:
    """[Y_tilde, dY_tilde/dX1, dY_tilde/dX2] by adaptive quadrature over u = s - t."""
    X = np.asarray(X, dtype=float)
    if t >= model.T_R or model.Y0 == 0.0:
        return np.zeros(3)
    if coeffs.tau_max < model.T_R - t - 1e-9:
        raise ValidationError(f"Bond coefficients solved only to tau={coeffs.tau_max}, need {model.T_R - t}")

    def integrand(u: float) -> np.ndarray:
        a0r, a1r = coeffs.real(u)
        weight = (
            conditional_survival(law, t, u)
            * np.exp(a0r + a1r @ X)
            * model.Y0 * np.exp(cumulative_growth(model, t + u))
        )
        return np.concatenate([[weight], weight * a1r])

    return integrate(integrand, 0.0, model.T_R - t, rtol=HUMAN_CAPITAL_RTOL, label="human capital")


def human_capital(
    model: IncomeModel,
    law: MortalityLaw,
    coeffs: BondCoefficients,
    t: float,
    X: ArrayLike,
) -> float:
    """Mortality-weighted value of future income, priced with real bonds.

    Returns 0 from retirement on.
    """
    return float(_human_capital_integrals(model, law, coeffs, t, X)[0])


def human_capital_gradient(
    model: IncomeModel,
    law: MortalityLaw,
    coeffs: BondCoefficients,
    t: float,
    X: ArrayLike,
) -> np.ndarray:
    """dY_tilde/dX, differentiating the affine exponent under the integral."""
    return _human_capital_integrals(model, law, coeffs, t, X)[1:]


def human_capital_on_grid(
    model: IncomeModel,
    law: MortalityLaw,
    coeffs: BondCoefficients,
    t: float,
    X: np.ndarray,
    step: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Human capital and its gradient for a batch of states by composite Simpson.

    Args:
        t: Time, with T_R - t a multiple of step
        X: States, shape (n, 2)
        step: Integration node spacing

    Returns:
        (values shape (n,), gradients shape (n, 2))
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    horizon = model.T_R - t
    if horizon <= 1e-12 or model.Y0 == 0.0:
        return np.zeros(len(X)), np.zeros((len(X), 2))
    n_nodes = max(int(round(horizon / step)), 2) + 1
    u = np.linspace(0.0, horizon, n_nodes)
    a0r, a1r = coeffs.real(u)
    weight = conditional_survival(law, t, u) * model.Y0 * np.exp(cumulative_growth(model, t + u))
    kernel = weight[None, :] * np.exp(a0r[None, :] + X @ a1r.T)
    value = simpson(kernel, x=u, axis=1)
    grad = np.stack([simpson(kernel * a1r[None, :, k], x=u, axis=1) for k in range(2)], axis=1)
    return value, grad


def audit_human_capital_monotone(
    model: IncomeModel,
    law: MortalityLaw,
    coeffs: BondCoefficients,
    X: ArrayLike = (0.0, 0.0),
    n_points: int = 61,
) -> bool:
    """Check that human capital decreases in t on [0, T_R); logs violations."""
    ts = np.linspace(0.0, model.T_R, n_points, endpoint=False)
    values = np.array([human_capital(model, law, coeffs, t, X) for t in ts])
    increases = np.flatnonzero(np.diff(values) >= 0)
    if increases.size:
        logger.warning(
            "Human capital not decreasing at %d of %d intervals (first at t=%.2f)",
            increases.size, n_points - 1, ts[increases[0]],
        )
        return False
    return True


def actuarial_table(
    law: MortalityLaw,
    model: IncomeModel,
    coeffs: BondCoefficients,
    from_age: float,
    to_age: float,
    step: float = 1.0,
    X: ArrayLike = (0.0, 0.0),
) -> pd.DataFrame:
    """Hazard, survival, income and human capital by year since age x."""
    if from_age < law.x:
        raise ValidationError(f"from_age {from_age} is below the initial age {law.x}")
    if to_age < from_age:
        raise ValidationError(f"to_age {to_age} is below from_age {from_age}")
    ts = np.arange(from_age - law.x, to_age - law.x + 0.5 * step, step)
    hc = [
        human_capital(model, law, coeffs, t, X) if t < model.T_R else 0.0
        for t in ts
    ]
    return pd.DataFrame({
        "t": ts,
        "hazard": hazard(law, ts),
        "survival": survival(law, ts),
        "income": income_path(model, ts),
        "human_capital_at_X0": hc,
    })
