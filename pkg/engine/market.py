"""Two-factor affine inflationary market.

Factors X = (X1, X2) follow a mean-reverting Ornstein-Uhlenbeck process
driven by a four-dimensional Brownian motion. X1 moves the real short rate,
X2 moves expected inflation. Nominal and inflation-linked zero-coupon bonds
are exponential-affine in X with coefficients solved from ODE systems in the
time to maturity tau.
"""
import logging
from dataclasses import dataclass, field, fields
from typing import Any, Sequence, Union

import numpy as np
import pandas as pd
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_continuous_lyapunov

from engine.errors import NonFiniteOde, SingularSigma, ValidationError
from engine.ode import dense_output, make_grid, rk4_integrate

logger = logging.getLogger(__name__)

ArrayLike = Union[Sequence[float], np.ndarray]

DEFAULT_ODE_STEP = 1.0 / 252.0
DEFAULT_MATURITIES = (3.0, 10.0, 10.0)
SIGMA_CONDITION_LIMIT = 1e12
CONSISTENCY_TOL = 1e-5

_VECTOR_FIELDS = {"sigma1": 4, "sigma2": 4, "sigma_Pi": 4, "sigma_S": 4, "mu1": 2, "Lambda0": 4}


@dataclass(frozen=True)
class MarketParams:
    """Market parameters (annualized).

    Attributes:
        delta_r: Real short-rate constant
        delta_pi_e: Expected-inflation constant
        delta_R: Nominal short-rate constant
        kappa1, kappa2: Mean-reversion speeds of X1 and X2
        sigma1, sigma2: Factor loadings on the four Brownian motions
        sigma_Pi: Realized-inflation loadings
        sigma_S: Equity loadings
        mu0: Equity premium constant
        mu1: Equity premium loadings on X
        Lambda0: Unconditional price of risk
        Lambda1: Conditional price of risk (4x2, third row zero)
    """

    delta_r: float
    delta_pi_e: float
    delta_R: float
    kappa1: float
    kappa2: float
    sigma1: np.ndarray
    sigma2: np.ndarray
    sigma_Pi: np.ndarray
    sigma_S: np.ndarray
    mu0: float
    mu1: np.ndarray
    Lambda0: np.ndarray
    Lambda1: np.ndarray

    def __post_init__(self):
        for name in ("delta_r", "delta_pi_e", "delta_R", "kappa1", "kappa2", "mu0"):
            object.__setattr__(self, name, float(getattr(self, name)))
        for name, size in _VECTOR_FIELDS.items():
            value = np.array(getattr(self, name), dtype=float).reshape(-1)
            if value.shape != (size,):
                raise ValidationError(f"{name} must have {size} entries, got {value.size}")
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        lam1 = np.array(self.Lambda1, dtype=float)
        if lam1.shape != (4, 2):
            raise ValidationError(f"Lambda1 must be 4x2, got shape {lam1.shape}")
        lam1.setflags(write=False)
        object.__setattr__(self, "Lambda1", lam1)

        if self.kappa1 <= 0 or self.kappa2 <= 0:
            raise ValidationError(
                f"Mean-reversion speeds must be positive, got {self.kappa1}, {self.kappa2}"
            )
        vol = self.vol_matrix
        if np.any(np.abs(np.triu(vol, k=1)) > 0.0):
            raise ValidationError("Volatility matrix (sigma1, sigma2, sigma_Pi, sigma_S) must be lower triangular")
        if self.Lambda0[2] != 0.0 or np.any(self.Lambda1[2] != 0.0):
            raise ValidationError("Third price-of-risk component must be identically zero")

    # Derived blocks

    @property
    def K_X(self) -> np.ndarray:
        return np.diag([self.kappa1, self.kappa2])

    @property
    def Sigma_X(self) -> np.ndarray:
        """2x4 factor volatility matrix."""
        return np.vstack([self.sigma1, self.sigma2])

    @property
    def vol_matrix(self) -> np.ndarray:
        """4x4 stacked loadings (sigma1, sigma2, sigma_Pi, sigma_S)."""
        return np.vstack([self.sigma1, self.sigma2, self.sigma_Pi, self.sigma_S])

    @property
    def factor_gram(self) -> np.ndarray:
        """Sigma_X Sigma_X^T."""
        sx = self.Sigma_X
        return sx @ sx.T

    def to_dict(self) -> dict[str, Any]:
        """Plain-Python representation for JSON parameter files."""
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            out[f.name] = value.tolist() if isinstance(value, np.ndarray) else value
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MarketParams":
        names = {f.name for f in fields(cls)}
        missing = names - set(data)
        if missing:
            raise ValidationError(f"Missing market parameters: {', '.join(sorted(missing))}")
        unknown = set(data) - names
        if unknown:
            raise ValidationError(f"Unknown market parameters: {', '.join(sorted(unknown))}")
        return cls(**{name: data[name] for name in names})

    def validate(self, tol: float = CONSISTENCY_TOL) -> "MarketParams":
        """Raise ValidationError if the drift identities are violated beyond tol."""
        residuals = check_consistency(self)
        worst = max(residuals, key=lambda k: residuals[k])
        if residuals[worst] > tol:
            raise ValidationError(
                f"Market identity '{worst}' violated: residual {residuals[worst]:.3e} > {tol:.1e}"
            )
        return self


def check_consistency(params: MarketParams) -> dict[str, float]:
    """Absolute residuals of the three drift identities.

    delta_R = delta_r + delta_pi_e - sigma_Pi^T Lambda0,
    sigma_S^T Lambda0 = mu0 and sigma_S^T Lambda1 = mu1^T.
    """
    p = params
    return {
        "delta_R": abs(p.delta_R - (p.delta_r + p.delta_pi_e - p.sigma_Pi @ p.Lambda0)),
        "mu0": abs(p.sigma_S @ p.Lambda0 - p.mu0),
        "mu1": float(np.max(np.abs(p.sigma_S @ p.Lambda1 - p.mu1))),
    }


# =============================================================================
# Short rates, inflation and prices of risk
# =============================================================================


def real_short_rate(params: MarketParams, X: ArrayLike) -> Union[float, np.ndarray]:
    """r = delta_r + X1."""
    X = np.asarray(X, dtype=float)
    return params.delta_r + X[..., 0]


def expected_inflation(params: MarketParams, X: ArrayLike) -> Union[float, np.ndarray]:
    """pi_e = delta_pi_e + X2."""
    X = np.asarray(X, dtype=float)
    return params.delta_pi_e + X[..., 1]


def nominal_short_rate(params: MarketParams, X: ArrayLike) -> Union[float, np.ndarray]:
    """R = delta_R + (iota^T - sigma_Pi^T Lambda1) X."""
    X = np.asarray(X, dtype=float)
    loading = np.ones(2) - params.sigma_Pi @ params.Lambda1
    return params.delta_R + X @ loading


def price_of_risk(params: MarketParams, X: ArrayLike) -> np.ndarray:
    """Lambda = Lambda0 + Lambda1 X, shape (..., 4)."""
    X = np.asarray(X, dtype=float)
    return params.Lambda0 + X @ params.Lambda1.T


def equity_drift(params: MarketParams, X: ArrayLike) -> Union[float, np.ndarray]:
    """Expected equity return R + mu0 + mu1^T X."""
    X = np.asarray(X, dtype=float)
    return nominal_short_rate(params, X) + params.mu0 + X @ params.mu1


def factor_covariance(params: MarketParams, t: float) -> np.ndarray:
    """Covariance of X_t given X_0 (diagonal mean reversion, closed form)."""
    k = np.array([params.kappa1, params.kappa2])
    ksum = k[:, None] + k[None, :]
    return params.factor_gram * (1.0 - np.exp(-ksum * t)) / ksum


def stationary_covariance(params: MarketParams) -> np.ndarray:
    """Solve K P + P K^T = Sigma_X Sigma_X^T for the stationary factor covariance."""
    return solve_continuous_lyapunov(-params.K_X, -params.factor_gram)


# =============================================================================
# Bond coefficient ODEs
# =============================================================================


@dataclass(frozen=True)
class BondCoefficients:
    """Solved nominal (A0, A1) and real (A0R, A1R) bond coefficients.

    P(X, t, t + tau) = exp(A0(tau) + A1(tau)^T X), likewise for the real bond.
    """

    tau_grid: np.ndarray
    A0: np.ndarray
    A1: np.ndarray
    A0R: np.ndarray
    A1R: np.ndarray
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        stacked = np.column_stack([self.A0, self.A1, self.A0R, self.A1R])
        object.__setattr__(self, "_spline", dense_output(self.tau_grid, stacked))

    @property
    def tau_max(self) -> float:
        return float(self.tau_grid[-1])

    def _eval(self, tau: ArrayLike) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0) or np.any(tau > self.tau_max + 1e-9):
            raise ValidationError(f"Maturity outside solved grid [0, {self.tau_max}]")
        return self._spline(tau)

    def nominal(self, tau: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
        """(A0(tau), A1(tau)) by dense interpolation."""
        v = self._eval(tau)
        return v[..., 0], v[..., 1:3]

    def real(self, tau: ArrayLike) -> tuple[np.ndarray, np.ndarray]:
        """(A0R(tau), A1R(tau)) by dense interpolation."""
        v = self._eval(tau)
        return v[..., 3], v[..., 4:6]


def bond_rhs(params: MarketParams):
    """Right-hand side for the packed state (A0, A1, A0R, A1R)."""
    sx = params.Sigma_X
    gram = params.factor_gram
    drift = params.K_X.T + params.Lambda1.T @ sx.T
    nominal_force = -np.ones(2) + params.Lambda1.T @ params.sigma_Pi
    real_force = -np.array([1.0, 0.0])
    nominal_risk = sx @ params.Lambda0
    real_risk = sx @ (params.Lambda0 - params.sigma_Pi)

    def rhs(y: np.ndarray) -> np.ndarray:
        a1 = y[1:3]
        a1r = y[4:6]
        return np.array([
            0.5 * a1 @ gram @ a1 - a1 @ nominal_risk - params.delta_R,
            *(-drift @ a1 + nominal_force),
            0.5 * a1r @ gram @ a1r - a1r @ real_risk - params.delta_r,
            *(-drift @ a1r + real_force),
        ])

    return rhs


def solve_bond_odes(
    params: MarketParams,
    tau_max: float,
    step: float = DEFAULT_ODE_STEP,
) -> BondCoefficients:
    """Integrate the nominal and real bond coefficient ODEs with RK4.

    Args:
        params: Market parameters
        tau_max: Longest maturity needed, in years
        step: RK4 step in years

    Returns:
        BondCoefficients on a uniform grid from 0 to tau_max

    Raises:
        NonFiniteOde: If a coefficient overflows before tau_max
    """
    grid = make_grid(tau_max, step)

    def check(tau: float, y: np.ndarray) -> None:
        if not np.all(np.isfinite(y)):
            raise NonFiniteOde(f"Bond coefficients non-finite at tau = {tau:.6f}")

    sol = rk4_integrate(bond_rhs(params), np.zeros(6), grid, check=check)
    coeffs = BondCoefficients(
        tau_grid=grid,
        A0=sol[:, 0],
        A1=sol[:, 1:3],
        A0R=sol[:, 3],
        A1R=sol[:, 4:6],
    )
    if tau_max > 30.0:
        # Long-maturity behaviour of A1 is reported only.
        _, a1_30 = coeffs.nominal(30.0)
        logger.info(
            "A1 norm at tau=30: %.6g, at tau=%.1f: %.6g",
            np.linalg.norm(a1_30), tau_max, np.linalg.norm(sol[-1, 1:3]),
        )
    logger.debug("Solved bond ODEs on %d nodes up to tau=%.2f", len(grid), tau_max)
    return coeffs


def bond_price(coeffs: BondCoefficients, X: ArrayLike, tau: ArrayLike) -> np.ndarray:
    """Nominal zero-coupon price exp(A0(tau) + A1(tau)^T X)."""
    a0, a1 = coeffs.nominal(tau)
    return np.exp(a0 + np.sum(a1 * np.asarray(X, dtype=float), axis=-1))


def real_bond_price(coeffs: BondCoefficients, X: ArrayLike, tau: ArrayLike) -> np.ndarray:
    """Inflation-linked zero-coupon price exp(A0R(tau) + A1R(tau)^T X)."""
    a0, a1 = coeffs.real(tau)
    return np.exp(a0 + np.sum(a1 * np.asarray(X, dtype=float), axis=-1))


def yield_curve(coeffs: BondCoefficients, taus: ArrayLike, X: ArrayLike = (0.0, 0.0)) -> pd.DataFrame:
    """Continuously compounded nominal and real zero yields at the given maturities."""
    taus = np.asarray(taus, dtype=float)
    if np.any(taus <= 0):
        raise ValidationError("Yield maturities must be positive")
    X = np.asarray(X, dtype=float)
    a0, a1 = coeffs.nominal(taus)
    a0r, a1r = coeffs.real(taus)
    return pd.DataFrame({
        "tau": taus,
        "nominal_yield": -(a0 + a1 @ X) / taus,
        "real_yield": -(a0r + a1r @ X) / taus,
    })


# =============================================================================
# Tradable assets
# =============================================================================


@dataclass(frozen=True)
class AssetUniverse:
    """Two nominal bonds, one inflation-linked bond and the equity index.

    Sigma rows are the loadings of the four assets' real excess returns on
    the Brownian motions; Sigma_T_inv is (Sigma^T)^{-1}.
    """

    T1: float
    T2: float
    T3: float
    Sigma: np.ndarray
    Sigma_T_inv: np.ndarray
    condition: float


def build_universe(
    params: MarketParams,
    coeffs: BondCoefficients,
    T1: float = DEFAULT_MATURITIES[0],
    T2: float = DEFAULT_MATURITIES[1],
    T3: float = DEFAULT_MATURITIES[2],
) -> AssetUniverse:
    """Assemble the 4x4 exposure matrix and verify it is invertible.

    Raises:
        SingularSigma: If the condition number exceeds 1e12
    """
    sx = params.Sigma_X
    _, a1 = coeffs.nominal(np.array([T1, T2]))
    _, a1r = coeffs.real(T3)
    sigma = np.vstack([
        a1[0] @ sx,
        a1[1] @ sx,
        a1r @ sx + params.sigma_Pi,
        params.sigma_S,
    ])
    cond = float(np.linalg.cond(sigma))
    if not np.isfinite(cond) or cond > SIGMA_CONDITION_LIMIT:
        raise SingularSigma(f"Asset exposure matrix condition number {cond:.3e} exceeds {SIGMA_CONDITION_LIMIT:.0e}")
    return AssetUniverse(
        T1=float(T1),
        T2=float(T2),
        T3=float(T3),
        Sigma=sigma,
        Sigma_T_inv=np.linalg.inv(sigma.T),
        condition=cond,
    )


@dataclass(frozen=True)
class Market:
    """Parameters together with their solved bond coefficients and assets."""

    params: MarketParams
    coeffs: BondCoefficients
    universe: AssetUniverse


def build_market(
    params: MarketParams,
    tau_max: float = 60.0,
    step: float = DEFAULT_ODE_STEP,
    maturities: tuple[float, float, float] = DEFAULT_MATURITIES,
) -> Market:
    """Validate parameters, solve bond ODEs and assemble the asset universe."""
    params.validate()
    tau_max = max(tau_max, *maturities)
    coeffs = solve_bond_odes(params, tau_max, step)
    universe = build_universe(params, coeffs, *maturities)
    logger.info("Market ready: tau_max=%.1f, cond(Sigma)=%.3e", tau_max, universe.condition)
    return Market(params=params, coeffs=coeffs, universe=universe)
