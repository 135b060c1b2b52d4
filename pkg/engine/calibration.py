"""State-space estimation of the market parameters from monthly data.

State K = (X1, X2, log Pi, log S) follows dK = (theta0 + theta1 K) dt + Sigma_K dZ,
discretized exactly over dt. Observations are eight nominal zero yields
(affine in X, with independent errors) plus log CPI and log equity level
(observed without error). The log-likelihood comes from the prediction
error decomposition of the Kalman filter.
"""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from scipy.linalg import LinAlgError, cho_factor, cho_solve, expm, solve_continuous_lyapunov
from scipy.optimize import minimize
from statsmodels.tools.numdiff import approx_fprime, approx_hess

from engine.errors import ModelError, NoConvergence, SingularInnovation, ValidationError
from engine.io import read_csv, write_csv
from engine.market import BondCoefficients, MarketParams, nominal_short_rate, solve_bond_odes

logger = logging.getLogger(__name__)

YIELD_MATURITIES = (0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0)
YIELD_COLUMNS = ("y3m", "y6m", "y1", "y2", "y3", "y5", "y7", "y10")
PANEL_COLUMNS = ("date",) + YIELD_COLUMNS + ("log_cpi", "log_equity")
MONTH = 1.0 / 12.0
LIKELIHOOD_ODE_STEP = 1.0 / 48.0
EXACT_RIDGE = 1e-12
LEVEL_PRIOR_VAR = 1e-8
DEFAULT_CHI = 0.0005
PENALTY = 1e10

FREE_NAMES = (
    "delta_r", "delta_pi_e", "delta_R", "kappa1", "kappa2",
    "sigma1_1", "sigma2_1", "sigma2_2",
    "sigma_Pi_1", "sigma_Pi_2", "sigma_Pi_3",
    "sigma_S_1", "sigma_S_2", "sigma_S_3", "sigma_S_4",
    "mu0", "mu1_1", "mu1_2",
    "Lambda0_4", "Lambda1_11", "Lambda1_22",
)
CHI_NAMES = tuple(f"chi_{c}" for c in YIELD_COLUMNS)

_BOUNDS = {
    "delta_r": (-0.2, 0.2),
    "delta_pi_e": (-0.2, 0.2),
    "delta_R": (-0.2, 0.3),
    "kappa1": (1e-3, 5.0),
    "kappa2": (1e-3, 5.0),
    "sigma1_1": (1e-5, 0.5),
    "sigma2_2": (1e-5, 0.5),
    "sigma_Pi_3": (1e-5, 0.5),
    "sigma_S_4": (1e-4, 1.0),
    "mu0": (-1.0, 1.0),
    "mu1_1": (-50.0, 50.0),
    "mu1_2": (-50.0, 50.0),
    "Lambda0_4": (-5.0, 5.0),
    "Lambda1_11": (-100.0, 100.0),
    "Lambda1_22": (-100.0, 100.0),
}
_CHI_BOUNDS = (1e-6, 0.05)


# =============================================================================
# Parameter vector
# =============================================================================


def params_from_free_vector(x: np.ndarray) -> MarketParams:
    """Market parameters from the 21 free entries.

    Lambda0[0:2] solve the nominal-rate and equity-premium identities and
    Lambda1[3, :] solve the equity-loading identity, so the result always
    satisfies check_consistency exactly.

    Raises:
        ValidationError: If the identity system is singular
    """
    v = dict(zip(FREE_NAMES, np.asarray(x, dtype=float)))
    sigma_Pi = np.array([v["sigma_Pi_1"], v["sigma_Pi_2"], v["sigma_Pi_3"], 0.0])
    sigma_S = np.array([v["sigma_S_1"], v["sigma_S_2"], v["sigma_S_3"], v["sigma_S_4"]])
    lam04 = v["Lambda0_4"]
    system = np.array([[sigma_Pi[0], sigma_Pi[1]], [sigma_S[0], sigma_S[1]]])
    rhs = np.array([
        v["delta_r"] + v["delta_pi_e"] - v["delta_R"],
        v["mu0"] - sigma_S[3] * lam04,
    ])
    if abs(np.linalg.det(system)) < 1e-14:
        raise ValidationError("Loadings make the price-of-risk identities singular")
    lam01, lam02 = np.linalg.solve(system, rhs)
    lam1 = np.zeros((4, 2))
    lam1[0, 0] = v["Lambda1_11"]
    lam1[1, 1] = v["Lambda1_22"]
    lam1[3, 0] = (v["mu1_1"] - sigma_S[0] * lam1[0, 0]) / sigma_S[3]
    lam1[3, 1] = (v["mu1_2"] - sigma_S[1] * lam1[1, 1]) / sigma_S[3]
    return MarketParams(
        delta_r=v["delta_r"],
        delta_pi_e=v["delta_pi_e"],
        delta_R=v["delta_R"],
        kappa1=v["kappa1"],
        kappa2=v["kappa2"],
        sigma1=[v["sigma1_1"], 0.0, 0.0, 0.0],
        sigma2=[v["sigma2_1"], v["sigma2_2"], 0.0, 0.0],
        sigma_Pi=sigma_Pi,
        sigma_S=sigma_S,
        mu0=v["mu0"],
        mu1=[v["mu1_1"], v["mu1_2"]],
        Lambda0=[lam01, lam02, 0.0, lam04],
        Lambda1=lam1,
    )


def free_vector_from_params(params: MarketParams) -> np.ndarray:
    """The 21 free entries of a parameter set, ordered as FREE_NAMES."""
    p = params
    return np.array([
        p.delta_r, p.delta_pi_e, p.delta_R, p.kappa1, p.kappa2,
        p.sigma1[0], p.sigma2[0], p.sigma2[1],
        p.sigma_Pi[0], p.sigma_Pi[1], p.sigma_Pi[2],
        p.sigma_S[0], p.sigma_S[1], p.sigma_S[2], p.sigma_S[3],
        p.mu0, p.mu1[0], p.mu1[1],
        p.Lambda0[3], p.Lambda1[0, 0], p.Lambda1[1, 1],
    ])


def free_bounds() -> list[tuple[float, float]]:
    """Box bounds of the 21 free entries followed by the 8 yield error s.d."""
    default = (-1.0, 1.0)
    return [_BOUNDS.get(name, default) for name in FREE_NAMES] + [_CHI_BOUNDS] * len(CHI_NAMES)


# =============================================================================
# State-space model
# =============================================================================


@dataclass(frozen=True)
class StateSpaceModel:
    """K_{t+dt} = Upsilon1 + Psi1 K_t + eps,  L_t = Upsilon2 + Psi2 K_t + eta."""

    Upsilon1: np.ndarray
    Psi1: np.ndarray
    Sigma_eps: np.ndarray
    Upsilon2: np.ndarray
    Psi2: np.ndarray
    Sigma_eta: np.ndarray
    dt: float
    maturities: tuple[float, ...] = YIELD_MATURITIES
    params: Optional[MarketParams] = field(default=None, compare=False)


def continuous_dynamics(params: MarketParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(theta0, theta1, Sigma_K) of the four-state diffusion."""
    p = params
    theta0 = np.array([
        0.0,
        0.0,
        p.delta_pi_e - 0.5 * p.sigma_Pi @ p.sigma_Pi,
        p.delta_R + p.mu0 - 0.5 * p.sigma_S @ p.sigma_S,
    ])
    theta1 = np.zeros((4, 4))
    theta1[:2, :2] = -p.K_X
    theta1[2, :2] = [0.0, 1.0]
    theta1[3, :2] = np.ones(2) - p.sigma_Pi @ p.Lambda1 + p.mu1
    sigma_K = np.vstack([p.Sigma_X, p.sigma_Pi, p.sigma_S])
    return theta0, theta1, sigma_K


def discretize(params: MarketParams, dt: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Exact transition (Upsilon1, Psi1, Sigma_eps) by Van Loan block exponentials."""
    theta0, theta1, sigma_K = continuous_dynamics(params)
    n = 4
    drift_block = np.zeros((n + 1, n + 1))
    drift_block[:n, :n] = theta1
    drift_block[:n, n] = theta0
    e = expm(drift_block * dt)
    psi1 = e[:n, :n]
    upsilon1 = e[:n, n]

    noise_block = np.zeros((2 * n, 2 * n))
    noise_block[:n, :n] = -theta1
    noise_block[:n, n:] = sigma_K @ sigma_K.T
    noise_block[n:, n:] = theta1.T
    f = expm(noise_block * dt)
    sigma_eps = f[n:, n:].T @ f[:n, n:]
    sigma_eps = 0.5 * (sigma_eps + sigma_eps.T)
    return upsilon1, psi1, sigma_eps


def build_state_space(
    params: MarketParams,
    coeffs: Optional[BondCoefficients] = None,
    dt: float = MONTH,
    chi: Optional[np.ndarray] = None,
    maturities: tuple[float, ...] = YIELD_MATURITIES,
    ode_step: float = LIKELIHOOD_ODE_STEP,
) -> StateSpaceModel:
    """Assemble transition and measurement matrices.

    Args:
        params: Market parameters
        coeffs: Bond coefficients covering the longest maturity (solved if None)
        dt: Observation interval in years
        chi: Yield measurement-error standard deviations (8 entries)
        maturities: Yield maturities in years
        ode_step: RK4 step when the bond coefficients are solved here
    """
    if dt <= 0:
        raise ValidationError(f"dt must be positive, got {dt}")
    chi = np.full(len(maturities), DEFAULT_CHI) if chi is None else np.asarray(chi, dtype=float)
    if chi.shape != (len(maturities),):
        raise ValidationError(f"chi needs {len(maturities)} entries, got {chi.size}")
    if coeffs is None:
        coeffs = solve_bond_odes(params, max(maturities), ode_step)
    taus = np.asarray(maturities, dtype=float)
    a0, a1 = coeffs.nominal(taus)
    upsilon1, psi1, sigma_eps = discretize(params, dt)

    m = len(taus) + 2
    upsilon2 = np.zeros(m)
    upsilon2[: len(taus)] = -a0 / taus
    psi2 = np.zeros((m, 4))
    psi2[: len(taus), :2] = -a1 / taus[:, None]
    psi2[len(taus), 2] = 1.0
    psi2[len(taus) + 1, 3] = 1.0
    sigma_eta = np.diag(np.concatenate([chi ** 2, [0.0, 0.0]]))
    return StateSpaceModel(
        Upsilon1=upsilon1,
        Psi1=psi1,
        Sigma_eps=sigma_eps,
        Upsilon2=upsilon2,
        Psi2=psi2,
        Sigma_eta=sigma_eta,
        dt=dt,
        maturities=tuple(maturities),
        params=params,
    )


# =============================================================================
# Observations
# =============================================================================


@dataclass(frozen=True)
class ObservationPanel:
    """Monthly yields (decimal per year), log CPI and log equity index; NaN marks missing."""

    dates: tuple[str, ...]
    yields: np.ndarray
    log_cpi: np.ndarray
    log_equity: np.ndarray

    def __post_init__(self):
        n = len(self.dates)
        if self.yields.shape != (n, len(YIELD_COLUMNS)):
            raise ValidationError(f"yields must have shape ({n}, {len(YIELD_COLUMNS)}), got {self.yields.shape}")
        if self.log_cpi.shape != (n,) or self.log_equity.shape != (n,):
            raise ValidationError("log_cpi and log_equity must have one entry per date")
        if np.any(np.isinf(self.yields)):
            raise ValidationError("Yields must be finite (use NaN for missing)")

    def __len__(self) -> int:
        return len(self.dates)

    @property
    def observations(self) -> np.ndarray:
        """(n, 10) stacked measurement vectors."""
        return np.column_stack([self.yields, self.log_cpi, self.log_equity])

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.yields, columns=list(YIELD_COLUMNS))
        df.insert(0, "date", list(self.dates))
        df["log_cpi"] = self.log_cpi
        df["log_equity"] = self.log_equity
        return df


def read_panel(path: Union[str, Path]) -> ObservationPanel:
    """Load a panel CSV with columns date,y3m,...,y10,log_cpi,log_equity.

    Raises:
        FileNotFoundError: If the file doesn't exist
        RuntimeError: If the file cannot be parsed
        ValidationError: If columns are missing
    """
    df = read_csv(path)
    missing = [c for c in PANEL_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"Panel is missing columns: {', '.join(missing)}")
    return ObservationPanel(
        dates=tuple(df["date"].astype(str)),
        yields=df[list(YIELD_COLUMNS)].to_numpy(dtype=float),
        log_cpi=df["log_cpi"].to_numpy(dtype=float),
        log_equity=df["log_equity"].to_numpy(dtype=float),
    )


def write_panel(path: Union[str, Path], panel: ObservationPanel) -> Path:
    """Write a panel as CSV with round-trip floats."""
    return write_csv(path, panel.to_frame())


def simulate_panel(
    params: MarketParams,
    n_months: int = 750,
    seed: int = 0,
    chi: Optional[np.ndarray] = None,
    dt: float = MONTH,
    start: str = "1961-01",
) -> tuple[ObservationPanel, np.ndarray]:
    """Synthetic panel from the exact transition and the measurement equation.

    Returns:
        (panel, true states of shape (n_months, 4))
    """
    if n_months < 1:
        raise ValidationError(f"n_months must be >= 1, got {n_months}")
    model = build_state_space(params, dt=dt, chi=chi)
    rng = np.random.default_rng(seed)
    eps_chol = np.linalg.cholesky(model.Sigma_eps + EXACT_RIDGE * np.eye(4))
    eta_sd = np.sqrt(np.diag(model.Sigma_eta))

    states = np.empty((n_months, 4))
    K = np.zeros(4)
    K[:2] = rng.multivariate_normal(np.zeros(2), solve_continuous_lyapunov(-params.K_X, -params.factor_gram))
    for i in range(n_months):
        if i > 0:
            K = model.Upsilon1 + model.Psi1 @ K + eps_chol @ rng.standard_normal(4)
        states[i] = K
    obs = model.Upsilon2 + states @ model.Psi2.T + rng.standard_normal((n_months, len(eta_sd))) * eta_sd
    dates = tuple(pd.period_range(start, periods=n_months, freq="M").astype(str))
    n_y = len(YIELD_COLUMNS)
    panel = ObservationPanel(
        dates=dates,
        yields=obs[:, :n_y],
        log_cpi=obs[:, n_y],
        log_equity=obs[:, n_y + 1],
    )
    return panel, states


# =============================================================================
# Kalman filter
# =============================================================================


@dataclass(frozen=True)
class FilterOutput:
    loglik: float
    filtered: np.ndarray
    filtered_cov: np.ndarray
    innovations: list


Prior = tuple[np.ndarray, np.ndarray]


def default_prior(model: StateSpaceModel, first: np.ndarray) -> Prior:
    """X at its stationary law; log levels pinned near the first observation."""
    if model.params is None:
        raise ValidationError("A model without market parameters needs an explicit prior")
    p = model.params
    mean = np.zeros(4)
    cov = np.zeros((4, 4))
    cov[:2, :2] = solve_continuous_lyapunov(-p.K_X, -p.factor_gram)
    n_y = len(model.maturities)
    for j, row in ((2, n_y), (3, n_y + 1)):
        mean[j] = first[row] if np.isfinite(first[row]) else 0.0
        cov[j, j] = LEVEL_PRIOR_VAR
    return mean, cov


def _run_filter(
    model: StateSpaceModel,
    obs: np.ndarray,
    store: bool = False,
    prior: Optional[Prior] = None,
) -> FilterOutput:
    n = len(obs)
    if prior is None:
        prior = default_prior(model, obs[0])
    K = np.array(prior[0], dtype=float)
    P = np.array(prior[1], dtype=float)
    loglik = 0.0
    n_obs_total = 0
    filtered = np.empty((n, 4)) if store else None
    filtered_cov = np.empty((n, 4, 4)) if store else None
    innovations = []
    eye = np.eye(4)
    for t in range(n):
        row = obs[t]
        ok = np.isfinite(row)
        if ok.any():
            psi = model.Psi2[ok]
            noise = model.Sigma_eta[np.ix_(ok, ok)] + EXACT_RIDGE * np.eye(int(ok.sum()))
            v = row[ok] - model.Upsilon2[ok] - psi @ K
            F = psi @ P @ psi.T + noise
            F = 0.5 * (F + F.T)
            try:
                c = cho_factor(F)
            except LinAlgError as e:
                raise SingularInnovation(f"Innovation covariance not positive definite at step {t}") from e
            logdet = 2.0 * np.sum(np.log(np.diag(c[0])))
            Fv = cho_solve(c, v)
            loglik -= 0.5 * (logdet + v @ Fv)
            n_obs_total += int(ok.sum())
            gain = cho_solve(c, psi @ P).T
            K = K + gain @ v
            A = eye - gain @ psi
            P = A @ P @ A.T + gain @ noise @ gain.T
            P = 0.5 * (P + P.T)
            if store:
                innovations.append(v)
        if store:
            filtered[t] = K
            filtered_cov[t] = P
        K = model.Upsilon1 + model.Psi1 @ K
        P = model.Psi1 @ P @ model.Psi1.T + model.Sigma_eps
    loglik -= 0.5 * n_obs_total * np.log(2.0 * np.pi)
    return FilterOutput(loglik=float(loglik), filtered=filtered, filtered_cov=filtered_cov, innovations=innovations)


def kalman_loglik(
    model: StateSpaceModel,
    panel: Union[ObservationPanel, np.ndarray],
    prior: Optional[Prior] = None,
) -> float:
    """Prediction-error log-likelihood of the panel.

    Missing entries are dropped row-wise; the constant counts observed entries.
    The default prior puts X at its stationary law and the log levels at the
    first observation with variance 1e-8.

    Raises:
        SingularInnovation: If an innovation covariance is not positive definite
    """
    obs = panel.observations if isinstance(panel, ObservationPanel) else np.asarray(panel, dtype=float)
    return _run_filter(model, obs, prior=prior).loglik


def filter_states(model: StateSpaceModel, panel: ObservationPanel) -> pd.DataFrame:
    """Filtered factors with the implied real rate, expected inflation and nominal rate."""
    if model.params is None:
        raise ValidationError("filter_states needs a model built from market parameters")
    out = _run_filter(model, panel.observations, store=True)
    X = out.filtered[:, :2]
    p = model.params
    return pd.DataFrame({
        "date": list(panel.dates),
        "x1": X[:, 0],
        "x2": X[:, 1],
        "r": p.delta_r + X[:, 0],
        "pi_e": p.delta_pi_e + X[:, 1],
        "R": nominal_short_rate(p, X),
    })


# =============================================================================
# Maximum likelihood
# =============================================================================


@dataclass(frozen=True)
class CalibrationConfig:
    """Settings of the maximum-likelihood fit.

    Attributes:
        restarts: Optimizer starts (the first at the initial guess)
        max_iter: L-BFGS-B iteration cap per start
        seed: Seed of the restart perturbations
        jitter: Relative s.d. of the restart perturbations
        dt: Observation interval in years
        ode_step: Bond ODE step inside the likelihood
        workers: Processes used over restarts
        strict: Raise NoConvergence instead of flagging it
        gtol: Projected-gradient tolerance
    """

    restarts: int = 10
    max_iter: int = 500
    seed: int = 0
    jitter: float = 0.1
    dt: float = MONTH
    ode_step: float = LIKELIHOOD_ODE_STEP
    workers: int = 1
    strict: bool = False
    gtol: float = 1e-6

    def __post_init__(self):
        if self.restarts < 1 or self.max_iter < 1 or self.workers < 1:
            raise ValidationError("restarts, max_iter and workers must be >= 1")
        if self.jitter < 0:
            raise ValidationError(f"jitter must be nonnegative, got {self.jitter}")


@dataclass
class CalibrationResult:
    params: MarketParams
    chi: np.ndarray
    loglik: float
    stderrs: dict[str, float]
    converged: bool
    n_iter: int
    grad_norm: float
    restarts: pd.DataFrame

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "chi": self.chi.tolist(),
            "loglik": self.loglik,
            "stderrs": self.stderrs,
            "converged": self.converged,
            "n_iter": self.n_iter,
            "grad_norm": self.grad_norm,
        }


def _split(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = len(FREE_NAMES)
    return x[:n], x[n:]


def full_loglik(x: np.ndarray, obs: np.ndarray, dt: float = MONTH, ode_step: float = LIKELIHOOD_ODE_STEP) -> float:
    """Log-likelihood at the 29-entry vector (21 free market entries, 8 error s.d.)."""
    free, chi = _split(np.asarray(x, dtype=float))
    params = params_from_free_vector(free)
    model = build_state_space(params, dt=dt, chi=chi, ode_step=ode_step)
    return kalman_loglik(model, obs)


def _objective(x: np.ndarray, obs: np.ndarray, dt: float, ode_step: float) -> float:
    try:
        value = full_loglik(x, obs, dt, ode_step)
    except (ModelError, np.linalg.LinAlgError, FloatingPointError):
        return PENALTY
    return -value if np.isfinite(value) else PENALTY


def _fit_one(args: tuple) -> dict:
    x0, obs, cfg, bounds = args
    res = minimize(
        _objective,
        x0,
        args=(obs, cfg.dt, cfg.ode_step),
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": cfg.max_iter, "gtol": cfg.gtol},
    )
    return {"x": res.x, "fun": float(res.fun), "success": bool(res.success), "nit": int(res.nit), "message": str(res.message)}


def _starts(x0: np.ndarray, cfg: CalibrationConfig, bounds: list[tuple[float, float]]) -> list[np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = [np.clip(x0, lo, hi)]
    for _ in range(cfg.restarts - 1):
        trial = x0 * (1.0 + cfg.jitter * rng.standard_normal(len(x0)))
        starts.append(np.clip(trial, lo, hi))
    return starts


def standard_errors(x: np.ndarray, obs: np.ndarray, dt: float = MONTH, ode_step: float = LIKELIHOOD_ODE_STEP) -> np.ndarray:
    """Inverse observed information from a numerical Hessian; NaN where not identified."""
    hess = approx_hess(np.asarray(x, dtype=float), full_loglik, args=(obs, dt, ode_step))
    try:
        cov = np.linalg.inv(-hess)
    except np.linalg.LinAlgError:
        logger.warning("Observed information matrix is singular; standard errors unavailable")
        return np.full(len(x), np.nan)
    diag = np.diag(cov)
    with np.errstate(invalid="ignore"):
        return np.where(diag > 0, np.sqrt(diag), np.nan)


def loglik_gradient(x: np.ndarray, obs: np.ndarray, dt: float = MONTH, ode_step: float = LIKELIHOOD_ODE_STEP) -> np.ndarray:
    """Central-difference gradient of the log-likelihood."""
    return approx_fprime(np.asarray(x, dtype=float), full_loglik, args=(obs, dt, ode_step), centered=True)


def fit_mle(
    panel: ObservationPanel,
    init: MarketParams,
    chi_init: Optional[np.ndarray] = None,
    config: Optional[CalibrationConfig] = None,
    bounds: Optional[list[tuple[float, float]]] = None,
) -> CalibrationResult:
    """Bound-constrained maximum likelihood over the 29 parameters with restarts.

    Raises:
        NoConvergence: If no start converged and config.strict is set
    """
    cfg = config or CalibrationConfig()
    chi_init = np.full(len(YIELD_COLUMNS), DEFAULT_CHI) if chi_init is None else np.asarray(chi_init, dtype=float)
    bounds = bounds or free_bounds()
    obs = panel.observations
    x0 = np.concatenate([free_vector_from_params(init), chi_init])
    jobs = [(s, obs, cfg, bounds) for s in _starts(x0, cfg, bounds)]

    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            fits = list(pool.map(_fit_one, jobs))
    else:
        fits = [_fit_one(job) for job in jobs]

    table = pd.DataFrame([
        {"restart": i, "neg_loglik": f["fun"], "success": f["success"], "nit": f["nit"]}
        for i, f in enumerate(fits)
    ])
    best = min(range(len(fits)), key=lambda i: fits[i]["fun"])
    fit = fits[best]
    if fit["fun"] >= PENALTY:
        raise NoConvergence("Every optimizer start ended at an infeasible point")
    converged = fit["success"]
    if not converged:
        msg = f"Best of {len(fits)} starts did not converge: {fit['message']}"
        if cfg.strict:
            raise NoConvergence(msg)
        logger.warning(msg)

    x = fit["x"]
    grad = loglik_gradient(x, obs, cfg.dt, cfg.ode_step)
    se = standard_errors(x, obs, cfg.dt, cfg.ode_step)
    free, chi = _split(x)
    logger.info("MLE: loglik %.6f after %d iterations (start %d)", -fit["fun"], fit["nit"], best)
    return CalibrationResult(
        params=params_from_free_vector(free),
        chi=chi,
        loglik=-fit["fun"],
        stderrs=dict(zip(FREE_NAMES + CHI_NAMES, (float(s) for s in se))),
        converged=converged,
        n_iter=fit["nit"],
        grad_norm=float(np.max(np.abs(grad))),
        restarts=table,
    )
