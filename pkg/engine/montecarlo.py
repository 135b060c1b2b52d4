"""Monte Carlo life-cycle simulation under closed-form or imposed controls.

Paths are simulated in fixed-size blocks. Each block owns a Philox stream
keyed by (seed, block index), and per-block moment sums are combined by a
pairwise tree in block order, so a fixed (seed, n_paths, block_size) gives
the same numbers for any worker count.

The simulated wealth state is the surplus S: W_R + Y_tilde while the
breadwinner is alive, W_R after death. S moves by a log-Euler step, the
factors by their exact Gaussian transition (or Euler sub-steps) sampled
jointly with the Brownian increments.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from scipy.interpolate import RectBivariateSpline

from engine.actuarial import hazard, human_capital, human_capital_on_grid, sample_death_time
from engine.errors import ExistenceFail, NonpositiveSurplus, ValidationError
from engine.household import HouseholdSpec
from engine.market import Market, factor_covariance, stationary_covariance
from engine.riccati import FKernel, GammaSolution, solve_for_household, tabulate_f
from engine.strategies import utility, welfare_loss

logger = logging.getLogger(__name__)

OBSERVABLES = (
    "c1", "c2", "premium_I", "face_value", "surplus", "wealth", "bequest_wealth_ratio",
    "beta_1", "beta_2", "beta_3", "beta_4",
    "smd_1", "smd_2", "smd_3", "smd_4",
    "ifhd_1", "ifhd_2", "ifhd_3", "ifhd_4",
    "ithd_1", "ithd_2", "ithd_3", "ithd_4",
    "x1", "x2",
)
# Zero after death in the unconditional averages.
_ALIVE_ONLY = ("c1", "premium_I", "face_value")
_OBS_INDEX = {name: i for i, name in enumerate(OBSERVABLES)}


@dataclass(frozen=True)
class SimConfig:
    """Simulation settings.

    Attributes:
        n_paths: Number of paths
        dt: Time step in years; must divide the horizon
        seed: Root seed of the per-block streams
        horizon: Simulation end in years (None = household horizon T)
        antithetic: Pair every normal draw and death uniform with its mirror
        record: Observables kept in the result
        block_size: Paths per random stream and per work item
        workers: Threads used over blocks
        x_scheme: "exact" OU transition or "euler" sub-stepping
        euler_substeps: Sub-steps per dt for the Euler scheme
        x0: Initial factor state
        grid_points: Policy table nodes per factor
        grid_width: Half-width of the policy table in stationary s.d.
    """

    n_paths: int = 100_000
    dt: float = 1.0 / 12.0
    seed: int = 42
    horizon: Optional[float] = None
    antithetic: bool = False
    record: tuple[str, ...] = OBSERVABLES
    block_size: int = 8192
    workers: int = 1
    x_scheme: str = "exact"
    euler_substeps: int = 100
    x0: tuple[float, float] = (0.0, 0.0)
    grid_points: int = 31
    grid_width: float = 6.0

    def __post_init__(self):
        object.__setattr__(self, "record", tuple(self.record))
        if self.n_paths < 1:
            raise ValidationError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.dt <= 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        if self.block_size < 2 or self.block_size % 2:
            raise ValidationError(f"block_size must be an even number >= 2, got {self.block_size}")
        if self.antithetic and self.n_paths % 2:
            raise ValidationError("Antithetic sampling needs an even number of paths")
        if self.x_scheme not in ("exact", "euler"):
            raise ValidationError(f"Unknown x_scheme {self.x_scheme!r}")
        if self.euler_substeps < 1 or self.workers < 1:
            raise ValidationError("euler_substeps and workers must be >= 1")
        if self.grid_points < 4:
            raise ValidationError("Policy table needs at least 4 nodes per factor")
        unknown = set(self.record) - set(OBSERVABLES)
        if unknown:
            raise ValidationError(f"Unknown observables: {sorted(unknown)}")

    def n_steps(self, T: float) -> int:
        """Steps to the horizon; raises unless dt divides it within 1e-9."""
        horizon = T if self.horizon is None else self.horizon
        if horizon <= 0 or horizon > T + 1e-9:
            raise ValidationError(f"Simulation horizon {horizon} outside (0, {T}]")
        n = int(round(horizon / self.dt))
        if abs(n * self.dt - horizon) > 1e-9:
            raise ValidationError(f"dt = {self.dt} does not divide the horizon {horizon}")
        return n


@dataclass
class PathState:
    """State of a block of paths at time t (arrays over paths)."""

    t: float
    X: np.ndarray
    logPi: np.ndarray
    log_surplus: np.ndarray
    W_R: np.ndarray
    alive: np.ndarray
    death_time: np.ndarray
    flagged: np.ndarray

    @property
    def surplus(self) -> np.ndarray:
        return np.exp(self.log_surplus)

    @property
    def Pi(self) -> np.ndarray:
        return np.exp(self.logPi)


# =============================================================================
# Policy table
# =============================================================================


class PolicyTable:
    """log f1, log f2, their X-gradients and human capital on a factor grid.

    One bicubic spline per time step and quantity. States outside the grid
    are clipped to its edge.
    """

    def __init__(
        self,
        hh: HouseholdSpec,
        market: Market,
        sol: GammaSolution,
        dt: float,
        n_steps: int,
        grid_points: int = 31,
        grid_width: float = 6.0,
    ):
        sd = np.sqrt(np.diag(stationary_covariance(market.params)))
        self.x1 = np.linspace(-grid_width * sd[0], grid_width * sd[0], grid_points)
        self.x2 = np.linspace(-grid_width * sd[1], grid_width * sd[1], grid_points)
        mesh = np.stack(np.meshgrid(self.x1, self.x2, indexing="ij"), axis=-1).reshape(-1, 2)
        shape = (grid_points, grid_points)
        self.dt = dt
        self.n_steps = n_steps

        k2 = hh.weight_roots[1]
        kernel = FKernel(sol, mesh, dt, hh.T)
        self._alive: list[dict[str, RectBivariateSpline]] = []
        self._dead: list[dict[str, RectBivariateSpline]] = []
        for k in range(n_steps + 1):
            t = k * dt
            if hh.T - t < 0.5 * dt:
                self._alive.append({})
                self._dead.append({})
                continue
            f1, f1_x, f2, f2_x = tabulate_f(kernel, hh, t)
            alive = {
                "log_f2": np.log(f2),
                "dlog_f2_1": f2_x[:, 0] / f2,
                "dlog_f2_2": f2_x[:, 1] / f2,
                "log_ratio": np.log(k2 * f1 / f2) if k2 > 0 else None,
            }
            if t < hh.T_R:
                hc, hc_x = human_capital_on_grid(hh.income, hh.mortality, market.coeffs, t, mesh, dt)
                alive.update({"hc": hc, "dhc_1": hc_x[:, 0], "dhc_2": hc_x[:, 1]})
            dead = {
                "log_f1": np.log(f1),
                "dlog_f1_1": f1_x[:, 0] / f1,
                "dlog_f1_2": f1_x[:, 1] / f1,
            }
            self._alive.append({
                name: RectBivariateSpline(self.x1, self.x2, v.reshape(shape))
                for name, v in alive.items() if v is not None
            })
            self._dead.append({
                name: RectBivariateSpline(self.x1, self.x2, v.reshape(shape)) for name, v in dead.items()
            })
        logger.info("Policy table: %d steps on a %dx%d factor grid", n_steps, grid_points, grid_points)

    def _clip(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return (
            np.clip(X[:, 0], self.x1[0], self.x1[-1]),
            np.clip(X[:, 1], self.x2[0], self.x2[-1]),
        )

    def alive(self, k: int, X: np.ndarray) -> dict[str, np.ndarray]:
        """log f2, grad log f2, log bequest ratio, human capital and its gradient."""
        x1, x2 = self._clip(X)
        sp = self._alive[k]
        out = {
            "log_f2": sp["log_f2"].ev(x1, x2),
            "grad_log_f2": np.column_stack([sp["dlog_f2_1"].ev(x1, x2), sp["dlog_f2_2"].ev(x1, x2)]),
            "log_ratio": sp["log_ratio"].ev(x1, x2) if "log_ratio" in sp else np.full(len(x1), -np.inf),
        }
        if "hc" in sp:
            out["hc"] = sp["hc"].ev(x1, x2)
            out["grad_hc"] = np.column_stack([sp["dhc_1"].ev(x1, x2), sp["dhc_2"].ev(x1, x2)])
        else:
            out["hc"] = np.zeros(len(x1))
            out["grad_hc"] = np.zeros((len(x1), 2))
        return out

    def dead(self, k: int, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """log f1 and grad log f1."""
        x1, x2 = self._clip(X)
        sp = self._dead[k]
        grad = np.column_stack([sp["dlog_f1_1"].ev(x1, x2), sp["dlog_f1_2"].ev(x1, x2)])
        return sp["log_f1"].ev(x1, x2), grad


# =============================================================================
# Factor increments
# =============================================================================


def joint_increment_cholesky(market: Market, dt: float) -> np.ndarray:
    """Cholesky factor of the covariance of (OU innovation, Brownian increment) over dt.

    The innovation X_{t+dt} - exp(-K dt) X_t and dZ are jointly Gaussian:
    Cov(eps) = Sigma_dt, Cov(eps, dZ) = diag((1 - exp(-k dt)) / k) Sigma_X,
    Cov(dZ) = dt I.
    """
    params = market.params
    k = np.array([params.kappa1, params.kappa2])
    cross = ((1.0 - np.exp(-k * dt)) / k)[:, None] * params.Sigma_X
    cov = np.block([[factor_covariance(params, dt), cross], [cross.T, dt * np.eye(4)]])
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, v = np.linalg.eigh(cov)
        return v * np.sqrt(np.clip(w, 0.0, None))


# =============================================================================
# Moment accumulation
# =============================================================================


@dataclass
class _Partial:
    """Sums over one block, combined by addition."""

    sums: np.ndarray
    sumsq: np.ndarray
    counts: np.ndarray
    value_sum: float
    value_sumsq: float
    value_count: int
    pair_sum: float
    pair_sumsq: float
    pair_count: int
    excluded: int

    def __add__(self, other: "_Partial") -> "_Partial":
        return _Partial(
            sums=self.sums + other.sums,
            sumsq=self.sumsq + other.sumsq,
            counts=self.counts + other.counts,
            value_sum=self.value_sum + other.value_sum,
            value_sumsq=self.value_sumsq + other.value_sumsq,
            value_count=self.value_count + other.value_count,
            pair_sum=self.pair_sum + other.pair_sum,
            pair_sumsq=self.pair_sumsq + other.pair_sumsq,
            pair_count=self.pair_count + other.pair_count,
            excluded=self.excluded + other.excluded,
        )


def tree_reduce(items: Sequence, combine: Callable = lambda a, b: a + b):
    """Pairwise reduction in a fixed order."""
    items = list(items)
    if not items:
        raise ValueError("Nothing to reduce")
    while len(items) > 1:
        merged = [combine(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            merged.append(items[-1])
        items = merged
    return items[0]


def _mean_se(sums: np.ndarray, sumsq: np.ndarray, counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, sums / counts, np.nan)
        var = np.where(counts > 1, (sumsq - counts * mean ** 2) / (counts - 1), np.nan)
        se = np.sqrt(np.clip(var, 0.0, None) / counts)
    return mean, se


@dataclass
class SimulationResult:
    """Per-step means and standard errors of the recorded observables.

    Arrays are indexed (step, observable) over the grid t_k = k dt,
    k = 0..n_steps-1. "alive" statistics condition on the breadwinner being
    alive at t_k; "all" statistics average over every non-excluded path.

    The surplus is carried in logs, so it stays positive on every finite
    path and no path is ever flagged for nonpositive surplus. Real wealth
    (surplus less human capital) may dip below zero before retirement and is
    recorded as is. excluded_paths counts paths
    whose log-surplus or value turned non-finite; those paths are dropped
    from every later statistic and from the value estimate.
    """

    times: np.ndarray
    ages: np.ndarray
    observables: tuple[str, ...]
    mean_alive: np.ndarray
    se_alive: np.ndarray
    count_alive: np.ndarray
    mean_all: np.ndarray
    se_all: np.ndarray
    count_all: np.ndarray
    alive_fraction: np.ndarray
    value: float
    value_se: float
    n_paths: int
    excluded_paths: int
    control_theta: float
    evaluation_theta: float
    meta: dict = field(default_factory=dict)

    def curve(self, observable: str, conditioned: bool = True) -> pd.DataFrame:
        """age, mean, stderr for one observable."""
        if observable not in self.observables:
            raise ValidationError(f"Observable {observable!r} was not recorded")
        j = self.observables.index(observable)
        mean, se = (self.mean_alive, self.se_alive) if conditioned else (self.mean_all, self.se_all)
        return pd.DataFrame({"age": self.ages, "mean": mean[:, j], "stderr": se[:, j]})


# =============================================================================
# Simulation
# =============================================================================


@dataclass(frozen=True)
class _Context:
    hh: HouseholdSpec
    market: Market
    table: PolicyTable
    cfg: SimConfig
    n_steps: int
    chol: Optional[np.ndarray]
    S0: float
    evaluation_theta: float


def _block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _mirror(draw: np.ndarray, antithetic: bool) -> np.ndarray:
    return np.concatenate([draw, -draw]) if antithetic else draw


def _step_controls(ctx: _Context, k: int, state: PathState):
    """Observables, log-surplus drift and diffusion loadings at step k."""
    hh, params = ctx.hh, ctx.market.params
    inv_t = ctx.market.universe.Sigma_T_inv.T
    gamma, theta = hh.gamma, hh.theta
    k1, k2 = hh.weight_roots
    n = len(state.alive)
    X = state.X
    S = state.surplus
    lam_vec = params.Lambda0 + X @ params.Lambda1.T
    excess = lam_vec - params.sigma_Pi
    r = params.delta_r + X[:, 0]
    inflation_hedge = (gamma - 1.0) / gamma * (1.0 - theta) - 1.0

    obs = np.full((n, len(OBSERVABLES)), np.nan)
    drift = np.zeros(n)
    load = np.zeros((n, 4))
    flow_c1 = np.zeros(n)
    flow_c2 = np.zeros(n)

    obs[:, _OBS_INDEX["surplus"]] = S
    obs[:, _OBS_INDEX["x1"]] = X[:, 0]
    obs[:, _OBS_INDEX["x2"]] = X[:, 1]
    smd = lam_vec @ inv_t / gamma
    ifhd = (gamma - 1.0) / gamma * (1.0 - theta) * (params.sigma_Pi @ inv_t)
    for i in range(4):
        obs[:, _OBS_INDEX[f"smd_{i + 1}"]] = smd[:, i]
        obs[:, _OBS_INDEX[f"ifhd_{i + 1}"]] = ifhd[i]

    a = state.alive
    if a.any():
        tab = ctx.table.alive(k, X[a])
        f2 = np.exp(tab["log_f2"])
        ratio = np.exp(tab["log_ratio"])
        hedge = tab["grad_log_f2"] @ params.Sigma_X
        eta = lam_vec[a] / gamma + inflation_hedge * params.sigma_Pi + hedge
        lam = float(hazard(hh.mortality, k * ctx.cfg.dt))
        s = S[a]
        w_r = s - tab["hc"]
        c1 = k1 * s / f2
        c2 = k2 * s / f2
        premium = lam * (ratio * s - w_r)
        drift[a] = (
            r[a] + np.sum(eta * excess[a], axis=1) - 0.5 * np.sum(eta ** 2, axis=1)
            + lam * (1.0 - ratio) - (k1 + k2) / f2
        )
        load[a] = eta
        flow_c1[a] = c1
        flow_c2[a] = c2
        state.W_R[a] = w_r
        rows = obs[a]
        rows[:, _OBS_INDEX["c1"]] = c1
        rows[:, _OBS_INDEX["c2"]] = c2
        rows[:, _OBS_INDEX["premium_I"]] = premium
        rows[:, _OBS_INDEX["face_value"]] = premium / lam
        rows[:, _OBS_INDEX["bequest_wealth_ratio"]] = ratio
        rows[:, _OBS_INDEX["wealth"]] = w_r
        beta = (eta + params.sigma_Pi) @ inv_t
        ithd = hedge @ inv_t
        for i in range(4):
            rows[:, _OBS_INDEX[f"beta_{i + 1}"]] = beta[:, i]
            rows[:, _OBS_INDEX[f"ithd_{i + 1}"]] = ithd[:, i]
        obs[a] = rows

    d = ~a
    if d.any():
        log_f1, grad_log_f1 = ctx.table.dead(k, X[d])
        f1 = np.exp(log_f1)
        hedge = grad_log_f1 @ params.Sigma_X
        u = lam_vec[d] / gamma + inflation_hedge * params.sigma_Pi + hedge
        s = S[d]
        c2 = s / f1
        drift[d] = r[d] + np.sum(u * excess[d], axis=1) - 0.5 * np.sum(u ** 2, axis=1) - 1.0 / f1
        load[d] = u
        flow_c2[d] = c2
        state.W_R[d] = s
        rows = obs[d]
        rows[:, _OBS_INDEX["c2"]] = c2
        rows[:, _OBS_INDEX["wealth"]] = s
        beta = (u + params.sigma_Pi) @ inv_t
        ithd = hedge @ inv_t
        for i in range(4):
            rows[:, _OBS_INDEX[f"beta_{i + 1}"]] = beta[:, i]
            rows[:, _OBS_INDEX[f"ithd_{i + 1}"]] = ithd[:, i]
        obs[d] = rows
    return obs, drift, load, flow_c1, flow_c2


def _factor_increment(ctx: _Context, rng: np.random.Generator, X: np.ndarray, half: int):
    """New factor state and the Brownian increment over one step."""
    params, cfg = ctx.market.params, ctx.cfg
    if cfg.x_scheme == "exact":
        z = _mirror(rng.standard_normal((half, 6)), cfg.antithetic) @ ctx.chol.T
        decay = np.exp(-np.array([params.kappa1, params.kappa2]) * cfg.dt)
        return X * decay + z[:, :2], z[:, 2:]
    m = cfg.euler_substeps
    h = cfg.dt / m
    dz = _mirror(rng.standard_normal((half, m, 4)), cfg.antithetic) * np.sqrt(h)
    K = params.K_X
    for j in range(m):
        X = X - h * X @ K.T + dz[:, j, :] @ params.Sigma_X.T
    return X, dz.sum(axis=1)


def _simulate_block(ctx: _Context, block: int, n: int) -> _Partial:
    hh, params, cfg = ctx.hh, ctx.market.params, ctx.cfg
    rng = _block_generator(cfg.seed, block)
    half = n // 2 if cfg.antithetic else n
    uniforms = rng.random(half)
    if cfg.antithetic:
        uniforms = np.concatenate([uniforms, 1.0 - uniforms])
    death = sample_death_time(hh.mortality, uniforms)
    state = PathState(
        t=0.0,
        X=np.tile(np.asarray(cfg.x0, dtype=float), (n, 1)),
        logPi=np.zeros(n),
        log_surplus=np.full(n, np.log(ctx.S0)),
        W_R=np.zeros(n),
        alive=death > 0.0,
        death_time=death,
        flagged=np.zeros(n, dtype=bool),
    )
    n_obs = len(OBSERVABLES)
    N = ctx.n_steps
    sums = np.zeros((2, N, n_obs))
    sumsq = np.zeros((2, N, n_obs))
    counts = np.zeros((2, N, n_obs))
    value = np.zeros(n)
    g, th = hh.gamma, ctx.evaluation_theta
    kw1, kw2 = hh.kappa1_w, hh.kappa2_w
    alive_only = [_OBS_INDEX[name] for name in _ALIVE_ONLY]
    pi_drift_const = params.delta_pi_e - 0.5 * params.sigma_Pi @ params.sigma_Pi

    for k in range(N):
        t = k * cfg.dt
        state.t = t
        obs, drift, load, c1, c2 = _step_controls(ctx, k, state)
        obs[state.flagged] = np.nan

        valid = np.isfinite(obs)
        alive_mask = valid & state.alive[:, None]
        sums[0, k] = np.where(alive_mask, obs, 0.0).sum(axis=0)
        sumsq[0, k] = np.where(alive_mask, obs ** 2, 0.0).sum(axis=0)
        counts[0, k] = alive_mask.sum(axis=0)
        unconditional = obs.copy()
        dead_ok = ~state.alive & ~state.flagged
        unconditional[np.ix_(dead_ok, alive_only)] = 0.0
        valid = np.isfinite(unconditional)
        sums[1, k] = np.where(valid, unconditional, 0.0).sum(axis=0)
        sumsq[1, k] = np.where(valid, unconditional ** 2, 0.0).sum(axis=0)
        counts[1, k] = valid.sum(axis=0)

        if N == 1:
            weight = 1.0
        else:
            weight = 0.5 if k == 0 else (1.5 if k == N - 1 else 1.0)
        pi = state.Pi
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            flow = kw2 * utility(c2, pi, g, th)
            flow = np.where(state.alive, flow + kw1 * utility(c1, pi, g, th), flow)
        value += weight * cfg.dt * np.exp(-hh.delta * t) * flow

        X_next, dZ = _factor_increment(ctx, rng, state.X, half)
        state.logPi = state.logPi + (pi_drift_const + state.X[:, 1]) * cfg.dt + dZ @ params.sigma_Pi
        state.log_surplus = state.log_surplus + drift * cfg.dt + np.sum(load * dZ, axis=1)
        state.X = X_next

        t_next = (k + 1) * cfg.dt
        dies = state.alive & (state.death_time <= t_next)
        if dies.any() and k + 1 < N and hh.T - t_next >= 0.5 * cfg.dt:
            state.log_surplus[dies] += ctx.table.alive(k + 1, state.X[dies])["log_ratio"]
        state.alive = state.alive & ~dies

        # the only failure mode of the log-surplus step
        bad = ~np.isfinite(state.log_surplus) & ~state.flagged
        if bad.any():
            state.flagged |= bad

    value_ok = ~state.flagged & np.isfinite(value)
    pair_sum = pair_sumsq = 0.0
    pair_count = 0
    if cfg.antithetic:
        h = n // 2
        ok = value_ok[:h] & value_ok[h:]
        pairs = 0.5 * (value[:h] + value[h:])[ok]
        pair_sum, pair_sumsq, pair_count = float(pairs.sum()), float((pairs ** 2).sum()), int(ok.sum())
    kept = value[value_ok]
    return _Partial(
        sums=sums,
        sumsq=sumsq,
        counts=counts,
        value_sum=float(kept.sum()),
        value_sumsq=float((kept ** 2).sum()),
        value_count=int(value_ok.sum()),
        pair_sum=pair_sum,
        pair_sumsq=pair_sumsq,
        pair_count=pair_count,
        excluded=int((~value_ok).sum()),
    )


def _check_existence(sol: GammaSolution) -> None:
    report = sol.existence_report
    if report is not None and not report.passed:
        raise ExistenceFail(
            f"Global existence not established for gamma={sol.gamma}, theta={sol.theta}: "
            f"failed {report.failures() or ['indeterminate']}"
        )


def simulate(
    hh: HouseholdSpec,
    market: Market,
    sol: GammaSolution,
    cfg: SimConfig,
    control_theta: Optional[float] = None,
    evaluation_theta: float = 0.0,
    table: Optional[PolicyTable] = None,
) -> SimulationResult:
    """Simulate paths under the closed-form controls of money-illusion degree control_theta.

    Args:
        hh: Household (its theta is replaced by control_theta when given)
        market: Solved market
        sol: Gamma solution for (hh.gamma, control_theta)
        cfg: Simulation settings
        control_theta: Money illusion used by the controls
        evaluation_theta: Money illusion of the utility used for the value estimate
        table: Prebuilt policy table for the same (hh, sol, dt)

    Raises:
        ExistenceFail: If the Gamma solution failed its existence battery
        NonpositiveSurplus: If the initial surplus is not positive
    """
    if control_theta is not None:
        hh = hh.with_theta(control_theta)
    if sol.gamma != hh.gamma or sol.theta != hh.theta:
        raise ValidationError(
            f"Gamma solution is for (gamma={sol.gamma}, theta={sol.theta}), "
            f"controls need (gamma={hh.gamma}, theta={hh.theta})"
        )
    _check_existence(sol)
    if hh.kappa2_w <= 0:
        raise ValidationError("Simulation needs kappa2_w > 0: the family consumes after the breadwinner dies")
    if not 0.0 <= evaluation_theta <= 1.0:
        raise ValidationError(f"evaluation_theta must lie in [0, 1], got {evaluation_theta}")
    if abs(round(hh.T / cfg.dt) * cfg.dt - hh.T) > 1e-9:
        raise ValidationError(f"dt = {cfg.dt} does not divide T = {hh.T}")
    N = cfg.n_steps(hh.T)

    S0 = hh.W0 + human_capital(hh.income, hh.mortality, market.coeffs, 0.0, cfg.x0)
    if S0 <= 0:
        raise NonpositiveSurplus(f"Initial surplus {S0:.6g} is not positive")
    if table is None:
        table = PolicyTable(hh, market, sol, cfg.dt, N, cfg.grid_points, cfg.grid_width)
    ctx = _Context(
        hh=hh,
        market=market,
        table=table,
        cfg=cfg,
        n_steps=N,
        chol=joint_increment_cholesky(market, cfg.dt) if cfg.x_scheme == "exact" else None,
        S0=S0,
        evaluation_theta=evaluation_theta,
    )

    sizes = [cfg.block_size] * (cfg.n_paths // cfg.block_size)
    if cfg.n_paths % cfg.block_size:
        sizes.append(cfg.n_paths % cfg.block_size)
    if cfg.antithetic and any(s % 2 for s in sizes):
        raise ValidationError("Antithetic blocks need an even number of paths")

    def run(block: int) -> _Partial:
        return _simulate_block(ctx, block, sizes[block])

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            partials = list(pool.map(run, range(len(sizes))))
    else:
        partials = [run(b) for b in range(len(sizes))]
    total = tree_reduce(partials)

    mean_alive, se_alive = _mean_se(total.sums[0], total.sumsq[0], total.counts[0])
    mean_all, se_all = _mean_se(total.sums[1], total.sumsq[1], total.counts[1])
    if cfg.antithetic and total.pair_count > 1:
        _, s = _mean_se(np.array(total.pair_sum), np.array(total.pair_sumsq), np.array(total.pair_count))
        value, value_se = float(total.value_sum / total.value_count), float(s)
    else:
        m, s = _mean_se(np.array(total.value_sum), np.array(total.value_sumsq), np.array(total.value_count))
        value, value_se = float(m), float(s)
    if total.excluded:
        logger.warning("Excluded %d of %d paths with non-finite surplus", total.excluded, cfg.n_paths)

    keep = [_OBS_INDEX[name] for name in cfg.record]
    times = np.arange(N) * cfg.dt
    surplus_idx = _OBS_INDEX["surplus"]
    alive_fraction = total.counts[0][:, surplus_idx] / np.maximum(total.counts[1][:, surplus_idx], 1)
    logger.info(
        "Simulated %d paths x %d steps (gamma=%g, control theta=%g): value %.6g +/- %.2g",
        cfg.n_paths, N, hh.gamma, hh.theta, value, value_se,
    )
    return SimulationResult(
        times=times,
        ages=hh.mortality.x + times,
        observables=tuple(cfg.record),
        mean_alive=mean_alive[:, keep],
        se_alive=se_alive[:, keep],
        count_alive=total.counts[0][:, keep],
        mean_all=mean_all[:, keep],
        se_all=se_all[:, keep],
        count_all=total.counts[1][:, keep],
        alive_fraction=alive_fraction,
        value=value,
        value_se=value_se,
        n_paths=cfg.n_paths,
        excluded_paths=total.excluded,
        control_theta=hh.theta,
        evaluation_theta=evaluation_theta,
        meta={"S0": S0, "block_sizes": sizes},
    )


def estimate_value(
    hh: HouseholdSpec,
    market: Market,
    cfg: SimConfig,
    control_theta: float,
    evaluation_theta: float = 0.0,
    sol: Optional[GammaSolution] = None,
) -> tuple[float, float]:
    """Monte Carlo value of the objective and its standard error.

    Controls follow the closed form for control_theta; utility is measured
    with evaluation_theta.
    """
    hh_c = hh.with_theta(control_theta)
    if sol is None:
        sol = solve_for_household(market.params, hh_c)
    result = simulate(hh_c, market, sol, cfg, evaluation_theta=evaluation_theta)
    return result.value, result.value_se


def expected_curves(
    hh: HouseholdSpec,
    market: Market,
    cfg: SimConfig,
    thetas: Sequence[float],
) -> pd.DataFrame:
    """Long table of mean curves: age, theta, observable, mean, stderr and unconditional moments."""
    frames = []
    for theta in thetas:
        hh_c = hh.with_theta(float(theta))
        sol = solve_for_household(market.params, hh_c)
        res = simulate(hh_c, market, sol, cfg)
        for j, name in enumerate(res.observables):
            frames.append(pd.DataFrame({
                "age": res.ages,
                "theta": float(theta),
                "observable": name,
                "mean": res.mean_alive[:, j],
                "stderr": res.se_alive[:, j],
                "mean_unconditional": res.mean_all[:, j],
                "stderr_unconditional": res.se_all[:, j],
                "alive_count": res.count_alive[:, j].astype(int),
            }))
    return pd.concat(frames, ignore_index=True)


def welfare_curve(
    hh: HouseholdSpec,
    market: Market,
    cfg: SimConfig,
    gammas: Sequence[float],
    thetas: Sequence[float],
) -> pd.DataFrame:
    """Welfare loss of money-illusion controls, one row per (gamma, theta).

    Every theta reuses cfg.seed, so the curve is estimated with common random
    numbers. theta = 0 is the optimum and reports a loss of exactly zero.
    Standard errors use the delta method on the value estimate.
    """
    rows = []
    for gamma in gammas:
        hh_g = hh.with_gamma(float(gamma)).with_theta(0.0)
        sol0 = solve_for_household(market.params, hh_g)
        for theta in thetas:
            theta = float(theta)
            if theta == 0.0:
                rows.append({"gamma": float(gamma), "theta": 0.0, "loss": 0.0, "stderr": 0.0})
                continue
            v, se = estimate_value(hh_g, market, cfg, control_theta=theta, evaluation_theta=0.0)
            loss = welfare_loss(hh_g, market, sol0, v, X0=cfg.x0)
            se_loss = (1.0 - loss) * se / ((1.0 - gamma) * v)
            rows.append({"gamma": float(gamma), "theta": theta, "loss": loss, "stderr": abs(se_loss)})
            logger.info("Welfare loss gamma=%g theta=%.3f: %.4f +/- %.4f", gamma, theta, loss, se_loss)
    return pd.DataFrame(rows, columns=["gamma", "theta", "loss", "stderr"])
