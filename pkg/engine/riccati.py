"""Matrix Riccati system behind the value-function candidates.

f(X, tau) = exp(Gamma0 + Gamma1^T X + X^T Gamma2 X / 2) where
    Gamma2' = Gamma2 Z2 Gamma2 + Z1^T Gamma2 + Gamma2 Z1 + Z0
    Gamma1' = Gamma2 B2 Gamma1 + Gamma2 B11 + B12 Gamma1 + B0
    Gamma0' = Gamma1^T D2 Gamma1 + Gamma1^T D1 + Tr(Sigma_X^T Gamma2 Sigma_X) / 2 + D0
all starting at zero. f1 and f2 integrate f against discounting (and
survival for f2) over the remaining horizon.

Global existence is checked two ways: Gram-matrix definiteness for
gamma > 1, and for 0 < gamma < 1 the quartic root conditions on the
Hamiltonian matrix plus a scan of the Radon linearization
Gamma2 = P Q^{-1}.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicSpline
from scipy.linalg import expm

from engine.actuarial import MortalityLaw, conditional_survival, hazard
from engine.errors import BlowUp, GammaOne, QSingular, ValidationError
from engine.household import HouseholdSpec
from engine.market import ArrayLike, DEFAULT_ODE_STEP, MarketParams
from engine.ode import dense_output, make_grid, rk4_integrate
from engine.quadrature import integrate

logger = logging.getLogger(__name__)

BLOWUP_NORM = 1e12
DET_Q_FLOOR = 1e-12
EIGEN_GAP_RTOL = 1e-8
SCAN_POINTS = 600
F_RTOL = 1e-10


@dataclass(frozen=True)
class GammaCoefficients:
    """Coefficient blocks of the Gamma system for given (gamma, theta)."""

    Z0: np.ndarray
    Z1: np.ndarray
    Z2: np.ndarray
    B2: np.ndarray
    B11: np.ndarray
    B12: np.ndarray
    B0: np.ndarray
    D2: np.ndarray
    D1: np.ndarray
    D0: float
    gamma: float
    theta: float
    Lambda1_gram: np.ndarray


def build_coefficients(params: MarketParams, gamma: float, theta: float) -> GammaCoefficients:
    """Assemble Z, B and D blocks from market parameters and preferences.

    Raises:
        GammaOne: If gamma == 1
        ValidationError: If gamma <= 0 or theta outside [0, 1]
    """
    if gamma == 1.0:
        raise GammaOne("gamma = 1 (log utility) is not supported")
    if gamma <= 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    if not 0.0 <= theta <= 1.0:
        raise ValidationError(f"theta must lie in [0, 1], got {theta}")

    k = (1.0 - gamma) / gamma
    k2 = (1.0 - gamma) / gamma ** 2
    sx = params.Sigma_X
    lam0, lam1 = params.Lambda0, params.Lambda1
    s_pi = params.sigma_Pi
    excess = lam0 - s_pi
    lam1_gram = lam1.T @ lam1

    Z2 = sx @ sx.T
    Z1 = k * sx @ lam1 - params.K_X
    Z0 = k2 * lam1_gram
    B11 = sx @ (k * excess + theta * k * s_pi)
    B0 = (
        k * np.array([1.0, 0.0])
        + k * theta * np.array([0.0, 1.0])
        + k2 * lam1.T @ excess
        + theta * k ** 2 * lam1.T @ s_pi
    )
    D0 = (
        k * (params.delta_r + theta * params.delta_pi_e)
        + (1.0 - gamma) / (2.0 * gamma ** 2) * excess @ excess
        + 0.5 * theta * k * (theta * k - 1.0) * s_pi @ s_pi
        + theta * k ** 2 * excess @ s_pi
    )
    return GammaCoefficients(
        Z0=Z0,
        Z1=Z1,
        Z2=Z2,
        B2=Z2,
        B11=B11,
        B12=Z1.T,
        B0=B0,
        D2=Z2 / 2.0,
        D1=B11,
        D0=float(D0),
        gamma=float(gamma),
        theta=float(theta),
        Lambda1_gram=lam1_gram,
    )


# =============================================================================
# Direct integration
# =============================================================================


def _pack(g0: float, g1: np.ndarray, g2: np.ndarray) -> np.ndarray:
    return np.concatenate([[g0], g1, g2.reshape(-1)])


def gamma_rhs(coeffs: GammaCoefficients):
    """Right-hand side for the packed state (Gamma0, Gamma1, vec Gamma2)."""
    c = coeffs

    def rhs(y: np.ndarray) -> np.ndarray:
        g1 = y[1:3]
        g2 = y[3:7].reshape(2, 2)
        d2 = g2 @ c.Z2 @ g2 + c.Z1.T @ g2 + g2 @ c.Z1 + c.Z0
        d1 = g2 @ c.B2 @ g1 + g2 @ c.B11 + c.B12 @ g1 + c.B0
        d0 = g1 @ c.D2 @ g1 + g1 @ c.D1 + 0.5 * np.trace(g2 @ c.Z2) + c.D0
        return _pack(d0, d1, d2)

    return rhs


def _symmetrize(y: np.ndarray) -> np.ndarray:
    off = 0.5 * (y[4] + y[5])
    y[4] = off
    y[5] = off
    return y


@dataclass(frozen=True)
class ExistenceCheck:
    """One named diagnostic; passed is None for informational values."""

    name: str
    value: float
    passed: Optional[bool] = None


@dataclass(frozen=True)
class ExistenceReport:
    """Outcome of the global-existence battery."""

    regime: str  # "gamma_gt_1" or "gamma_in_01"
    checks: tuple[ExistenceCheck, ...]
    indeterminate: bool = False

    @property
    def passed(self) -> bool:
        if self.indeterminate:
            return False
        return all(c.passed for c in self.checks if c.passed is not None)

    def check(self, name: str) -> ExistenceCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def failures(self) -> list[str]:
        return [c.name for c in self.checks if c.passed is False]

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "passed": self.passed,
            "indeterminate": self.indeterminate,
            "checks": [
                {"name": c.name, "value": c.value, "passed": c.passed} for c in self.checks
            ],
        }


@dataclass(frozen=True)
class GammaSolution:
    """Solved Gamma trajectories on a uniform tau grid."""

    tau_grid: np.ndarray
    Gamma0: np.ndarray
    Gamma1: np.ndarray
    Gamma2: np.ndarray
    gamma: float
    theta: float
    existence_report: Optional[ExistenceReport] = None
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        stacked = np.column_stack([self.Gamma0, self.Gamma1, self.Gamma2.reshape(-1, 4)])
        object.__setattr__(self, "_spline", dense_output(self.tau_grid, stacked))

    @property
    def tau_max(self) -> float:
        return float(self.tau_grid[-1])

    def at(self, tau: ArrayLike) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(Gamma0, Gamma1, Gamma2) at tau by dense interpolation."""
        tau = np.asarray(tau, dtype=float)
        if np.any(tau < 0) or np.any(tau > self.tau_max + 1e-9):
            raise ValidationError(f"tau outside solved range [0, {self.tau_max}]")
        v = self._spline(tau)
        return v[..., 0], v[..., 1:3], v[..., 3:7].reshape(v.shape[:-1] + (2, 2))


def solve_gamma_system(
    coeffs: GammaCoefficients,
    T: float,
    step: float = DEFAULT_ODE_STEP,
) -> GammaSolution:
    """Integrate the Gamma system with RK4 from tau = 0 to T.

    Gamma2 is projected onto symmetric matrices after every step.

    Raises:
        BlowUp: If the state norm exceeds 1e12 (finite-time escape)
    """
    grid = make_grid(T, step)

    def check(tau: float, y: np.ndarray) -> None:
        if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > BLOWUP_NORM:
            raise BlowUp(
                f"Riccati flow escaped at tau = {tau:.6f} "
                f"(gamma={coeffs.gamma}, theta={coeffs.theta})"
            )

    sol = rk4_integrate(gamma_rhs(coeffs), np.zeros(7), grid, check=check, project=_symmetrize)
    gamma2 = sol[:, 3:7].reshape(-1, 2, 2)
    report = assess_existence(coeffs, T, gamma2_path=gamma2[1:])
    logger.debug(
        "Solved Gamma system: gamma=%g theta=%g nodes=%d existence=%s",
        coeffs.gamma, coeffs.theta, len(grid), report.passed,
    )
    return GammaSolution(
        tau_grid=grid,
        Gamma0=sol[:, 0],
        Gamma1=sol[:, 1:3],
        Gamma2=gamma2,
        gamma=coeffs.gamma,
        theta=coeffs.theta,
        existence_report=report,
    )


def solve_for_household(
    params: MarketParams,
    household: HouseholdSpec,
    theta: Optional[float] = None,
    step: float = DEFAULT_ODE_STEP,
) -> GammaSolution:
    """Build coefficients and solve over the household horizon."""
    theta = household.theta if theta is None else theta
    coeffs = build_coefficients(params, household.gamma, theta)
    return solve_gamma_system(coeffs, household.T, step)


# =============================================================================
# Hamiltonian linearization
# =============================================================================


@dataclass(frozen=True)
class HamiltonianSystem:
    """H = [[-Z1, -Z2], [Z0, Z1^T]] with eigen-decomposition H V = V diag(eigvals)."""

    H: np.ndarray
    eigvals: np.ndarray
    V: np.ndarray

    @property
    def min_eigen_gap(self) -> float:
        lam = self.eigvals
        gaps = [abs(lam[i] - lam[j]) for i in range(4) for j in range(i + 1, 4)]
        return float(min(gaps))

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(self.eigvals)))


def hamiltonian(coeffs: GammaCoefficients) -> HamiltonianSystem:
    H = np.block([[-coeffs.Z1, -coeffs.Z2], [coeffs.Z0, coeffs.Z1.T]])
    eigvals, V = np.linalg.eig(H)
    order = np.argsort(eigvals.real, kind="stable")
    return HamiltonianSystem(H=H, eigvals=eigvals[order], V=V[:, order])


def quartic_invariants(H: np.ndarray) -> dict[str, float]:
    """Characteristic polynomial coefficients and depressed-quartic invariants.

    det(lambda I - H) = lambda^4 + b lambda^3 + c lambda^2 + d lambda + j;
    substituting y = lambda - b/4 gives y^4 + q y^2 + r y + s with
    discriminant disc.
    """
    _, b, c, d, j = np.real(np.poly(H))
    q = (8 * c - 3 * b ** 2) / 8
    r = (b ** 3 - 4 * b * c + 8 * d) / 8
    s = (-3 * b ** 4 + 256 * j - 64 * b * d + 16 * b ** 2 * c) / 256
    disc = (
        -4 * q ** 3 * r ** 2
        - 27 * r ** 4
        + 256 * s ** 3
        + 16 * q ** 4 * s
        + 144 * q * r ** 2 * s
        - 128 * q ** 2 * s ** 2
    )
    return {"b": b, "c": c, "d": d, "j": j, "q": q, "r": r, "s": s, "disc": disc}


@dataclass(frozen=True)
class RadonSolution:
    """Linear Hamiltonian flow (Q, P) with Gamma2 = P Q^{-1}."""

    tau: np.ndarray
    Q: np.ndarray
    P: np.ndarray
    Gamma2: np.ndarray
    det_Q: np.ndarray
    local_det_min: float


def radon_solve(
    coeffs: GammaCoefficients,
    T: float,
    n_points: int = SCAN_POINTS,
    taus: Optional[ArrayLike] = None,
) -> RadonSolution:
    """Solve d(Q, P)/dtau = H (Q, P), Q(0) = I, P(0) = 0 with matrix exponentials.

    The flow restarts from (I, Gamma2(tau_k)) on every interval so that P Q^{-1}
    stays well conditioned while Q itself grows; Q(tau) is carried as the
    product of the interval factors.

    Args:
        coeffs: Gamma-system coefficients
        T: Horizon
        n_points: Uniform evaluation points on (0, T] when taus is None
        taus: Explicit ascending evaluation points in (0, T]

    Raises:
        QSingular: If |det Q| drops below 1e-12
    """
    H = hamiltonian(coeffs).H
    if taus is None:
        taus = np.linspace(0.0, T, n_points + 1)[1:]
    taus = np.asarray(taus, dtype=float)
    nodes = np.concatenate([[0.0], taus])

    q_global = np.eye(2)
    gamma2 = np.zeros((2, 2))
    out_q, out_p, out_g, out_det = [q_global], [np.zeros((2, 2))], [gamma2], [1.0]
    local_min = 1.0
    cache: dict[float, np.ndarray] = {}
    for tau_prev, tau in zip(nodes[:-1], nodes[1:]):
        h = round(tau - tau_prev, 12)
        if h not in cache:
            cache[h] = expm(H * h)
        e = cache[h]
        q_local = e[:2, :2] + e[:2, 2:] @ gamma2
        p_local = e[2:, :2] + e[2:, 2:] @ gamma2
        det_local = float(np.linalg.det(q_local))
        local_min = min(local_min, abs(det_local))
        q_global = q_local @ q_global
        det_global = float(np.linalg.det(q_global))
        if abs(det_local) < DET_Q_FLOOR or abs(det_global) < DET_Q_FLOOR:
            raise QSingular(tau, min(abs(det_local), abs(det_global)))
        gamma2 = np.linalg.solve(q_local.T, p_local.T).T
        gamma2 = 0.5 * (gamma2 + gamma2.T)
        out_q.append(q_global)
        out_p.append(gamma2 @ q_global)
        out_g.append(gamma2)
        out_det.append(det_global)
    return RadonSolution(
        tau=nodes,
        Q=np.array(out_q),
        P=np.array(out_p),
        Gamma2=np.array(out_g),
        det_Q=np.array(out_det),
        local_det_min=local_min,
    )


# =============================================================================
# Existence battery
# =============================================================================


def _max_eig_path(gamma2_path: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvalsh(gamma2_path)))


def assess_existence(
    coeffs: GammaCoefficients,
    T: float,
    gamma2_path: Optional[np.ndarray] = None,
) -> ExistenceReport:
    """Regime-dispatched existence diagnostics from the coefficient blocks.

    Args:
        coeffs: Gamma-system coefficients
        T: Horizon
        gamma2_path: Gamma2 on (0, T] from a direct solve, reported as
            information in the gamma > 1 regime
    """
    if coeffs.gamma > 1.0:
        min_z2 = float(np.min(np.linalg.eigvalsh(coeffs.Z2)))
        min_l1 = float(np.min(np.linalg.eigvalsh(coeffs.Lambda1_gram)))
        checks = [
            ExistenceCheck("factor_gram_min_eig", min_z2, min_z2 > 0),
            ExistenceCheck("lambda1_gram_min_eig", min_l1, min_l1 > 0),
        ]
        if gamma2_path is not None:
            checks.append(ExistenceCheck("gamma2_max_eig", _max_eig_path(gamma2_path)))
        return ExistenceReport(regime="gamma_gt_1", checks=tuple(checks))

    system = hamiltonian(coeffs)
    inv = quartic_invariants(system.H)
    gap = system.min_eigen_gap
    indeterminate = gap <= EIGEN_GAP_RTOL * max(system.spectral_radius, 1e-300)
    checks = [ExistenceCheck(name, float(inv[name])) for name in ("b", "c", "d", "j", "r")]
    checks += [
        ExistenceCheck("q", float(inv["q"]), bool(inv["q"] < 0)),
        ExistenceCheck("s_below_q2_over_4", float(inv["s"] - inv["q"] ** 2 / 4), bool(inv["s"] < inv["q"] ** 2 / 4)),
        ExistenceCheck("discriminant", float(inv["disc"]), bool(inv["disc"] > 0)),
        ExistenceCheck("eigen_gap", gap),
    ]
    try:
        radon = radon_solve(coeffs, T)
        det_min = float(min(np.min(np.abs(radon.det_Q)), radon.local_det_min))
        checks.append(ExistenceCheck("det_Q_min", det_min, det_min >= DET_Q_FLOOR))
        max_eig = _max_eig_path(radon.Gamma2[1:])
        checks.append(ExistenceCheck("gamma2_max_eig", max_eig, max_eig < 0))
    except QSingular as e:
        logger.warning("Radon scan hit a conjugate point: %s", e)
        checks.append(ExistenceCheck("det_Q_min", e.det, False))
        checks.append(ExistenceCheck("gamma2_max_eig", float("nan"), False))
    if indeterminate:
        logger.warning("Hamiltonian eigenvalues not separated (gap %.3e); existence indeterminate", gap)
    return ExistenceReport(regime="gamma_in_01", checks=tuple(checks), indeterminate=indeterminate)


def existence_check(params: MarketParams, gamma: float, theta: float, T: float) -> ExistenceReport:
    """Run the global-existence battery for (gamma, theta) over [0, T]."""
    return assess_existence(build_coefficients(params, gamma, theta), T)


# =============================================================================
# f, f1, f2 and their derivatives
# =============================================================================


def eval_f(sol: GammaSolution, X: ArrayLike, tau: ArrayLike) -> np.ndarray:
    """exp(Gamma0 + Gamma1^T X + X^T Gamma2 X / 2), broadcasting over tau."""
    X = np.asarray(X, dtype=float)
    g0, g1, g2 = sol.at(tau)
    return np.exp(g0 + g1 @ X + 0.5 * np.einsum("...ij,i,j->...", g2, X, X))


@dataclass(frozen=True)
class FDerivatives:
    """f1, f2 with time derivatives, gradients and Hessians in X at (t, X)."""

    f1: float
    f1_t: float
    f1_x: np.ndarray
    f1_xx: np.ndarray
    f2: float
    f2_t: float
    f2_x: np.ndarray
    f2_xx: np.ndarray


def _check_horizon(sol: GammaSolution, t: float, T: float) -> None:
    if t > T:
        raise ValidationError(f"t = {t} exceeds horizon T = {T}")
    if T - t > sol.tau_max + 1e-9:
        raise ValidationError(f"Gamma solution covers tau <= {sol.tau_max}, need {T - t}")


def _f_integrals(
    sol: GammaSolution,
    X: np.ndarray,
    t: float,
    T: float,
    delta: float,
    gamma: float,
    law: Optional[MortalityLaw],
) -> np.ndarray:
    """Integrate [e, e g, e (g g^T + Gamma2)] and, with a law, their survival-weighted
    counterparts plus the hazard-weighted term, over u in [0, T - t].

    e(u) = exp(-delta u / gamma) f(X, u), g = Gamma1 + Gamma2 X.
    """
    X = np.asarray(X, dtype=float)
    n_out = 7 if law is None else 15

    def integrand(u: float) -> np.ndarray:
        g0, g1, g2 = sol.at(u)
        grad = g1 + g2 @ X
        e = np.exp(-delta * u / gamma + g0 + g1 @ X + 0.5 * X @ g2 @ X)
        base = e * np.concatenate([[1.0], grad, (np.outer(grad, grad) + g2).reshape(-1)])
        if law is None:
            return base
        p = conditional_survival(law, t, u)
        return np.concatenate([base, p * base, [hazard(law, t + u) * p * e]])

    if T - t <= 0:
        return np.zeros(n_out)
    return integrate(integrand, 0.0, T - t, rtol=F_RTOL, label="f integral")


def eval_f1(sol: GammaSolution, delta: float, gamma: float, X: ArrayLike, t: float, T: float) -> float:
    """int_t^T exp(-delta (s - t) / gamma) f(X, s - t) ds."""
    _check_horizon(sol, t, T)
    return float(_f_integrals(sol, np.asarray(X, dtype=float), t, T, delta, gamma, None)[0])


def eval_f1_gradient(sol: GammaSolution, delta: float, gamma: float, X: ArrayLike, t: float, T: float) -> np.ndarray:
    """df1/dX by differentiating the exponent under the integral."""
    _check_horizon(sol, t, T)
    return _f_integrals(sol, np.asarray(X, dtype=float), t, T, delta, gamma, None)[1:3]


def _f2_parts(sol: GammaSolution, household: HouseholdSpec, X: ArrayLike, t: float, T: float) -> np.ndarray:
    _check_horizon(sol, t, T)
    return _f_integrals(sol, np.asarray(X, dtype=float), t, T, household.delta, household.gamma, household.mortality)


def eval_f2(sol: GammaSolution, household: HouseholdSpec, X: ArrayLike, t: float, T: float) -> float:
    """kappa1_w^(1/gamma) * survival-weighted integral + kappa2_w^(1/gamma) * f1."""
    k1, k2 = household.weight_roots
    v = _f2_parts(sol, household, X, t, T)
    return float(k1 * v[7] + k2 * v[0])


def eval_f2_gradient(sol: GammaSolution, household: HouseholdSpec, X: ArrayLike, t: float, T: float) -> np.ndarray:
    """df2/dX, exact under the integral sign."""
    k1, k2 = household.weight_roots
    v = _f2_parts(sol, household, X, t, T)
    return k1 * v[8:10] + k2 * v[1:3]


def f_derivatives(sol: GammaSolution, household: HouseholdSpec, X: ArrayLike, t: float) -> FDerivatives:
    """All partial derivatives of f1 and f2 needed by the HJB generator.

    Time derivatives use the Leibniz rule; the survival factor contributes
    d/dt p(u; t) = -(hazard(t + u) - hazard(t)) p(u; t).
    """
    X = np.asarray(X, dtype=float)
    T = household.T
    v = _f2_parts(sol, household, X, t, T)
    k1, k2 = household.weight_roots
    tau = T - t
    e_end = np.exp(-household.delta * tau / household.gamma) * float(eval_f(sol, X, tau))
    p_end = conditional_survival(household.mortality, t, tau)

    f1, f1_x, f1_xx = v[0], v[1:3], v[3:7].reshape(2, 2)
    m, m_x, m_xx = v[7], v[8:10], v[10:14].reshape(2, 2)
    f1_t = -e_end
    m_t = -p_end * e_end - v[14] + hazard(household.mortality, t) * m
    return FDerivatives(
        f1=float(f1),
        f1_t=float(f1_t),
        f1_x=f1_x,
        f1_xx=f1_xx,
        f2=float(k1 * m + k2 * f1),
        f2_t=float(k1 * m_t + k2 * f1_t),
        f2_x=k1 * m_x + k2 * f1_x,
        f2_xx=k1 * m_xx + k2 * f1_xx,
    )


class FKernel:
    """f and its X-gradient precomputed on a fixed node set for a batch of states.

    Nodes are u_j = j * step for j = 0..N, with N * step = horizon. Integrals
    over [0, horizon - t] use the first round((horizon - t) / step) + 1 nodes,
    so t must sit on the step lattice.
    """

    def __init__(self, sol: GammaSolution, X: np.ndarray, step: float, horizon: float):
        self.X = np.atleast_2d(np.asarray(X, dtype=float))
        self.step = step
        self.horizon = horizon
        n_nodes = int(round(horizon / step))
        self.u = np.arange(n_nodes + 1) * step
        g0, g1, g2 = sol.at(np.minimum(self.u, sol.tau_max))
        exponent = (
            g0[None, :]
            + self.X @ g1.T
            + 0.5 * np.einsum("jab,na,nb->nj", g2, self.X, self.X)
        )
        self.f = np.exp(exponent)
        self.grad = self.f[..., None] * (g1[None, :, :] + np.einsum("jab,nb->nja", g2, self.X))

    def integrals(
        self,
        t: float,
        delta: float,
        gamma: float,
        law: Optional[MortalityLaw] = None,
    ) -> tuple[np.ndarray, np.ndarray]:
        """Composite-Simpson integrals of discount (times survival) times f.

        Returns:
            (values shape (n,), gradients shape (n, 2))
        """
        n = int(round((self.horizon - t) / self.step))
        if n <= 0:
            return np.zeros(len(self.X)), np.zeros((len(self.X), 2))
        u = self.u[: n + 1]
        weight = np.exp(-delta * u / gamma)
        if law is not None:
            weight = weight * conditional_survival(law, t, u)
        value = simpson(self.f[:, : n + 1] * weight, x=u, axis=1)
        grad = simpson(self.grad[:, : n + 1, :] * weight[None, :, None], x=u, axis=1)
        return value, grad


def tabulate_f(
    kernel: FKernel, household: HouseholdSpec, t: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """f1, grad f1, f2 and grad f2 for every state of a kernel at time t.

    Returns:
        (f1 shape (n,), f1_x shape (n, 2), f2 shape (n,), f2_x shape (n, 2))
    """
    k1, k2 = household.weight_roots
    f1, f1_x = kernel.integrals(t, household.delta, household.gamma)
    m, m_x = kernel.integrals(t, household.delta, household.gamma, household.mortality)
    return f1, f1_x, k1 * m + k2 * f1, k1 * m_x + k2 * f1_x
