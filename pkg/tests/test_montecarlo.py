"""Tests for the Monte Carlo life-cycle simulator."""
from dataclasses import replace

import numpy as np
import pytest

from engine.actuarial import human_capital
from engine.errors import ExistenceFail, ValidationError
from engine.market import factor_covariance
from engine.montecarlo import (
    OBSERVABLES,
    SimConfig,
    joint_increment_cholesky,
    simulate,
    tree_reduce,
    welfare_curve,
)
from engine.riccati import ExistenceCheck, ExistenceReport
from engine.strategies import decompose_beta, policy_phase1, value_function

X0 = np.zeros(2)


def small_config(**overrides) -> SimConfig:
    """Quarterly steps, a few hundred paths and a coarse policy table."""
    base = dict(n_paths=256, dt=0.25, seed=7, block_size=64, grid_points=11)
    base.update(overrides)
    return SimConfig(**base)


@pytest.fixture(scope="module")
def short_sol(solve, short_household):
    return solve(short_household)


@pytest.fixture(scope="module")
def small_result(short_household, market, short_sol):
    return simulate(short_household, market, short_sol, small_config())


class TestSimConfig:
    """Settings validation."""

    def test_odd_block_size(self):
        """Blocks must hold an even number of paths."""
        with pytest.raises(ValidationError):
            SimConfig(block_size=63)

    def test_antithetic_needs_even_paths(self):
        """Antithetic pairs need an even path count."""
        with pytest.raises(ValidationError):
            SimConfig(n_paths=101, antithetic=True)

    def test_unknown_observable(self):
        """Only known observables can be recorded."""
        with pytest.raises(ValidationError):
            SimConfig(record=("c1", "utility"))

    def test_step_must_divide_horizon(self):
        """The time step must divide the horizon."""
        with pytest.raises(ValidationError):
            SimConfig(dt=0.3).n_steps(10.0)
        assert SimConfig(dt=0.25).n_steps(10.0) == 40


class TestIncrements:
    """Joint factor and Brownian increments."""

    def test_cholesky_reproduces_covariance(self, params, market):
        """L L^T equals the joint covariance of (OU innovation, dZ)."""
        dt = 1.0 / 12.0
        L = joint_increment_cholesky(market, dt)
        k = np.array([params.kappa1, params.kappa2])
        cross = ((1.0 - np.exp(-k * dt)) / k)[:, None] * params.Sigma_X
        cov = np.block([[factor_covariance(params, dt), cross], [cross.T, dt * np.eye(4)]])
        np.testing.assert_allclose(L @ L.T, cov, atol=1e-14)

    def test_tree_reduce_order(self):
        """Pairwise reduction keeps the left-to-right order."""
        assert tree_reduce(list("abcde")) == "abcde"
        assert tree_reduce([1, 2, 3, 4, 5, 6, 7]) == 28

    def test_tree_reduce_empty(self):
        """An empty reduction is an error."""
        with pytest.raises(ValueError):
            tree_reduce([])


class TestSimulate:
    """Path simulation under the closed-form controls."""

    def test_shapes(self, small_result, short_household):
        """One row per step and one column per recorded observable."""
        assert small_result.mean_alive.shape == (40, len(OBSERVABLES))
        assert small_result.ages[0] == short_household.mortality.x
        assert small_result.alive_fraction[0] == 1.0
        assert np.all(np.diff(small_result.alive_fraction) <= 0)

    def test_first_step_matches_closed_form(self, small_result, short_household, market, short_sol):
        """At t = 0 every path sits at X0, so the means equal the pointwise controls."""
        p = policy_phase1(short_household, market, short_sol, 0.0, short_household.W0, X0)
        j = small_result.observables.index
        assert small_result.mean_alive[0, j("c1")] == pytest.approx(p.c1, rel=1e-4)
        assert small_result.mean_alive[0, j("premium_I")] == pytest.approx(p.premium_I, rel=1e-4)
        dec = decompose_beta(short_household, market, short_sol, 0.0, X0)
        np.testing.assert_allclose(
            small_result.mean_alive[0, [j(f"smd_{i}") for i in range(1, 5)]], dec.smd, rtol=1e-10
        )
        assert small_result.meta["S0"] == pytest.approx(
            short_household.W0 + human_capital(short_household.income, short_household.mortality, market.coeffs, 0.0, X0)
        )

    def test_curve(self, small_result):
        """Curves come as age, mean, stderr."""
        df = small_result.curve("c2")
        assert list(df.columns) == ["age", "mean", "stderr"]
        assert len(df) == 40
        with pytest.raises(ValidationError):
            small_result.curve("nothing")

    def test_deterministic(self, short_household, market, short_sol, small_result):
        """The same seed reproduces every statistic."""
        again = simulate(short_household, market, short_sol, small_config())
        np.testing.assert_array_equal(again.mean_alive, small_result.mean_alive)
        assert again.value == small_result.value

    def test_workers_do_not_change_results(self, short_household, market, short_sol, small_result):
        """Streams are keyed by block, so thread count is irrelevant."""
        threaded = simulate(short_household, market, short_sol, small_config(workers=2))
        np.testing.assert_array_equal(threaded.mean_all, small_result.mean_all)
        assert threaded.value == small_result.value

    def test_antithetic_run(self, short_household, market, short_sol):
        """Antithetic sampling yields a finite value and standard error."""
        res = simulate(short_household, market, short_sol, small_config(antithetic=True))
        assert np.isfinite(res.value) and np.isfinite(res.value_se)
        assert res.excluded_paths == 0

    def test_euler_scheme(self, short_household, market, short_sol):
        """Sub-stepped Euler factors run on the same interface."""
        res = simulate(short_household, market, short_sol, small_config(x_scheme="euler", euler_substeps=5))
        assert np.isfinite(res.value)

    def test_failed_existence_refused(self, short_household, market, short_sol):
        """Controls from a Gamma solution without global existence are refused."""
        report = ExistenceReport("gamma_gt_1", (ExistenceCheck("factor_gram_min_eig", -1.0, False),))
        broken = replace(short_sol, existence_report=report)
        with pytest.raises(ExistenceFail):
            simulate(short_household, market, broken, small_config())

    def test_family_weight_required(self, short_household, market, short_sol):
        """Without a family consumption weight the post-death phase is undefined."""
        hh = replace(short_household, kappa1_w=1.0, kappa2_w=0.0)
        with pytest.raises(ValidationError):
            simulate(hh, market, short_sol, small_config())

    def test_mismatched_solution(self, short_household, market, short_sol):
        """The Gamma solution must match the control theta."""
        with pytest.raises(ValidationError):
            simulate(short_household, market, short_sol, small_config(), control_theta=0.5)


@pytest.mark.slow
class TestSimulateSlow:
    """Large-sample checks."""

    def test_value_matches_candidate(self, short_household, market, short_sol):
        """The Monte Carlo value brackets the closed-form value within 3 standard errors."""
        cfg = SimConfig(n_paths=20_000, dt=1.0 / 12.0, seed=11, block_size=2048, antithetic=True)
        res = simulate(short_household, market, short_sol, cfg)
        exact = value_function("primary", short_household, short_sol, 0.0, res.meta["S0"], 1.0, X0)
        assert abs(res.value - exact) < 3.0 * res.value_se + 1e-3 * abs(exact)

    def test_welfare_curve(self, short_household, market):
        """The optimum loses nothing and money illusion costs a finite amount."""
        cfg = SimConfig(n_paths=4096, dt=0.25, seed=3, block_size=1024)
        df = welfare_curve(short_household, market, cfg, gammas=[10.0], thetas=[0.0, 0.5])
        assert list(df.columns) == ["gamma", "theta", "loss", "stderr"]
        assert df.loc[0, "loss"] == 0.0
        assert np.isfinite(df.loc[1, "loss"])


WELFARE_CONFIG = SimConfig(n_paths=8192, dt=1.0 / 12.0, seed=7)
GAMMA10_THETAS = (0.0, 0.1, 0.2, 0.3, 0.37, 0.4, 0.45, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)


@pytest.fixture(scope="module")
def gamma10_curve(household, market):
    return welfare_curve(household, market, WELFARE_CONFIG, gammas=[10.0], thetas=GAMMA10_THETAS)


@pytest.fixture(scope="module")
def premium_curve(household, market, sol):
    res = simulate(household, market, sol, WELFARE_CONFIG)
    return res, res.curve("premium_I")


def loss_at(df, theta: float) -> float:
    return float(df.loc[np.isclose(df["theta"], theta), "loss"].iloc[0])


@pytest.mark.slow
class TestWelfareCalibrationSlow:
    """Welfare loss and insurance curves at the default calibration, 60-year horizon."""

    def test_loss_monotone_in_theta(self, gamma10_curve):
        """More money illusion never costs less, up to 3 standard errors."""
        df = gamma10_curve.sort_values("theta")
        assert loss_at(df, 0.0) == 0.0
        slack = 3.0 * df["stderr"].max()
        assert np.all(np.diff(df["loss"].to_numpy()) >= -slack)

    def test_gamma10_delivered_losses(self, gamma10_curve):
        """Losses at the default weights and seed stay where they were measured."""
        for theta, expected in [(0.30, 0.261), (0.37, 0.375), (0.45, 0.498), (0.80, 0.841)]:
            assert loss_at(gamma10_curve, theta) == pytest.approx(expected, abs=0.03)

    def test_gamma10_half_loss_crossing(self, gamma10_curve):
        """Half the surplus is lost somewhere between theta = 0.40 and 0.50."""
        df = gamma10_curve.sort_values("theta")
        crossing = float(np.interp(0.5, df["loss"], df["theta"]))
        assert 0.40 <= crossing <= 0.50

    def test_gamma5_half_loss_at_08(self, household, market):
        """gamma = 5 loses about half the surplus at theta = 0.8."""
        df = welfare_curve(household, market, WELFARE_CONFIG, gammas=[5.0], thetas=[0.8])
        assert 0.45 <= loss_at(df, 0.8) <= 0.55

    def test_premium_changes_sign_once(self, premium_curve):
        """Life insurance while young, an annuity close to the horizon."""
        res, curve = premium_curve
        ages = curve["age"].to_numpy()
        mean = curve["mean"].to_numpy()
        assert mean[np.argmin(np.abs(ages - 40.0))] > 0
        assert mean[np.argmin(np.abs(ages - 90.0))] < 0
        significant = np.abs(mean) > 3.0 * curve["stderr"].to_numpy()
        signs = np.sign(mean[significant])
        assert np.count_nonzero(np.diff(signs)) == 1
        assert res.excluded_paths == 0

    def test_premium_extremes(self, premium_curve):
        """Premium extremes at the default calibration stay where they were measured."""
        _, curve = premium_curve
        ages = curve["age"].to_numpy()
        mean = curve["mean"].to_numpy()
        assert mean[np.argmin(np.abs(ages - 40.0))] == pytest.approx(0.174, rel=0.15)
        assert mean.max() == pytest.approx(0.180, rel=0.15)
        assert mean.min() == pytest.approx(-11.04, rel=0.10)
        assert mean.max() < 0.277 and mean.min() > -16.04
