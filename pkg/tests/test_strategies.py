"""Tests for the closed-form controls, value candidates and welfare loss."""
from dataclasses import replace

import numpy as np
import pytest

from engine.actuarial import hazard, human_capital
from engine.errors import HorizonExhausted, InconsistentSign, NonpositiveSurplus, NonpositiveWealth, ValidationError
from engine.riccati import eval_f1
from engine.strategies import (
    bequest_wealth_ratio,
    cash_weight,
    decompose_beta,
    evaluate_policy,
    policy_phase1,
    policy_phase2,
    policy_phase3,
    policy_surface,
    utility,
    value_function,
    welfare_loss,
)

X0 = np.zeros(2)


class TestDecomposition:
    """Myopic, inflation and intertemporal hedge demands."""

    def test_myopic_demand_at_origin(self, household, market, sol):
        """SMD at X = 0 for gamma = 10 reproduces the published weights."""
        dec = decompose_beta(household, market, sol, 5.0, X0)
        np.testing.assert_allclose(dec.smd, [-0.293846, 0.226313, 0.105499, 0.181331], atol=1e-3)

    def test_inflation_hedge_with_money_illusion(self, household, market, solve):
        """IFHD at theta = 0.4 reproduces the published weights."""
        hh = household.with_theta(0.4)
        dec = decompose_beta(hh, market, solve(hh), 5.0, X0)
        np.testing.assert_allclose(dec.ifhd, [-1.253468, 0.441554, 0.540000, 0.0], atol=1e-3)

    def test_inflation_hedge_linear_in_illusion(self, household, market, sol, solve):
        """IFHD scales with 1 - theta."""
        hh = household.with_theta(0.4)
        base = decompose_beta(household, market, sol, 5.0, X0).ifhd
        illusion = decompose_beta(hh, market, solve(hh), 5.0, X0).ifhd
        np.testing.assert_allclose(illusion, 0.6 * base, atol=1e-12)

    def test_full_illusion_removes_inflation_hedge(self, household, market, solve):
        """With theta = 1 the inflation hedge vanishes."""
        hh = household.with_theta(1.0)
        dec = decompose_beta(hh, market, solve(hh), 5.0, X0)
        np.testing.assert_array_equal(dec.ifhd, np.zeros(4))

    @pytest.mark.parametrize("t, X", [(5.0, (0.0, 0.0)), (20.0, (0.05, -0.1)), (40.0, (-0.1, 0.1))])
    def test_components_sum_to_beta(self, household, market, sol, t, X):
        """SMD + IFHD + ITHD reproduces beta."""
        p = evaluate_policy(household, market, sol, t, 100.0, X)
        d = p.decomposition
        np.testing.assert_allclose(d.smd + d.ifhd + d.ithd, p.beta, atol=1e-12)

    def test_mismatched_solution_rejected(self, household, market, sol):
        """A Gamma solution for another theta is rejected."""
        with pytest.raises(ValidationError):
            decompose_beta(household.with_theta(0.4), market, sol, 5.0, X0)


class TestPolicies:
    """Controls by phase."""

    def test_working_life_controls(self, household, market, sol):
        """Working-life controls are positive and the face value is premium over hazard."""
        p = policy_phase1(household, market, sol, 5.0, household.W0, X0)
        assert p.phase == "primary"
        assert p.c1 > 0 and p.c2 > 0
        assert p.human_capital > 0
        assert p.surplus == pytest.approx(household.W0 + p.human_capital)
        assert p.face_value == pytest.approx(p.premium_I / hazard(household.mortality, 5.0))

    def test_equal_weights_give_equal_consumption(self, household, market, sol):
        """With kappa1_w = kappa2_w, c1 equals c2."""
        p = policy_phase1(household, market, sol, 5.0, household.W0, X0)
        assert p.c1 == pytest.approx(p.c2, rel=1e-14)

    def test_retirement_portfolio_is_surplus_portfolio(self, household, market, sol):
        """Without human capital alpha equals beta."""
        p = policy_phase2(household, market, sol, 35.0, 200.0, X0)
        np.testing.assert_allclose(p.alpha, p.beta, rtol=1e-12)
        assert p.human_capital == 0.0

    def test_surviving_family_consumption(self, household, market, sol):
        """After death c2 is wealth over f1 and no insurance is bought."""
        X = np.array([0.02, -0.03])
        p = policy_phase3(household, market, sol, 20.0, 80.0, X)
        f1 = eval_f1(sol, household.delta, household.gamma, X, 20.0, household.T)
        assert p.c2 == pytest.approx(80.0 / f1, rel=1e-12)
        assert p.c1 is None and p.premium_I is None
        np.testing.assert_array_equal(p.alpha, p.beta)

    def test_dispatch(self, household, market, sol):
        """evaluate_policy picks the phase from the alive flag and t."""
        assert evaluate_policy(household, market, sol, 5.0, 35.0, X0).phase == "primary"
        assert evaluate_policy(household, market, sol, 35.0, 35.0, X0).phase == "2"
        assert evaluate_policy(household, market, sol, 5.0, 35.0, X0, alive=False).phase == "1"

    def test_nonpositive_surplus(self, household, market, sol):
        """Debt beyond human capital is rejected."""
        hc = human_capital(household.income, household.mortality, market.coeffs, 5.0, X0)
        with pytest.raises(NonpositiveSurplus):
            policy_phase1(household, market, sol, 5.0, -hc - 1.0, X0)

    def test_nonpositive_wealth(self, household, market, sol):
        """Retirement and post-death phases need positive wealth."""
        with pytest.raises(NonpositiveWealth):
            policy_phase2(household, market, sol, 35.0, 0.0, X0)
        with pytest.raises(NonpositiveWealth):
            policy_phase3(household, market, sol, 35.0, -1.0, X0)

    def test_horizon_exhausted(self, household, market, sol):
        """Controls are undefined at the horizon."""
        with pytest.raises(HorizonExhausted):
            policy_phase3(household, market, sol, household.T - 1e-7, 10.0, X0)

    def test_wrong_phase_time(self, household, market, sol):
        """Working-life and retirement policies check t against T_R."""
        with pytest.raises(ValidationError):
            policy_phase1(household, market, sol, 35.0, 35.0, X0)
        with pytest.raises(ValidationError):
            policy_phase2(household, market, sol, 5.0, 35.0, X0)

    @pytest.mark.parametrize("factor", [0.5, 3.0])
    def test_scale_invariance(self, household, market, sol, factor):
        """Scaling wealth and income scales flows and leaves weights unchanged."""
        X = np.array([0.03, -0.02])
        base = policy_phase1(household, market, sol, 5.0, household.W0, X)
        hh = household.scaled(factor)
        scaled = policy_phase1(hh, market, sol, 5.0, hh.W0, X)
        assert scaled.c1 == pytest.approx(factor * base.c1, rel=1e-10)
        assert scaled.c2 == pytest.approx(factor * base.c2, rel=1e-10)
        assert scaled.premium_I == pytest.approx(factor * base.premium_I, rel=1e-10)
        np.testing.assert_allclose(scaled.alpha, base.alpha, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(scaled.beta, base.beta, rtol=1e-12)
        assert scaled.bequest_wealth_ratio == pytest.approx(base.bequest_wealth_ratio, rel=1e-12)

    def test_to_dict(self, household, market, sol):
        """Serialized policies carry the decomposition."""
        d = policy_phase2(household, market, sol, 35.0, 100.0, X0).to_dict()
        assert set(d["decomposition"]) == {"SMD", "IFHD", "ITHD"}
        assert len(d["alpha"]) == 4
        assert d["cash_weight"] == pytest.approx(1.0 - sum(d["alpha"]))


class TestBequestRatio:
    """Bequest-wealth ratio."""

    def test_one_without_own_consumption_weight(self, household, market, solve):
        """With kappa1_w = 0 the household wants to bequeath its full surplus."""
        hh = replace(household, kappa1_w=0.0, kappa2_w=1.0)
        sol = solve(hh)
        assert bequest_wealth_ratio(hh, sol, 10.0, X0) == 1.0
        p = policy_phase1(hh, market, sol, 10.0, hh.W0, X0)
        assert p.bequest_wealth_ratio == pytest.approx(1.0, rel=1e-12)

    def test_between_zero_and_one(self, household, sol):
        """Partial own-consumption weight keeps the ratio in (0, 1)."""
        r = bequest_wealth_ratio(household, sol, 10.0, X0)
        assert 0.0 < r < 1.0

    def test_matches_policy(self, household, market, sol):
        """The standalone ratio equals the one reported with the controls."""
        p = policy_phase2(household, market, sol, 40.0, 100.0, X0)
        assert bequest_wealth_ratio(household, sol, 40.0, X0) == pytest.approx(p.bequest_wealth_ratio, rel=1e-12)


class TestValueAndWelfare:
    """Candidate value functions and certainty-equivalent loss."""

    def test_value_negative_for_high_risk_aversion(self, household, sol):
        """With gamma > 1 utility, hence value, is negative."""
        assert value_function("primary", household, sol, 0.0, 100.0, 1.0, X0) < 0
        assert value_function("1", household, sol, 30.0, 50.0, 1.2, X0) < 0

    def test_value_homogeneous_in_wealth(self, household, sol):
        """Value is homogeneous of degree 1 - gamma in wealth."""
        v1 = value_function("2", household, sol, 35.0, 50.0, 1.0, X0)
        v2 = value_function("2", household, sol, 35.0, 100.0, 1.0, X0)
        assert v2 / v1 == pytest.approx(2.0 ** (1.0 - household.gamma), rel=1e-12)

    def test_value_rejects_unknown_phase(self, household, sol):
        """Only the three phases are known."""
        with pytest.raises(ValidationError):
            value_function("3", household, sol, 0.0, 1.0, 1.0, X0)

    def test_zero_loss_at_optimum(self, household, market, sol):
        """The optimal value has zero welfare loss."""
        w_y = household.W0 + human_capital(household.income, household.mortality, market.coeffs, 0.0, X0)
        v = value_function("primary", household, sol, 0.0, w_y, 1.0, X0)
        assert welfare_loss(household, market, sol, v) == pytest.approx(0.0, abs=1e-10)

    def test_lower_value_means_positive_loss(self, household, market, sol):
        """A strictly worse value costs a positive share of surplus."""
        w_y = household.W0 + human_capital(household.income, household.mortality, market.coeffs, 0.0, X0)
        v = value_function("primary", household, sol, 0.0, 0.9 * w_y, 1.0, X0)
        assert welfare_loss(household, market, sol, v) == pytest.approx(0.1, rel=1e-9)

    def test_inconsistent_sign(self, household, market, sol):
        """A positive value with gamma > 1 is inconsistent."""
        with pytest.raises(InconsistentSign):
            welfare_loss(household, market, sol, 1.0)

    def test_needs_rational_solution(self, household, market, solve):
        """The loss is measured against the theta = 0 solution."""
        hh = household.with_theta(0.4)
        with pytest.raises(ValidationError):
            welfare_loss(hh, market, solve(hh), -1.0)


class TestHelpers:
    """Utility, cash weight and surfaces."""

    def test_utility(self):
        """CRRA utility of a real/nominal mix."""
        assert utility(2.0, 1.0, 2.0, 0.0) == pytest.approx(-0.5)
        assert utility(2.0, 4.0, 2.0, 0.5) == pytest.approx(-0.25)

    def test_cash_weight(self):
        """Cash holds the residual of the risky weights."""
        assert cash_weight([0.25, 0.25, 0.25, 0.25]) == pytest.approx(0.0)
        assert cash_weight([0.5, -0.2, 0.1, 0.3]) == pytest.approx(0.3)

    def test_policy_surface(self, household, market, sol):
        """One row per grid point with alpha and beta columns."""
        df = policy_surface(household, market, sol, 35.0, 100.0, x1_grid=[0.0, 0.05], x2_grid=[-0.05, 0.0, 0.05])
        assert len(df) == 6
        assert {"x1", "x2", "c1", "c2", "premium_I", "alpha_1", "beta_4"} <= set(df.columns)
        np.testing.assert_allclose(df["alpha_1"], df["beta_1"], rtol=1e-12)
