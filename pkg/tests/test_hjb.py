"""Tests for the HJB residual checker."""
import numpy as np
import pytest

from engine.errors import DomainEdge, ValidationError
from engine.hjb import (
    PI_RANGE,
    WEALTH_RANGE,
    HJBState,
    battery_summary,
    foc_check,
    hjb_residual,
    residual_battery,
    sample_states,
)
from engine.strategies import X1_RANGE, X2_RANGE

STATES = {
    "primary": [HJBState(5.0, 150.0, 1.2, (0.02, -0.03)), HJBState(22.0, 400.0, 0.7, (-0.1, 0.12))],
    "2": [HJBState(40.0, 200.0, 1.5, (-0.05, 0.04)), HJBState(55.0, 30.0, 2.5, (0.1, -0.1))],
    "1": [HJBState(20.0, 80.0, 0.9, (0.0, 0.1)), HJBState(50.0, 300.0, 2.0, (0.12, 0.05))],
}


@pytest.fixture(scope="module", params=[0.0, 0.8], ids=["rational", "illusion"])
def case(request, household, solve):
    hh = household.with_theta(request.param)
    return hh, solve(hh)


class TestResidual:
    """Closed-form candidates solve their HJB equations."""

    @pytest.mark.parametrize("phase", ["primary", "2", "1"])
    def test_residual_vanishes(self, phase, case, market):
        """Relative residual below 1e-4 at optimal controls."""
        hh, sol = case
        for state in STATES[phase]:
            r = hjb_residual(phase, hh, market, sol, state)
            assert abs(r.relative) < 1e-4, f"{phase} at {state}: {r.relative:.3e}"
            assert r.scale == max(abs(v) for v in r.terms.values())

    @pytest.mark.parametrize("phase", ["primary", "2", "1"])
    def test_perturbed_consumption_is_suboptimal(self, phase, case, market):
        """Scaling c2 by 1.1 leaves the supremum, so the residual turns negative."""
        hh, sol = case
        for state in STATES[phase]:
            assert hjb_residual(phase, hh, market, sol, state, c2_scale=1.1).residual < 0

    def test_price_terms_vanish_without_illusion(self, household, market, sol):
        """With theta = 0 the value does not depend on the price level."""
        r = hjb_residual("2", household, market, sol, STATES["2"][0])
        assert r.terms["price_drift"] == 0.0
        assert r.terms["wealth_price"] == 0.0

    def test_domain_edges(self, household, market, sol):
        """States on the boundary are rejected."""
        with pytest.raises(DomainEdge):
            hjb_residual("1", household, market, sol, HJBState(household.T - 1e-4, 10.0, 1.0, (0.0, 0.0)))
        with pytest.raises(DomainEdge):
            hjb_residual("2", household, market, sol, HJBState(40.0, 0.0, 1.0, (0.0, 0.0)))
        with pytest.raises(DomainEdge):
            hjb_residual("primary", household, market, sol, HJBState(35.0, 10.0, 1.0, (0.0, 0.0)))
        with pytest.raises(DomainEdge):
            hjb_residual("2", household, market, sol, HJBState(10.0, 10.0, 1.0, (0.0, 0.0)))

    def test_unknown_phase_and_mode(self, household, market, sol):
        """Phase and derivative mode are validated."""
        state = STATES["2"][0]
        with pytest.raises(ValidationError):
            hjb_residual("3", household, market, sol, state)
        with pytest.raises(ValidationError):
            hjb_residual("2", household, market, sol, state, mode="spectral")


class TestFOC:
    """First-order conditions at the closed-form controls."""

    @pytest.mark.parametrize("phase", ["primary", "2", "1"])
    def test_foc_exact(self, phase, case, market):
        """Every first-order condition holds to quadrature accuracy."""
        hh, sol = case
        for state in STATES[phase]:
            report = foc_check(phase, hh, market, sol, state)
            assert report["max"] < 1e-8, report

    def test_report_keys(self, household, market, sol):
        """Alive phases report the insurance condition, the post-death phase does not."""
        assert set(foc_check("2", household, market, sol, STATES["2"][0])) == {"c1", "c2", "insurance", "portfolio", "max"}
        assert set(foc_check("1", household, market, sol, STATES["1"][0])) == {"c2", "portfolio", "max"}


class TestSampling:
    """Interior sampling boxes and batteries."""

    @pytest.mark.parametrize("phase", ["primary", "2", "1"])
    def test_states_inside_box(self, phase, household):
        """Draws respect the phase's time window and the state ranges."""
        states = sample_states(100, phase, household, np.random.default_rng(0))
        t = np.array([s.t for s in states])
        if phase == "primary":
            assert t.max() < household.T_R
        if phase == "2":
            assert t.min() >= household.T_R
        assert t.max() < household.T
        assert all(WEALTH_RANGE[0] <= s.w <= WEALTH_RANGE[1] for s in states)
        assert all(PI_RANGE[0] <= s.pi <= PI_RANGE[1] for s in states)
        assert all(X1_RANGE[0] <= s.X[0] <= X1_RANGE[1] and X2_RANGE[0] <= s.X[1] <= X2_RANGE[1] for s in states)

    def test_seeded_sampling(self, household):
        """The same seed draws the same states."""
        a = sample_states(5, "1", household, np.random.default_rng(3))
        b = sample_states(5, "1", household, np.random.default_rng(3))
        assert a == b

    def test_small_battery(self, household, market, sol):
        """A battery returns one row per state and a summary."""
        df = residual_battery("2", household, market, sol, states=STATES["2"])
        assert list(df.columns) == ["phase", "t", "w", "pi", "x1", "x2", "residual", "scale", "relative"]
        summary = battery_summary(df)
        assert summary["n_states"] == 2
        assert summary["max_abs_relative"] < 1e-4


@pytest.mark.slow
class TestBatterySlow:
    """Full residual batteries."""

    @pytest.mark.parametrize("gamma", [5.0, 10.0])
    @pytest.mark.parametrize("phase", ["primary", "2", "1"])
    def test_full_battery(self, phase, gamma, case, market, solve):
        """200 sampled states per phase stay below 1e-4 and turn negative when perturbed."""
        hh = case[0].with_gamma(gamma)
        sol = solve(hh)
        states = sample_states(200, phase, hh, np.random.default_rng(1))
        ok = residual_battery(phase, hh, market, sol, states=states)
        assert battery_summary(ok)["max_abs_relative"] < 1e-4
        bad = residual_battery(phase, hh, market, sol, states=states, c2_scale=1.1)
        assert battery_summary(bad)["fraction_nonpositive"] == 1.0

    @pytest.mark.parametrize("phase", ["primary", "2", "1"])
    def test_finite_difference_mode(self, phase, household, market, sol):
        """Finite-difference derivatives agree with the closed form to 1e-3 relative residual."""
        for state in STATES[phase]:
            r = hjb_residual(phase, household, market, sol, state, mode="fd")
            assert abs(r.relative) < 1e-3, f"{phase} at {state}: {r.relative:.3e}"
