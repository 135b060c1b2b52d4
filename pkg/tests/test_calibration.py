"""Tests for the state-space model, Kalman filter and maximum likelihood."""
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest
from scipy.linalg import expm

from engine.calibration import (
    DEFAULT_CHI,
    YIELD_COLUMNS,
    CalibrationConfig,
    ObservationPanel,
    build_state_space,
    discretize,
    filter_states,
    fit_mle,
    free_vector_from_params,
    full_loglik,
    kalman_loglik,
    params_from_free_vector,
    read_panel,
    simulate_panel,
    write_panel,
)
from engine.errors import ValidationError
from engine.market import check_consistency, factor_covariance, stationary_covariance

CHI = np.full(len(YIELD_COLUMNS), DEFAULT_CHI)


@pytest.fixture(scope="module")
def synthetic(params):
    """Twenty years of monthly data from the preset."""
    return simulate_panel(params, n_months=240, seed=1, chi=CHI)


class TestFreeVector:
    """Mapping between parameters and the optimizer vector."""

    def test_round_trip(self, params):
        """free -> params -> free is the identity."""
        x = free_vector_from_params(params)
        assert x.shape == (21,)
        np.testing.assert_array_equal(free_vector_from_params(params_from_free_vector(x)), x)

    def test_identities_hold_exactly(self, params):
        """Solved prices of risk satisfy the drift identities to rounding."""
        rebuilt = params_from_free_vector(free_vector_from_params(params))
        assert max(check_consistency(rebuilt).values()) < 1e-12

    def test_solved_prices_of_risk_near_preset(self, params):
        """The solved equity loadings differ from the published ones only by rounding."""
        rebuilt = params_from_free_vector(free_vector_from_params(params))
        np.testing.assert_allclose(rebuilt.Lambda1, params.Lambda1, rtol=1e-3, atol=1e-3)


class TestStateSpace:
    """Exact discretization and measurement equation."""

    def test_factor_block_of_transition(self, params):
        """The factor block of Psi1 is exp(-K dt)."""
        dt = 1.0 / 12.0
        _, psi1, _ = discretize(params, dt)
        np.testing.assert_allclose(psi1[:2, :2], expm(-params.K_X * dt), rtol=1e-12)
        np.testing.assert_allclose(psi1[:2, 2:], np.zeros((2, 2)), atol=1e-15)

    def test_factor_block_of_noise(self, params):
        """The factor block of Sigma_eps is the OU covariance over dt."""
        dt = 1.0 / 12.0
        _, _, sigma_eps = discretize(params, dt)
        np.testing.assert_allclose(sigma_eps[:2, :2], factor_covariance(params, dt), rtol=1e-8)
        np.testing.assert_array_equal(sigma_eps, sigma_eps.T)
        assert np.min(np.linalg.eigvalsh(sigma_eps)) > -1e-15

    def test_measurement_shapes(self, params):
        """Eight yields plus log CPI and log equity."""
        model = build_state_space(params, chi=CHI)
        assert model.Psi2.shape == (10, 4)
        np.testing.assert_allclose(np.diag(model.Sigma_eta)[:8], CHI ** 2)
        assert model.Psi2[8, 2] == 1.0 and model.Psi2[9, 3] == 1.0

    def test_chi_length_checked(self, params):
        """One error s.d. per yield."""
        with pytest.raises(ValidationError):
            build_state_space(params, chi=np.full(3, 1e-3))


class TestPanel:
    """Synthetic panels and their CSV form."""

    def test_synthetic_shapes(self, synthetic):
        """One row per month and one state vector per row."""
        panel, states = synthetic
        assert len(panel) == 240
        assert states.shape == (240, 4)
        assert panel.dates[0] == "1961-01"

    def test_round_trip(self, synthetic, tmp_output_dir):
        """write_panel / read_panel preserve every float."""
        panel, _ = synthetic
        path = write_panel(tmp_output_dir / "panel.csv", panel)
        again = read_panel(path)
        assert again.dates == panel.dates
        np.testing.assert_array_equal(again.yields, panel.yields)
        np.testing.assert_array_equal(again.log_equity, panel.log_equity)

    def test_missing_column(self, synthetic, tmp_output_dir):
        """Panels without the equity column are rejected."""
        panel, _ = synthetic
        path = tmp_output_dir / "short.csv"
        panel.to_frame().drop(columns=["log_equity"]).to_csv(path, index=False)
        with pytest.raises(ValidationError, match="log_equity"):
            read_panel(path)

    def test_missing_file(self, tmp_output_dir):
        """Absent panel files raise FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            read_panel(tmp_output_dir / "absent.csv")

    def test_shape_validation(self):
        """Yield matrices need one column per maturity."""
        with pytest.raises(ValidationError):
            ObservationPanel(dates=("2000-01",), yields=np.zeros((1, 3)), log_cpi=np.zeros(1), log_equity=np.zeros(1))


class TestKalman:
    """Prediction-error likelihood and filtered states."""

    def test_loglik_finite_with_missing_entries(self, params, synthetic):
        """NaN entries are skipped row by row."""
        panel, _ = synthetic
        yields = panel.yields.copy()
        yields[10, :3] = np.nan
        yields[50, :] = np.nan
        gappy = replace(panel, yields=yields)
        model = build_state_space(params, chi=CHI)
        assert np.isfinite(kalman_loglik(model, gappy))

    def test_true_parameters_beat_perturbed(self, params, synthetic):
        """The generating parameters fit better than a misspecified mean reversion."""
        panel, _ = synthetic
        true = kalman_loglik(build_state_space(params, chi=CHI), panel)
        wrong = kalman_loglik(build_state_space(replace(params, kappa1=2.0 * params.kappa1), chi=CHI), panel)
        assert true > wrong

    def test_full_loglik_matches_model_loglik(self, params, synthetic):
        """The optimizer objective is the filter likelihood at the rebuilt parameters."""
        panel, _ = synthetic
        x = np.concatenate([free_vector_from_params(params), CHI])
        rebuilt = params_from_free_vector(free_vector_from_params(params))
        direct = kalman_loglik(build_state_space(rebuilt, chi=CHI), panel)
        assert full_loglik(x, panel.observations) == pytest.approx(direct, rel=1e-12)

    def test_filter_tracks_factors(self, params, synthetic):
        """Filtered factors stay within a quarter stationary s.d. of the truth."""
        panel, states = synthetic
        df = filter_states(build_state_space(params, chi=CHI), panel)
        assert list(df.columns) == ["date", "x1", "x2", "r", "pi_e", "R"]
        sd = np.sqrt(np.diag(stationary_covariance(params)))
        burn = 12
        for j, name in enumerate(("x1", "x2")):
            rmse = np.sqrt(np.mean((df[name].to_numpy()[burn:] - states[burn:, j]) ** 2))
            assert rmse < 0.25 * sd[j], f"{name} RMSE {rmse:.4g}"
        np.testing.assert_allclose(df["r"], params.delta_r + df["x1"])


class TestCalibrationConfig:
    """Fit settings."""

    def test_invalid_restarts(self):
        """At least one start."""
        with pytest.raises(ValidationError):
            CalibrationConfig(restarts=0)

    def test_negative_jitter(self):
        """Perturbations need a nonnegative scale."""
        with pytest.raises(ValidationError):
            CalibrationConfig(jitter=-0.1)


@pytest.mark.slow
class TestFitSlow:
    """Maximum likelihood on synthetic data."""

    def test_fit_improves_on_start(self, params, synthetic):
        """Starting at the truth, the optimizer never ends below the starting likelihood."""
        panel, _ = synthetic
        cfg = CalibrationConfig(restarts=1, max_iter=50)
        result = fit_mle(panel, params, CHI, cfg)
        start = full_loglik(np.concatenate([free_vector_from_params(params), CHI]), panel.observations)
        assert result.loglik >= start - 1e-6
        assert isinstance(result.restarts, pd.DataFrame) and len(result.restarts) == 1
        assert set(result.to_dict()) >= {"params", "chi", "loglik", "stderrs", "converged"}


def factor_rmse(params, chi, panel, states) -> float:
    filtered = filter_states(build_state_space(params, chi=chi), panel)
    err = filtered[["x1", "x2"]].to_numpy() - states[:, :2]
    return float(np.sqrt(np.mean(err ** 2)))


@pytest.mark.slow
class TestRecoverySlow:
    """Maximum likelihood on a 750-month synthetic panel."""

    @pytest.fixture(scope="class")
    def recovered(self, params):
        panel, states = simulate_panel(params, n_months=750, seed=5, chi=CHI)
        result = fit_mle(panel, params, CHI, CalibrationConfig(restarts=3, max_iter=500, seed=2))
        return panel, states, result

    @pytest.mark.parametrize("name", ["kappa1", "kappa2", "delta_R"])
    def test_parameter_recovered(self, params, recovered, name):
        """Mean reversion speeds and the nominal rate level land within max(2 s.e., 10%)."""
        _, _, result = recovered
        truth = getattr(params, name)
        se = result.stderrs[name]
        tol = max(2.0 * se if np.isfinite(se) else 0.0, 0.1 * abs(truth))
        assert abs(getattr(result.params, name) - truth) <= tol

    def test_filtered_factors_close_to_oracle(self, params, recovered):
        """Filtering with the fitted parameters tracks the factors nearly as well as the truth does."""
        panel, states, result = recovered
        oracle = factor_rmse(params, CHI, panel, states)
        fitted = factor_rmse(result.params, result.chi, panel, states)
        assert fitted < 1.5 * oracle
