"""Unit tests for the two-step recursive estimator."""

import math

import numpy as np
import pytest

from app.domain.censoring import ThresholdSchedule, Thresholds
from app.domain.kernel import observe, regression_g, saturate
from app.domain.states import EstimatorConfig, Step1State, Step2State, initial_states
from app.errors import ConfigError, DegradedGainWarning, MatrixConditioningError, StepError
from app.usecases.estimator import (
    TwoStepEstimator,
    compute_step1_gains,
    compute_step2_gains,
    information_update,
    run_stream,
    step1_update_with_gains,
    step2_update,
    two_step_update,
)
from tests.conftest import BINARY, SATURATION_0_15, UNCENSORED

BAND = Thresholds(-0.5, 1.0, -0.5, 1.0)
TRUE_THETA = np.array([0.5, -0.3, 0.2])


def _censored_stream(rng, n, theta, th=BAND, schedule=None):
    """(phi, observation, thresholds) items with i.i.d. regressors on [-1, 1]^m."""
    items = []
    for k in range(n):
        step_th = schedule.at(k) if schedule is not None else th
        phi = rng.uniform(-1.0, 1.0, theta.shape[0])
        y = saturate(phi @ theta + rng.normal(), step_th)
        items.append((phi, observe(y, step_th), step_th))
    return items


def _band_config(m, **kwargs):
    return EstimatorConfig.create(m, D=1.0, M=math.sqrt(m), sigma=1.0, P0_scale=10.0, **kwargs)


@pytest.mark.unit
class TestEstimatorConfig:
    """Test cases for EstimatorConfig."""

    def test_defaults_and_derived_quantities(self):
        """Test the ball radius, search interval and initial states."""
        cfg = EstimatorConfig.create(3, D=2.0, M=5.0, sigma=1.0)
        assert cfg.m == 3
        assert cfg.radius == 4.0
        assert cfg.xmax == 20.0
        s1, s2 = initial_states(cfg)
        np.testing.assert_array_equal(s1.P_bar, 100.0 * np.eye(3))
        np.testing.assert_array_equal(s2.theta_hat, np.zeros(3))

    def test_gain_search_radius_overrides_xmax(self):
        """Test an explicit search radius replaces 2DM."""
        assert EstimatorConfig.create(2, D=2.0, M=5.0, sigma=1.0, gain_search_radius=3.0).xmax == 3.0

    @pytest.mark.parametrize("field,value", [("D", 0.0), ("M", -1.0), ("sigma", math.inf), ("P0_scale", 0.0)])
    def test_invalid_values_are_rejected(self, field, value):
        """Test non-positive or non-finite settings raise ConfigError."""
        kwargs = {"D": 1.0, "M": 1.0, "sigma": 1.0, "P0_scale": 1.0, field: value}
        with pytest.raises(ConfigError):
            EstimatorConfig.create(2, **kwargs)

    def test_initial_estimate_outside_ball_is_rejected(self):
        """Test ||theta0|| > 2D raises ConfigError."""
        with pytest.raises(ConfigError):
            EstimatorConfig.create(2, D=1.0, M=1.0, sigma=1.0, theta0=np.array([3.0, 0.0]))

    def test_batched_initial_states(self):
        """Test initial states replicate theta0 and P0 over the batch."""
        cfg = EstimatorConfig.create(2, D=1.0, M=1.0, sigma=1.0, theta0=np.array([0.5, 0.0]))
        s1, s2 = initial_states(cfg, (3,))
        assert s1.theta_bar.shape == (3, 2)
        assert s2.P.shape == (3, 2, 2)
        np.testing.assert_array_equal(s1.theta_bar[2], [0.5, 0.0])


@pytest.mark.unit
class TestSingleStep:
    """Test cases for the Step-1 and Step-2 updates."""

    def test_zero_regressor_leaves_state_unchanged(self):
        """Test phi = 0 is a no-op for both recursions."""
        cfg = _band_config(2)
        s1, s2 = initial_states(cfg)
        s1 = Step1State(np.array([0.3, -0.1]), s1.P_bar)
        phi = np.zeros(2)
        new_s1, new_s2 = two_step_update(s1, s2, phi, observe(0.2, BAND), BAND, cfg)
        np.testing.assert_array_equal(new_s1.theta_bar, s1.theta_bar)
        np.testing.assert_array_equal(new_s1.P_bar, s1.P_bar)
        np.testing.assert_array_equal(new_s2.theta_hat, s2.theta_hat)
        np.testing.assert_array_equal(new_s2.P, s2.P)

    def test_step1_gain_formulas(self):
        """Test beta_bar = min(g_lo, 1/(2 g_hi q + 1)) and a_bar = 1/(1 + beta_bar^2 q)."""
        cfg = _band_config(2)
        s1, _ = initial_states(cfg)
        phi = np.array([0.4, -0.7])
        gains = compute_step1_gains(s1, phi, BAND, cfg)
        q = phi @ s1.P_bar @ phi
        assert gains.quad == pytest.approx(q)
        assert gains.beta_bar == pytest.approx(min(gains.g_lo, 1.0 / (2.0 * gains.g_hi * q + 1.0)))
        assert gains.a_bar == pytest.approx(1.0 / (1.0 + gains.beta_bar**2 * q))
        assert 0 < gains.g_lo <= gains.g_hi

    def test_step2_uses_derivative_when_estimates_coincide(self):
        """Test beta falls back to mu_hat when theta_bar^T phi equals theta_hat^T phi."""
        cfg = _band_config(2)
        _, s2 = initial_states(cfg)
        gains = compute_step2_gains(s2, np.zeros(2), np.array([1.0, 0.5]), observe(0.3, BAND), BAND, cfg)
        assert gains.beta == gains.mu_hat
        assert gains.a == pytest.approx(1.0 / (gains.mu_hat + gains.mu_hat**2 * gains.quad))

    def test_step2_difference_quotient(self, unit_noise):
        """Test beta is the slope of G(y_bar, .) between the two linear responses."""
        cfg = _band_config(2)
        s2 = Step2State(np.array([0.2, 0.0]), 10.0 * np.eye(2))
        theta_bar = np.array([-0.4, 0.1])
        phi = np.array([1.0, 1.0])
        gains = compute_step2_gains(s2, theta_bar, phi, observe(0.3, BAND), BAND, cfg)
        y_bar, x_hat = theta_bar @ phi, s2.theta_hat @ phi
        expected = (regression_g(y_bar, y_bar, BAND, unit_noise) - regression_g(y_bar, x_hat, BAND, unit_noise)) / (
            y_bar - x_hat
        )
        assert gains.beta == pytest.approx(expected, rel=1e-12)

    def test_zero_information_step_is_skipped(self):
        """Test a = 0 and an unchanged state when mu_hat + beta^2 q vanishes."""
        cfg = EstimatorConfig.create(2, D=25.0, M=1.0, sigma=1.0)
        s2 = Step2State(np.array([41.0, 0.0]), np.eye(2))
        theta_bar = np.array([40.0, 0.0])
        phi = np.array([1.0, 0.0])
        obs = observe(1.0, BINARY)
        gains = compute_step2_gains(s2, theta_bar, phi, obs, BINARY, cfg)
        assert gains.a == 0.0
        new_s2 = step2_update(s2, theta_bar, phi, obs, BINARY, cfg)
        np.testing.assert_array_equal(new_s2.theta_hat, s2.theta_hat)
        np.testing.assert_array_equal(new_s2.P, s2.P)

    def test_inverse_gain_identities(self, rng):
        """Test both gain inverses grow by exactly the rank-one information increments."""
        m = 4
        cfg = _band_config(m)
        s1, s2 = initial_states(cfg)
        inv_bar = np.eye(m) / cfg.P0_scale
        inv_hat = np.eye(m) / cfg.P0_scale
        for phi, obs, th in _censored_stream(rng, 200, np.array([0.4, -0.2, 0.1, 0.3])):
            gains2 = compute_step2_gains(s2, s1.theta_bar, phi, obs, th, cfg)
            s2 = step2_update(s2, s1.theta_bar, phi, obs, th, cfg)
            s1, gains1 = step1_update_with_gains(s1, phi, obs, th, cfg)
            inv_bar += gains1.beta_bar**2 * np.outer(phi, phi)
            inv_hat += gains2.info_weight * np.outer(phi, phi)
        np.testing.assert_allclose(np.linalg.inv(s1.P_bar), inv_bar, rtol=1e-7, atol=1e-9)
        np.testing.assert_allclose(np.linalg.inv(s2.P), inv_hat, rtol=1e-7, atol=1e-9)

    def test_information_weight_is_capped_at_uncensored_level(self):
        """Test a saturated x_hat with a steep quotient carries at most 1/sigma^2 of information."""
        cfg = EstimatorConfig.create(2, D=20.0, M=1.0, sigma=2.0)
        s2 = Step2State(np.array([30.0, 0.0]), np.eye(2))
        theta_bar = np.array([0.2, 0.0])
        phi = np.array([1.0, 0.0])
        obs = observe(1.0, BAND)
        gains = compute_step2_gains(s2, theta_bar, phi, obs, BAND, cfg)
        assert gains.mu_hat < 1e-12
        assert abs(gains.beta) > 1e-3
        assert gains.info_weight == pytest.approx(0.25, rel=1e-12)
        new_s2 = step2_update(s2, theta_bar, phi, obs, BAND, cfg)
        assert np.all(np.isfinite(new_s2.P))
        assert np.min(np.linalg.eigvalsh(new_s2.P)) > 0
        np.testing.assert_allclose(np.linalg.inv(new_s2.P), np.eye(2) + 0.25 * np.outer(phi, phi), rtol=1e-12)

    def test_information_weight_never_exceeds_uncensored(self, rng):
        """Test 0 <= w <= 1/sigma^2 over random pairs of estimates, including deep saturation."""
        cfg = EstimatorConfig.create(3, D=20.0, M=1.0, sigma=1.0)
        for _ in range(300):
            s2 = Step2State(rng.uniform(-20.0, 20.0, 3), np.eye(3))
            theta_bar = rng.uniform(-20.0, 20.0, 3)
            phi = rng.uniform(-1.0, 1.0, 3)
            obs = observe(saturate(rng.normal(), BAND), BAND)
            gains = compute_step2_gains(s2, theta_bar, phi, obs, BAND, cfg)
            assert 0.0 <= gains.info_weight <= 1.0 + 1e-12
            assert gains.a >= 0.0

    def test_degraded_step1_gain_warns(self):
        """Test an underflowing slope bound emits DegradedGainWarning and freezes theta_bar."""
        cfg = EstimatorConfig.create(10, D=2.0, M=15.0 * math.sqrt(10.0), sigma=1.0)
        est = TwoStepEstimator(cfg)
        phi = np.full(10, 3.0)
        with pytest.warns(DegradedGainWarning):
            est.update(phi, observe(7.0, SATURATION_0_15), SATURATION_0_15)
        assert est.degraded_steps == 1
        np.testing.assert_array_equal(est.s1.theta_bar, np.zeros(10))
        assert np.any(est.s2.theta_hat != 0)


@pytest.mark.unit
class TestInformationUpdate:
    """Test cases for information_update."""

    def test_inverse_grows_by_weighted_outer_product(self, rng):
        """Test inv(P+) = inv(P) + w phi phi^T for a random SPD gain."""
        A = rng.normal(size=(4, 4))
        P = A @ A.T + 0.5 * np.eye(4)
        phi = rng.normal(size=4)
        P_new = information_update(P, phi, np.asarray(0.7))
        expected = np.linalg.inv(P) + 0.7 * np.outer(phi, phi)
        np.testing.assert_allclose(np.linalg.inv(P_new), expected, rtol=1e-9, atol=1e-12)
        np.testing.assert_array_equal(P_new, P_new.T)

    def test_zero_weight_is_identity(self, rng):
        """Test w = 0 leaves a symmetric gain unchanged."""
        P = np.diag([2.0, 3.0, 5.0])
        np.testing.assert_array_equal(information_update(P, rng.normal(size=3), np.asarray(0.0)), P)

    def test_large_weight_keeps_positive_definite(self):
        """Test a weight that shrinks the gain along phi by ~10^13 keeps it positive definite."""
        P = 1e4 * np.eye(3)
        phi = np.array([30.0, -30.0, 25.0])
        weight = 1e6
        P_new = information_update(P, phi, np.asarray(weight))
        eig = np.linalg.eigvalsh(P_new)
        q = phi @ P @ phi
        assert eig[0] > 0
        assert eig[0] == pytest.approx(1e4 / (1.0 + weight * q), rel=0.1)
        np.testing.assert_allclose(eig[1:], 1e4, rtol=1e-12)

    def test_batched_weights(self, rng):
        """Test a leading batch axis with one weight per column matches separate updates."""
        P = np.stack([np.eye(2), 3.0 * np.eye(2)])
        phi = np.array([0.6, -1.2])
        weights = np.array([0.4, 2.0])
        batched = information_update(P, phi, weights)
        for j in range(2):
            np.testing.assert_allclose(batched[j], information_update(P[j], phi, weights[j]), rtol=1e-14)


@pytest.mark.unit
class TestTwoStepEstimator:
    """Test cases for TwoStepEstimator and run_stream."""

    def test_uncensored_reduces_to_recursive_least_squares(self, rng):
        """Test theta_hat and P follow textbook RLS without censoring."""
        m = 3
        cfg = EstimatorConfig.create(m, D=100.0, M=math.sqrt(m), sigma=1.0, P0_scale=100.0)
        est = TwoStepEstimator(cfg)
        theta_rls = np.zeros(m)
        P_rls = 100.0 * np.eye(m)
        for _ in range(1000):
            phi = rng.uniform(-1.0, 1.0, m)
            y = phi @ TRUE_THETA + rng.normal()
            est.update(phi, observe(y, UNCENSORED), UNCENSORED)
            Pphi = P_rls @ phi
            gain = Pphi / (1.0 + phi @ Pphi)
            theta_rls = theta_rls + gain * (y - phi @ theta_rls)
            P_rls = P_rls - np.outer(gain, Pphi)
        np.testing.assert_allclose(est.s2.theta_hat, theta_rls, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(est.s2.P, P_rls, rtol=1e-8, atol=1e-12)

    def test_estimates_stay_in_ball_and_gains_stay_spd(self, rng):
        """Test ||theta|| <= 2D and symmetric positive definite gains under a cyclic schedule."""
        schedule = ThresholdSchedule([BAND, Thresholds(-1.0, 0.5, -1.0, 0.5)])
        cfg = _band_config(3)
        theta = np.array([0.9, -0.3, 0.2])
        trajectory = run_stream(cfg, _censored_stream(rng, 300, theta, schedule=schedule))
        assert [s.k for s in trajectory] == list(range(301))
        for snap in trajectory:
            assert np.linalg.norm(snap.theta_bar) <= cfg.radius * (1 + 1e-12)
            assert np.linalg.norm(snap.theta_hat) <= cfg.radius * (1 + 1e-12)
            for P in (snap.P, snap.P_bar):
                np.testing.assert_array_equal(P, P.T)
                assert np.min(np.linalg.eigvalsh(P)) > 0

    def test_empty_stream_returns_initial_state(self):
        """Test folding over nothing yields only the k = 0 snapshot."""
        cfg = _band_config(2)
        trajectory = run_stream(cfg, [])
        assert len(trajectory) == 1
        assert trajectory[0].k == 0
        np.testing.assert_array_equal(trajectory[0].theta_hat, cfg.theta0)

    def test_identical_streams_give_identical_results(self):
        """Test the fold is bitwise deterministic."""
        cfg = _band_config(3)
        first = run_stream(cfg, _censored_stream(np.random.default_rng(9), 150, TRUE_THETA))
        second = run_stream(cfg, _censored_stream(np.random.default_rng(9), 150, TRUE_THETA))
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a.theta_hat, b.theta_hat)
            np.testing.assert_array_equal(a.P_bar, b.P_bar)

    def test_requested_snapshots_only(self, rng):
        """Test snapshot_at keeps just the requested update counts."""
        trajectory = run_stream(_band_config(3), _censored_stream(rng, 20, TRUE_THETA), snapshot_at=[0, 5, 20])
        assert [s.k for s in trajectory] == [0, 5, 20]

    def test_resume_from_snapshot_matches_uninterrupted_run(self):
        """Test restarting from the state at k = 60 reproduces the full run."""
        cfg = _band_config(3)
        items = _censored_stream(np.random.default_rng(4), 120, TRUE_THETA)
        full = run_stream(cfg, items, snapshot_at=[60, 120])
        middle = full[0]
        resumed = run_stream(
            cfg, items[60:], snapshot_at=[120], states=(middle.step1, middle.step2), start_k=60
        )
        assert resumed[0].k == 120
        np.testing.assert_array_equal(resumed[0].theta_hat, full[1].theta_hat)
        np.testing.assert_array_equal(resumed[0].theta_bar, full[1].theta_bar)

    def test_update_matches_functional_form(self, rng):
        """Test the stateful update feeds Step 2 the pre-update theta_bar."""
        cfg = _band_config(3)
        est = TwoStepEstimator(cfg)
        s1, s2 = initial_states(cfg)
        for phi, obs, th in _censored_stream(rng, 30, TRUE_THETA):
            est.update(phi, obs, th)
            s1, s2 = two_step_update(s1, s2, phi, obs, th, cfg)
        np.testing.assert_array_equal(est.s1.theta_bar, s1.theta_bar)
        np.testing.assert_array_equal(est.s2.theta_hat, s2.theta_hat)

    def test_batched_columns_match_separate_runs(self, rng):
        """Test p output columns sharing phi equal p independent scalar runs."""
        cfg = _band_config(2)
        thetas = np.array([[0.5, -0.2, 0.1], [0.3, 0.6, -0.4]])
        phis = rng.uniform(-1.0, 1.0, (80, 2))
        ys = saturate(phis @ thetas + rng.normal(size=(80, 3)), BAND)
        batched = TwoStepEstimator(cfg, batch_shape=(3,))
        for phi, y in zip(phis, ys):
            batched.update(phi, observe(y, BAND), BAND)
        for j in range(3):
            single = TwoStepEstimator(cfg)
            for phi, y in zip(phis, ys[:, j]):
                single.update(phi, observe(y, BAND), BAND)
            np.testing.assert_allclose(batched.s2.theta_hat[j], single.s2.theta_hat, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(batched.s1.P_bar[j], single.s1.P_bar, rtol=1e-9, atol=1e-12)

    def test_step1_only_mode_leaves_step2_at_start(self, rng):
        """Test with_step2=False freezes the Step-2 state."""
        cfg = _band_config(3)
        trajectory = run_stream(cfg, _censored_stream(rng, 40, TRUE_THETA), snapshot_at=[40], with_step2=False)
        np.testing.assert_array_equal(trajectory[0].theta_hat, cfg.theta0)
        assert np.any(trajectory[0].theta_bar != cfg.theta0)

    def test_numeric_failure_carries_step_index(self, mocker):
        """Test a failing update is reported as StepError at the current step."""
        mocker.patch(
            "app.usecases.estimator.project_with_gain",
            side_effect=MatrixConditioningError("gain matrix is not positive definite"),
        )
        est = TwoStepEstimator(_band_config(2), start_k=7)
        with pytest.raises(StepError) as excinfo:
            est.update(np.array([1.0, 0.0]), observe(0.2, BAND), BAND)
        assert excinfo.value.step == 7
        assert isinstance(excinfo.value.cause, MatrixConditioningError)

    def test_failed_update_keeps_previous_state(self, mocker, rng):
        """Test a Step-1 failure after Step 2 succeeded leaves both recursions and k untouched."""
        est = TwoStepEstimator(_band_config(3))
        for phi, obs, th in _censored_stream(rng, 10, TRUE_THETA):
            est.update(phi, obs, th)
        s1, s2 = est.s1, est.s2
        mocker.patch(
            "app.usecases.estimator.step1_update_with_gains",
            side_effect=MatrixConditioningError("gain matrix is not positive definite"),
        )
        with pytest.raises(StepError):
            est.update(np.array([0.5, -0.5, 1.0]), observe(0.2, BAND), BAND)
        assert est.s1 is s1
        assert est.s2 is s2
        assert est.k == 10
        assert est.degraded_steps == 0
