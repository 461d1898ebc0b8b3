"""Unit tests for the censored observation value types."""

import math

import numpy as np
import pytest

from app.domain.censoring import CensoredObservation, NoiseModel, ThresholdSchedule, Thresholds
from app.domain.trajectory import SignalTrajectory
from app.errors import ConfigError

INF = math.inf


@pytest.mark.unit
class TestThresholds:
    """Test cases for Thresholds."""

    def test_valid_geometries(self):
        """Test two-sided, one-sided, binary and uncensored geometries are accepted."""
        assert Thresholds(0.0, 15.0, 0.0, 15.0).has_lower
        assert not Thresholds(-INF, 2.0, -INF, 2.0).has_lower
        assert not Thresholds(-1.0, INF, -1.0, INF).has_upper
        binary = Thresholds(0.0, 0.0, 0.0, 1.0)
        assert binary.as_tuple() == (0.0, 0.0, 0.0, 1.0)

    def test_reversed_levels_cite_the_level_rule(self):
        """Test L > U is rejected with a message naming L < U."""
        with pytest.raises(ConfigError, match="L < U"):
            Thresholds(0.0, 1.0, 2.0, -1.0)

    @pytest.mark.parametrize(
        "values",
        [
            (1.0, 0.0, 0.0, 2.0),  # l > u
            (-1.0, 1.0, 0.0, 2.0),  # L > l
            (0.0, 3.0, 0.0, 2.0),  # u > U
            (math.nan, 1.0, 0.0, 2.0),
            (-INF, 1.0, 0.0, 1.0),  # infinite l with finite L
        ],
    )
    def test_invalid_geometries(self, values):
        """Test ordering violations and mismatched infinities raise ConfigError."""
        with pytest.raises(ConfigError):
            Thresholds(*values)

    def test_equal_levels_are_rejected(self):
        """Test L == U leaves nothing to observe."""
        with pytest.raises(ConfigError):
            Thresholds(0.0, 0.0, 0.0, 0.0)


@pytest.mark.unit
class TestThresholdSchedule:
    """Test cases for ThresholdSchedule."""

    def test_constant_schedule(self):
        """Test a single entry applies at every step."""
        schedule = ThresholdSchedule.constant(0.0, 1.0, 0.0, 1.0)
        assert schedule.is_constant
        assert schedule.at(12345) == Thresholds(0.0, 1.0, 0.0, 1.0)

    def test_cyclic_schedule(self):
        """Test entries repeat with the schedule period."""
        first, second = Thresholds(0.0, 1.0, 0.0, 1.0), Thresholds(-1.0, 2.0, -3.0, 4.0)
        schedule = ThresholdSchedule([first, second])
        assert schedule.period == 2
        assert [schedule.at(k) for k in range(4)] == [first, second, first, second]
        assert schedule.level_bound() == 4.0

    def test_unbounded_levels(self):
        """Test an uncensored side makes the level bound infinite."""
        assert ThresholdSchedule.constant(-INF, 1.0, -INF, 1.0).level_bound() == INF

    def test_empty_schedule_is_rejected(self):
        """Test a schedule needs an entry."""
        with pytest.raises(ConfigError):
            ThresholdSchedule([])


@pytest.mark.unit
class TestNoiseModel:
    """Test cases for NoiseModel."""

    @pytest.mark.parametrize("sigma", [0.0, -1.0, math.inf, math.nan])
    def test_invalid_sigma(self, sigma):
        """Test sigma must be positive and finite."""
        with pytest.raises(ConfigError):
            NoiseModel(sigma)

    def test_scaled_density(self):
        """Test pdf and cdf scale with sigma."""
        noise = NoiseModel(2.0)
        assert noise.pdf(0.0) == pytest.approx(1.0 / (2.0 * math.sqrt(2.0 * math.pi)))
        assert noise.cdf(2.0) == pytest.approx(0.8413447460685429)
        assert noise.sf(2.0) == pytest.approx(1.0 - 0.8413447460685429)

    def test_mills_ratios_in_the_tails(self):
        """Test the Mills ratios stay finite and approach |a| / sigma^2 deep in the tail."""
        noise = NoiseModel(0.5)
        assert noise.lower_mills(-40.0) == pytest.approx(160.0, rel=1e-3)
        assert noise.upper_mills(40.0) == pytest.approx(160.0, rel=1e-3)
        assert noise.lower_mills(40.0) == pytest.approx(0.0, abs=1e-300)

    def test_sampling_is_seeded(self):
        """Test the same generator state gives the same draws."""
        noise = NoiseModel(1.5)
        first = noise.sample(np.random.default_rng(1), 5)
        second = noise.sample(np.random.default_rng(1), 5)
        np.testing.assert_array_equal(first, second)


@pytest.mark.unit
class TestObservationAndTrajectory:
    """Test cases for CensoredObservation and SignalTrajectory."""

    def test_double_censoring_is_rejected(self):
        """Test an observation cannot carry both flags."""
        with pytest.raises(ConfigError):
            CensoredObservation(y=0.0, delta=1, delta_bar=1)

    def test_stream_labels_steps_with_the_schedule(self):
        """Test the stream yields each regressor with its step thresholds and flags."""
        schedule = ThresholdSchedule([Thresholds(0.0, 1.0, 0.0, 1.0), Thresholds(0.0, 2.0, 0.0, 2.0)])
        traj = SignalTrajectory(np.eye(3), np.array([[1.0], [0.5], [1.0]]))
        items = list(traj.stream(schedule, start=1))
        assert len(items) == 2
        phi, obs, th = items[0]
        np.testing.assert_array_equal(phi, [0.0, 1.0, 0.0])
        assert th.u == 2.0
        assert int(obs.delta_bar[0]) == 0
        assert int(items[1][1].delta_bar[0]) == 1

    def test_column_view(self):
        """Test column j keeps the shared regressors and one output."""
        traj = SignalTrajectory(np.ones((4, 2)), np.arange(8.0).reshape(4, 2))
        col = traj.column(1)
        assert (col.n, col.m, col.p) == (4, 2, 1)
        np.testing.assert_array_equal(col.ys[:, 0], [1.0, 3.0, 5.0, 7.0])

    def test_mismatched_lengths_are_rejected(self):
        """Test regressors and outputs must have the same number of steps."""
        with pytest.raises(ConfigError):
            SignalTrajectory(np.ones((4, 2)), np.ones((3, 1)))
