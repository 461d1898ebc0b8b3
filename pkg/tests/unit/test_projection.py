"""Unit tests for the weighted-norm ball projection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from app.domain.projection import (
    WeightedNorm,
    multiplier_for,
    project,
    project_euclidean,
    project_with_gain,
)
from app.errors import ConfigError, MatrixConditioningError

DIAG_WEIGHT = np.diag([1.0, 4.0])
POINT_OUTSIDE = np.array([2.0, 2.0])


def _random_spd(rng, m):
    B = rng.normal(size=(m, m))
    return B @ B.T + 0.1 * np.eye(m)


def _weighted_distance(A, x, y):
    d = x - y
    return float(d @ A @ d)


@pytest.mark.unit
class TestProject:
    """Test cases for project."""

    def test_inside_point_is_returned_unchanged(self):
        """Test a feasible point is an exact fixed point."""
        x = np.array([0.3, -0.2])
        np.testing.assert_array_equal(project(x, WeightedNorm(DIAG_WEIGHT, 1.0)), x)

    def test_identity_weight_is_radial_scaling(self):
        """Test the Euclidean case reduces to x * radius / ||x||."""
        x = np.array([3.0, 4.0])
        np.testing.assert_allclose(project(x, WeightedNorm(np.eye(2), 1.0)), [0.6, 0.8], atol=1e-12)

    def test_diagonal_weight_matches_grid_minimiser(self):
        """Test the projection of (2, 2) under diag(1, 4) against a dense boundary scan."""
        y = project(POINT_OUTSIDE, WeightedNorm(DIAG_WEIGHT, 1.0))
        assert np.linalg.norm(y) == pytest.approx(1.0, abs=1e-12)
        angles = np.linspace(0.0, 2 * np.pi, 200_001)
        boundary = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        d = boundary - POINT_OUTSIDE
        costs = np.einsum("ki,ij,kj->k", d, DIAG_WEIGHT, d)
        best = boundary[np.argmin(costs)]
        np.testing.assert_allclose(y, best, atol=1e-4)
        assert _weighted_distance(DIAG_WEIGHT, POINT_OUTSIDE, y) <= np.min(costs) + 1e-9

    def test_kkt_condition_holds(self):
        """Test (A + mu I) y = A x with the reported multiplier."""
        norm = WeightedNorm(DIAG_WEIGHT, 1.0)
        y = project(POINT_OUTSIDE, norm)
        mu = multiplier_for(POINT_OUTSIDE, norm)
        assert mu > 0
        np.testing.assert_allclose((DIAG_WEIGHT + mu * np.eye(2)) @ y, DIAG_WEIGHT @ POINT_OUTSIDE, atol=1e-10)

    def test_multiplier_is_zero_inside(self):
        """Test no multiplier is needed for a feasible point."""
        assert multiplier_for(np.array([0.1, 0.1]), WeightedNorm(DIAG_WEIGHT, 1.0)) == 0.0

    def test_batched_points(self, rng):
        """Test a batch of points and weights equals per-item projection."""
        A = np.stack([_random_spd(rng, 3) for _ in range(4)])
        x = rng.normal(scale=3.0, size=(4, 3))
        batched = project(x, WeightedNorm(A, 1.5))
        for i in range(4):
            np.testing.assert_allclose(batched[i], project(x[i], WeightedNorm(A[i], 1.5)), atol=1e-10)

    def test_non_spd_weight_is_rejected(self):
        """Test an indefinite weight raises MatrixConditioningError."""
        with pytest.raises(MatrixConditioningError):
            project(POINT_OUTSIDE, WeightedNorm(np.diag([1.0, -1.0]), 1.0))

    def test_invalid_norm_construction(self):
        """Test non-square weights and non-positive radii are configuration errors."""
        with pytest.raises(ConfigError):
            WeightedNorm(np.ones((2, 3)), 1.0)
        with pytest.raises(ConfigError):
            WeightedNorm(np.eye(2), 0.0)

    @given(
        arrays(np.float64, 3, elements=st.floats(-20, 20)),
        arrays(np.float64, 3, elements=st.floats(-20, 20)),
        st.integers(0, 2**31 - 1),
    )
    @settings(max_examples=100, deadline=None)
    def test_non_expansive_in_weighted_norm(self, x1, x2, seed):
        """Test ||P(x1) - P(x2)||_A <= ||x1 - x2||_A."""
        A = _random_spd(np.random.default_rng(seed), 3)
        norm = WeightedNorm(A, 2.0)
        y1, y2 = project(x1, norm), project(x2, norm)
        assert np.linalg.norm(y1) <= 2.0 * (1 + 1e-12)
        assert norm.norm(y1 - y2) <= norm.norm(x1 - x2) * (1 + 1e-9) + 1e-8

    @given(arrays(np.float64, 3, elements=st.floats(-20, 20)), st.integers(0, 2**31 - 1))
    @settings(max_examples=100, deadline=None)
    def test_projection_beats_feasible_points(self, x, seed):
        """Test the projection is no farther than random feasible points in the weighted norm."""
        rng = np.random.default_rng(seed)
        A = _random_spd(rng, 3)
        y = project(x, WeightedNorm(A, 1.0))
        candidates = rng.normal(size=(50, 3))
        candidates /= np.maximum(1.0, np.linalg.norm(candidates, axis=1))[:, None]
        best = _weighted_distance(A, x, y)
        for c in candidates:
            assert best <= _weighted_distance(A, x, c) * (1 + 1e-9) + 1e-10


@pytest.mark.unit
class TestProjectWithGain:
    """Test cases for project_with_gain and project_euclidean."""

    def test_matches_explicit_inverse(self, rng):
        """Test projecting with P equals projecting in the norm weighted by inv(P)."""
        P = _random_spd(rng, 4)
        x = rng.normal(scale=4.0, size=4)
        expected = project(x, WeightedNorm(np.linalg.inv(P), 1.0))
        np.testing.assert_allclose(project_with_gain(x, P, 1.0), expected, atol=1e-9)

    def test_shared_gain_broadcasts_over_batch(self, rng):
        """Test one gain matrix serves a batch of points."""
        P = _random_spd(rng, 3)
        x = rng.normal(scale=4.0, size=(5, 3))
        out = project_with_gain(x, P, 1.0)
        for i in range(5):
            np.testing.assert_allclose(out[i], project_with_gain(x[i], P, 1.0), atol=1e-10)

    def test_euclidean_radial_scaling(self):
        """Test the Euclidean projection shrinks radially and leaves feasible rows alone."""
        x = np.array([[3.0, 4.0], [0.1, 0.2]])
        np.testing.assert_allclose(project_euclidean(x, 1.0), [[0.6, 0.8], [0.1, 0.2]], atol=1e-15)
