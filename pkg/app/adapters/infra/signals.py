"""Regressor generators: closed-loop feedback system, i.i.d. bounded and deterministic signals."""
import math

import numpy as np

from ...domain.censoring import NoiseModel, ThresholdSchedule
from ...domain.kernel import apply_schedule, saturate
from ...domain.trajectory import SignalTrajectory
from ...errors import ConfigError

KIND_FEEDBACK = "feedback-dynamical"
KIND_IID = "iid-bounded"
KIND_DETERMINISTIC = "deterministic-sequence"

DEFAULT_AMPLITUDE = 1.0


def _saturate_steps(latent: np.ndarray, schedule: ThresholdSchedule, start: int = 0) -> np.ndarray:
    return apply_schedule(lambda x, th, _noise: saturate(x, th), latent, schedule, None, start)


def _observe_columns(phis, theta, schedule, noise, rng) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    latent = phis @ theta + noise.sample(rng, (phis.shape[0], theta.shape[1]))
    return _saturate_steps(latent, schedule)


class FeedbackSignalGenerator:
    """phi_{k+1} = S_k(Theta^T phi_k + v_{k+1}) with phi_0 = 0; the output is the next state."""

    kind = KIND_FEEDBACK

    def signal_bound(self, m: int, schedule: ThresholdSchedule) -> float:
        return schedule.level_bound() * math.sqrt(m)

    def generate(self, theta, n, schedule, noise: NoiseModel, rng) -> SignalTrajectory:
        theta = np.asarray(theta, dtype=float)
        m, p = theta.shape
        if m != p:
            raise ConfigError(f"the feedback system needs a square parameter matrix, got {theta.shape}")
        noise_draws = noise.sample(rng, (n, m))
        states = np.zeros((n + 1, m))
        for k in range(n):
            states[k + 1] = saturate(theta.T @ states[k] + noise_draws[k], schedule.at(k))
        return SignalTrajectory(states[:-1], states[1:])


class IidBoundedSignalGenerator:
    """phi_k uniform on [-amplitude, amplitude]^m, last coordinate fixed to intercept when set."""

    kind = KIND_IID

    def __init__(self, amplitude: float = DEFAULT_AMPLITUDE, intercept=None):
        if not amplitude > 0:
            raise ConfigError(f"signal amplitude must be positive, got {amplitude}")
        self.amplitude = amplitude
        self.intercept = intercept

    def signal_bound(self, m: int, schedule: ThresholdSchedule) -> float:
        if self.intercept is None:
            return self.amplitude * math.sqrt(m)
        return math.sqrt((m - 1) * self.amplitude**2 + self.intercept**2)

    def regressors(self, n: int, m: int, rng) -> np.ndarray:
        phis = rng.uniform(-self.amplitude, self.amplitude, size=(n, m))
        if self.intercept is not None:
            phis[:, -1] = self.intercept
        return phis

    def generate(self, theta, n, schedule, noise: NoiseModel, rng) -> SignalTrajectory:
        theta = np.asarray(theta, dtype=float)
        phis = self.regressors(n, theta.shape[0], rng)
        return SignalTrajectory(phis, _observe_columns(phis, theta, schedule, noise, rng))


class DeterministicSignalGenerator:
    """Cosine bank phi_k^(i) = amplitude cos(w_i k), w_i = pi (i + 1) / (m + 2).

    The regressors ignore the random generator, so every replication sees the
    same sequence and only the noise differs.
    """

    kind = KIND_DETERMINISTIC

    def __init__(self, amplitude: float = DEFAULT_AMPLITUDE, intercept=None):
        if not amplitude > 0:
            raise ConfigError(f"signal amplitude must be positive, got {amplitude}")
        self.amplitude = amplitude
        self.intercept = intercept

    def signal_bound(self, m: int, schedule: ThresholdSchedule) -> float:
        if self.intercept is None:
            return self.amplitude * math.sqrt(m)
        return math.sqrt((m - 1) * self.amplitude**2 + self.intercept**2)

    def regressors(self, n: int, m: int) -> np.ndarray:
        omega = math.pi * (np.arange(m) + 1.0) / (m + 2.0)
        phis = self.amplitude * np.cos(np.outer(np.arange(n), omega))
        if self.intercept is not None:
            phis[:, -1] = self.intercept
        return phis

    def generate(self, theta, n, schedule, noise: NoiseModel, rng) -> SignalTrajectory:
        theta = np.asarray(theta, dtype=float)
        phis = self.regressors(n, theta.shape[0])
        return SignalTrajectory(phis, _observe_columns(phis, theta, schedule, noise, rng))
